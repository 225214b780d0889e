//! Numerical solution of the condensed ergodic Bellman equation
//!
//! ```text
//! Lambda = |rho|^2/2 phi'' + rho_hat^2/2 phi'^2 + inf_eta { n(eta, y) + phi' m_ebe(eta, y) }
//! ```
//!
//! by explicit time marching of `w_t = |rho|^2/2 w_yy + rho_hat^2/2 w_y^2 + inf_eta {..}`
//! from `w(., 0) = const`. The growth rate is the long-time slope of `w` at the
//! reference node and `phi` is `w` minus its value there.
//!
//! The squared gradient is discretized as the mean of the squared one-sided
//! differences, `phi_y` and `phi_yy` by central differences. Boundary nodes use
//! second-order one-sided first derivatives and a second difference extrapolated
//! linearly from the interior.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::{fit_drift_condition, AmbiguityBox, DriftFit, Eta, ReferenceModel, RiskAversion};
use crate::{EbeSolution, Error, Result};

/// Uniform grid on `[y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    y_min: f64,
    y_max: f64,
    n_points: usize,
}

impl Grid {
    pub fn new(y_min: f64, y_max: f64, n_points: usize) -> Result<Self> {
        if !(y_min < 0.0 && 0.0 < y_max) || !y_min.is_finite() || !y_max.is_finite() {
            return Err(Error::invalid("grid", "need y_min < 0 < y_max"));
        }
        if n_points < 33 {
            return Err(Error::invalid("grid", "need at least 33 points"));
        }
        Ok(Grid {
            y_min,
            y_max,
            n_points,
        })
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        (self.y_max - self.y_min) / (self.n_points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.y_max
        } else {
            self.y_min + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }

    /// Index of the node nearest to 0.
    pub fn ref_index(&self) -> usize {
        let i = libm::round(-self.y_min / self.spacing()) as usize;
        i.min(self.n_points - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Time step; defaults to `0.4 h^2 / |rho|^2`.
    pub dt: Option<f64>,
    pub t_max: f64,
    /// Tolerance on the change of the growth-rate estimate between checks and
    /// on the sup-norm of the stationary residual.
    pub tol: f64,
    /// Time between convergence checks.
    pub check_every: f64,
    /// Constant initial condition `w(., 0)`.
    pub initial_value: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            dt: None,
            t_max: 200.0,
            tol: 1e-8,
            check_every: 1.0,
            initial_value: 0.0,
        }
    }
}

/// Maximal ratio `dt / (h^2 / |rho|^2)` for the diffusive part.
pub const DIFFUSIVE_CFL: f64 = 0.4;
/// Safety factor of the advective bound `dt v^2 <= 2 D`.
const ADVECTIVE_CFL: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct EbeNumericalSolution {
    pub grid: Grid,
    pub growth_rate: f64,
    pub phi_values: Vec<f64>,
    pub phi_y_values: Vec<f64>,
    pub eta_star_values: Vec<Eta>,
    pub pi_star_values: Vec<f64>,
    pub nu_star_values: Vec<f64>,
    pub residual_sup: f64,
    pub converged: bool,
    pub iterations: usize,
    pub dt: f64,
    pub drift_fit: DriftFit,
}

/// Coefficients at one node that do not depend on the solution.
#[derive(Debug, Clone, Copy)]
struct NodeCoefs {
    y: f64,
    theta: f64,
    r: f64,
    g: f64,
}

impl NodeCoefs {
    fn at(model: &ReferenceModel, y: f64) -> Self {
        NodeCoefs {
            y,
            theta: model.market_price_of_risk(y),
            r: model.r(y),
            g: model.g(y),
        }
    }
}

/// Constants shared by all nodes for fixed `(model, lambda)`.
#[derive(Debug, Clone, Copy)]
struct Consts {
    lam: f64,
    rho1: f64,
    rho2: f64,
    rho_hat_sq: f64,
    diffusion: f64,
}

impl Consts {
    fn new(model: &ReferenceModel, lam: RiskAversion) -> Self {
        let rh = model.rho_hat(lam);
        let [rho1, rho2] = model.rho();
        Consts {
            lam: lam.lambda(),
            rho1,
            rho2,
            rho_hat_sq: rh * rh,
            diffusion: 0.5 * model.rho_norm_sq(),
        }
    }
}

/// `(eta, n + phi_y m_ebe, m_ebe)` at the minimizing box point.
#[inline]
fn minimize_at(k: &Consts, c: &NodeCoefs, phi_y: f64, b: &AmbiguityBox) -> (Eta, f64, f64) {
    let l = k.lam;
    let y = c.y;
    // Quadratic part in u = e11 y + e21.
    let vertex = if l > 0.0 { -c.theta - k.rho1 * phi_y / l } else { 0.0 };
    let (p_lo, p_hi) = if y >= 0.0 {
        (b.e11.lo * y, b.e11.hi * y)
    } else {
        (b.e11.hi * y, b.e11.lo * y)
    };
    let u = vertex.clamp(p_lo + b.e21.lo, p_hi + b.e21.hi);
    // Back-solve with e21 as close to 0 as the split allows.
    let e21 = 0.0_f64.max(b.e21.lo.max(u - p_hi)).min(b.e21.hi.min(u - p_lo));
    let e21 = b.e21.clamp(e21);
    let e11 = if y != 0.0 {
        b.e11.clamp((u - e21) / y)
    } else {
        b.e11.clamp(0.0)
    };
    // Linear part in (e12, e22).
    let pick = |iv: &crate::model::Interval, coef: f64| {
        if coef > 0.0 {
            iv.lo
        } else if coef < 0.0 {
            iv.hi
        } else {
            iv.clamp(0.0)
        }
    };
    let lin = k.rho2 * phi_y;
    let e12 = pick(&b.e12, lin * y);
    let e22 = pick(&b.e22, lin);
    let eta = Eta { e11, e12, e21, e22 };
    let s1 = eta.shift1(y);
    let a = c.theta + s1;
    let n = 0.5 * l / (1.0 - l) * a * a + l * c.r;
    let m = c.g + k.rho1 / (1.0 - l) * (l * c.theta + s1) + k.rho2 * eta.shift2(y);
    (eta, n + phi_y * m, m)
}

/// Exact minimizer of `n(eta, y) + phi_y m_ebe(eta, y)` over the box and the
/// minimal value.
pub fn inner_minimize(
    model: &ReferenceModel,
    lam: RiskAversion,
    phi_y: f64,
    y: f64,
    ambiguity: &AmbiguityBox,
) -> (Eta, f64) {
    let (eta, value, _) = minimize_at(
        &Consts::new(model, lam),
        &NodeCoefs::at(model, y),
        phi_y,
        ambiguity,
    );
    (eta, value)
}

/// Discrete spatial operator: `F_i` such that `w_t = F`.
struct Operator<'a> {
    k: Consts,
    coefs: Vec<NodeCoefs>,
    ambiguity: &'a AmbiguityBox,
    h: f64,
}

struct Evaluation {
    rhs: Vec<f64>,
    phi_y: Vec<f64>,
    eta: Vec<Eta>,
    max_speed: f64,
}

impl<'a> Operator<'a> {
    fn new(model: &ReferenceModel, lam: RiskAversion, ambiguity: &'a AmbiguityBox, grid: &Grid) -> Self {
        Operator {
            k: Consts::new(model, lam),
            coefs: grid.nodes().into_iter().map(|y| NodeCoefs::at(model, y)).collect(),
            ambiguity,
            h: grid.spacing(),
        }
    }

    fn derivatives(&self, w: &[f64], i: usize) -> (f64, f64, f64) {
        let n = w.len();
        let h = self.h;
        let second = |j: usize| (w[j + 1] - 2.0 * w[j] + w[j - 1]) / (h * h);
        if i == 0 {
            let wy = (-3.0 * w[0] + 4.0 * w[1] - w[2]) / (2.0 * h);
            (wy, 3.0 * second(2) - 2.0 * second(3), wy * wy)
        } else if i == n - 1 {
            let wy = (3.0 * w[n - 1] - 4.0 * w[n - 2] + w[n - 3]) / (2.0 * h);
            (wy, 3.0 * second(n - 3) - 2.0 * second(n - 4), wy * wy)
        } else {
            let fwd = (w[i + 1] - w[i]) / h;
            let bwd = (w[i] - w[i - 1]) / h;
            (0.5 * (fwd + bwd), (fwd - bwd) / h, 0.5 * (fwd * fwd + bwd * bwd))
        }
    }

    fn eval(&self, w: &[f64], out: &mut Evaluation) {
        let mut max_speed = 0.0_f64;
        for i in 0..w.len() {
            let (wy, wyy, grad_sq) = self.derivatives(w, i);
            let (eta, value, m) = minimize_at(&self.k, &self.coefs[i], wy, self.ambiguity);
            out.rhs[i] = self.k.diffusion * wyy + 0.5 * self.k.rho_hat_sq * grad_sq + value;
            out.phi_y[i] = wy;
            out.eta[i] = eta;
            max_speed = max_speed.max((self.k.rho_hat_sq * wy + m).abs());
        }
        out.max_speed = max_speed;
    }

    fn evaluation(&self, n: usize) -> Evaluation {
        Evaluation {
            rhs: vec![0.0; n],
            phi_y: vec![0.0; n],
            eta: vec![Eta::ZERO; n],
            max_speed: 0.0,
        }
    }
}

/// Sup-norm over interior nodes of `Lambda - F[phi]`, with `F` the discrete
/// right-hand side used by the solver.
pub fn ebe_residual(
    model: &ReferenceModel,
    lam: RiskAversion,
    ambiguity: &AmbiguityBox,
    grid: &Grid,
    growth_rate: f64,
    phi_values: &[f64],
) -> Result<f64> {
    if phi_values.len() != grid.n_points() {
        return Err(Error::invalid("phi_values", "one value per grid node required"));
    }
    let op = Operator::new(model, lam, ambiguity, grid);
    let mut ev = op.evaluation(phi_values.len());
    op.eval(phi_values, &mut ev);
    Ok(interior_sup(&ev.rhs, growth_rate))
}

fn interior_sup(rhs: &[f64], growth_rate: f64) -> f64 {
    rhs[1..rhs.len() - 1]
        .iter()
        .map(|f| (growth_rate - f).abs())
        .fold(0.0, f64::max)
}

/// Drift condition `y kappa <= -C y^2 + C'` for both `kappa` and `kappa~`,
/// checked at every node over the box corners and the feedback point.
pub fn check_ergodic_branch(
    model: &ReferenceModel,
    lam: RiskAversion,
    ambiguity: &AmbiguityBox,
    ys: &[f64],
    phi_y: impl Fn(f64) -> f64,
    eta_star: impl Fn(f64) -> Eta,
) -> Result<DriftFit> {
    let corners = ambiguity.corners();
    let mut kappa = Vec::with_capacity(ys.len() * 17);
    let mut kappa_tilde = Vec::with_capacity(ys.len() * 17);
    for &y in ys {
        let py = phi_y(y);
        let es = eta_star(y);
        for eta in corners.iter().chain(core::iter::once(&es)) {
            kappa.push((y, model.ergodic_drift_kappa(lam, py, eta, y)));
            kappa_tilde.push((y, model.ergodic_drift_kappa_tilde(lam, py, &es, eta, y)));
        }
    }
    let to_branch = |e: Error| match e {
        Error::DriftConditionViolated { c } => Error::NonErgodicBranch { c },
        other => other,
    };
    let a = fit_drift_condition(&kappa).map_err(to_branch)?;
    let b = fit_drift_condition(&kappa_tilde).map_err(to_branch)?;
    Ok(DriftFit {
        c: a.c.min(b.c),
        c_prime: a.c_prime.max(b.c_prime),
    })
}

/// Largest admissible time step for the diffusive part.
pub fn max_stable_dt(model: &ReferenceModel, grid: &Grid) -> f64 {
    let h = grid.spacing();
    DIFFUSIVE_CFL * h * h / model.rho_norm_sq()
}

/// Solves by time marching. Without an explicit `dt` the step starts at the
/// diffusive bound, is reduced to the advective bound of the initial state and
/// is halved whenever the advective bound is violated later on; an explicit
/// `dt` is used as given.
pub fn solve_ebe(
    model: &ReferenceModel,
    lam: RiskAversion,
    ambiguity: &AmbiguityBox,
    grid: &Grid,
    opts: &SolverOptions,
) -> Result<EbeNumericalSolution> {
    let limit = max_stable_dt(model, grid);
    if let Some(dt) = opts.dt {
        if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, limit });
        }
        return march(model, lam, ambiguity, grid, opts, dt);
    }
    let op = Operator::new(model, lam, ambiguity, grid);
    let mut ev = op.evaluation(grid.n_points());
    op.eval(&vec![opts.initial_value; grid.n_points()], &mut ev);
    let mut dt = limit;
    if ev.max_speed > 0.0 {
        dt = dt.min(0.5 * ADVECTIVE_CFL * 2.0 * op.k.diffusion / (ev.max_speed * ev.max_speed));
    }
    for _ in 0..MAX_HALVINGS {
        match march(model, lam, ambiguity, grid, opts, dt) {
            Err(Error::CflViolation { limit, .. }) => dt = dt.min(limit) * 0.5,
            other => return other,
        }
    }
    march(model, lam, ambiguity, grid, opts, dt)
}

const MAX_HALVINGS: usize = 12;

fn march(
    model: &ReferenceModel,
    lam: RiskAversion,
    ambiguity: &AmbiguityBox,
    grid: &Grid,
    opts: &SolverOptions,
    dt: f64,
) -> Result<EbeNumericalSolution> {
    if !(opts.t_max > 0.0 && opts.check_every > 0.0 && opts.tol > 0.0) {
        return Err(Error::invalid("solver options", "t_max, check_every and tol must be positive"));
    }
    let n = grid.n_points();
    let iref = grid.ref_index();
    let op = Operator::new(model, lam, ambiguity, grid);
    let mut ev = op.evaluation(n);
    let mut w = vec![opts.initial_value; n];
    let steps_per_check = libm::ceil(opts.check_every / dt).max(1.0) as usize;
    let interval = steps_per_check as f64 * dt;
    let max_checks = libm::ceil(opts.t_max / interval) as usize;
    let speed_limit = ADVECTIVE_CFL * 2.0 * op.k.diffusion;

    let mut previous: Option<f64> = None;
    let mut last_change = f64::INFINITY;
    let mut residual = f64::INFINITY;
    let mut iterations = 0usize;
    let mut base = w[iref];
    for _ in 0..max_checks {
        for _ in 0..steps_per_check {
            op.eval(&w, &mut ev);
            if dt * ev.max_speed * ev.max_speed > speed_limit {
                return Err(Error::CflViolation {
                    dt,
                    limit: speed_limit / (ev.max_speed * ev.max_speed),
                });
            }
            for (wi, fi) in w.iter_mut().zip(&ev.rhs) {
                *wi += dt * fi;
            }
            iterations += 1;
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotConverged {
                t_max: iterations as f64 * dt,
                last_change: f64::NAN,
                residual: f64::NAN,
            });
        }
        let estimate = (w[iref] - base) / interval;
        let shift = w[iref];
        for wi in w.iter_mut() {
            *wi -= shift;
        }
        base = 0.0;
        op.eval(&w, &mut ev);
        residual = interior_sup(&ev.rhs, estimate);
        if let Some(prev) = previous {
            last_change = (estimate - prev).abs();
        }
        previous = Some(estimate);
        if last_change < opts.tol && residual < opts.tol {
            return finish(model, lam, ambiguity, grid, &op, w, estimate, residual, iterations, dt);
        }
    }
    Err(Error::NotConverged {
        t_max: iterations as f64 * dt,
        last_change,
        residual,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    model: &ReferenceModel,
    lam: RiskAversion,
    ambiguity: &AmbiguityBox,
    grid: &Grid,
    op: &Operator<'_>,
    phi: Vec<f64>,
    growth_rate: f64,
    residual: f64,
    iterations: usize,
    dt: f64,
) -> Result<EbeNumericalSolution> {
    let mut ev = op.evaluation(phi.len());
    op.eval(&phi, &mut ev);
    let ys = grid.nodes();
    let pi: Vec<f64> = ys
        .iter()
        .zip(ev.phi_y.iter().zip(&ev.eta))
        .map(|(&y, (&py, eta))| model.pi_star(lam, py, eta, y))
        .collect();
    let nu: Vec<f64> = ys
        .iter()
        .zip(ev.phi_y.iter().zip(&ev.eta))
        .map(|(&y, (&py, eta))| model.nu_star(eta, py, y))
        .collect();
    let fit = check_ergodic_branch(
        model,
        lam,
        ambiguity,
        &ys,
        |y| interpolate(&ys, &ev.phi_y, y),
        |y| ev.eta[nearest(&ys, y)],
    )?;
    Ok(EbeNumericalSolution {
        grid: *grid,
        growth_rate,
        phi_values: phi,
        phi_y_values: ev.phi_y,
        eta_star_values: ev.eta,
        pi_star_values: pi,
        nu_star_values: nu,
        residual_sup: residual,
        converged: true,
        iterations,
        dt,
        drift_fit: fit,
    })
}

fn nearest(ys: &[f64], y: f64) -> usize {
    let n = ys.len();
    let h = (ys[n - 1] - ys[0]) / (n - 1) as f64;
    let i = libm::round((y - ys[0]) / h);
    if i <= 0.0 {
        0
    } else {
        (i as usize).min(n - 1)
    }
}

/// Linear interpolation on a uniform grid, extrapolating the end segments.
fn interpolate(ys: &[f64], vs: &[f64], y: f64) -> f64 {
    let n = ys.len();
    let h = (ys[n - 1] - ys[0]) / (n - 1) as f64;
    let s = (y - ys[0]) / h;
    let i = if s <= 0.0 {
        0
    } else {
        (libm::floor(s) as usize).min(n - 2)
    };
    let frac = s - i as f64;
    vs[i] + frac * (vs[i + 1] - vs[i])
}

impl EbeNumericalSolution {
    pub fn nodes(&self) -> Vec<f64> {
        self.grid.nodes()
    }
}

impl EbeSolution for EbeNumericalSolution {
    fn growth_rate(&self) -> f64 {
        self.growth_rate
    }

    fn phi(&self, y: f64) -> f64 {
        interpolate(&self.nodes(), &self.phi_values, y)
    }

    fn phi_y(&self, y: f64) -> f64 {
        interpolate(&self.nodes(), &self.phi_y_values, y)
    }

    /// Box point at the nearest node (the minimizer may jump across nodes).
    fn eta_star(&self, y: f64) -> Eta {
        self.eta_star_values[nearest(&self.nodes(), y)]
    }

    fn pi_star(&self, y: f64) -> f64 {
        interpolate(&self.nodes(), &self.pi_star_values, y)
    }

    fn nu_star(&self, y: f64) -> f64 {
        interpolate(&self.nodes(), &self.nu_star_values, y)
    }
}
