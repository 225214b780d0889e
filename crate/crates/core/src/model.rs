//! Reference model, ambiguity box and the pointwise functions of the primal
//! and dual control problems.
//!
//! Under the reference measure the factor `Y` and the risky asset follow
//!
//! ```text
//! dY = g(Y) dt + rho_1 dW1 + rho_2 dW2
//! dS = S (m(Y) dt + sigma dW1),   bond rate r(Y)
//! ```
//!
//! and a perturbation `eta = (e11, e12, e21, e22)` from the [`AmbiguityBox`]
//! shifts the Brownian drifts by `(e11 y + e21, e12 y + e22)`.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A scalar coefficient function of the factor level.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Affine { slope: f64, intercept: f64 },
    /// Piecewise linear through the nodes, linearly extrapolated from the
    /// two end segments.
    Tabulated(Table),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    ys: Vec<f64>,
    values: Vec<f64>,
}

impl Table {
    pub fn new(ys: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if ys.len() < 2 || ys.len() != values.len() {
            return Err(Error::invalid(
                "table",
                "need at least two nodes and one value per node",
            ));
        }
        if ys.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("table", "non-finite entry"));
        }
        if ys.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("table", "nodes must be strictly increasing"));
        }
        Ok(Table { ys, values })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.ys
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, y: f64) -> f64 {
        let n = self.ys.len();
        let i = self.ys.partition_point(|&node| node <= y).clamp(1, n - 1);
        let (y0, y1) = (self.ys[i - 1], self.ys[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (y - y0) / (y1 - y0)
    }

    fn end_slopes(&self) -> (f64, f64) {
        let n = self.ys.len();
        let left = (self.values[1] - self.values[0]) / (self.ys[1] - self.ys[0]);
        let right =
            (self.values[n - 1] - self.values[n - 2]) / (self.ys[n - 1] - self.ys[n - 2]);
        (left, right)
    }
}

impl Coefficient {
    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Affine { slope, intercept } => slope * y + intercept,
            Coefficient::Tabulated(t) => t.eval(y),
        }
    }

    /// Slopes of the function as `y -> -inf` and `y -> +inf`.
    pub fn tail_slopes(&self) -> (f64, f64) {
        match self {
            Coefficient::Constant(_) => (0.0, 0.0),
            Coefficient::Affine { slope, .. } => (*slope, *slope),
            Coefficient::Tabulated(t) => t.end_slopes(),
        }
    }

    pub fn knots(&self) -> &[f64] {
        match self {
            Coefficient::Tabulated(t) => t.nodes(),
            _ => &[],
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Coefficient::Constant(c) => c.is_finite(),
            Coefficient::Affine { slope, intercept } => slope.is_finite() && intercept.is_finite(),
            Coefficient::Tabulated(_) => true,
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("interval", "bounds must be finite"));
        }
        if lo > hi {
            return Err(Error::invalid(
                "interval",
                format!("lower bound {lo} exceeds upper bound {hi}"),
            ));
        }
        Ok(Interval { lo, hi })
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// A drift perturbation `(e11, e12, e21, e22)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Eta {
    pub e11: f64,
    pub e12: f64,
    pub e21: f64,
    pub e22: f64,
}

impl Eta {
    pub const ZERO: Eta = Eta {
        e11: 0.0,
        e12: 0.0,
        e21: 0.0,
        e22: 0.0,
    };

    pub fn new(e11: f64, e12: f64, e21: f64, e22: f64) -> Self {
        Eta { e11, e12, e21, e22 }
    }

    /// Shift of the first Brownian drift, `e11 y + e21`.
    #[inline]
    pub fn shift1(&self, y: f64) -> f64 {
        self.e11 * y + self.e21
    }

    /// Shift of the second Brownian drift, `e12 y + e22`.
    #[inline]
    pub fn shift2(&self, y: f64) -> f64 {
        self.e12 * y + self.e22
    }
}

/// Axis-aligned compact box of admissible perturbations, containing the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbiguityBox {
    pub e11: Interval,
    pub e12: Interval,
    pub e21: Interval,
    pub e22: Interval,
}

impl AmbiguityBox {
    pub fn new(e11: Interval, e12: Interval, e21: Interval, e22: Interval) -> Result<Self> {
        let b = AmbiguityBox { e11, e12, e21, e22 };
        for (name, iv) in [("e11", e11), ("e12", e12), ("e21", e21), ("e22", e22)] {
            if !(iv.lo <= iv.hi) || !iv.lo.is_finite() || !iv.hi.is_finite() {
                return Err(Error::invalid("ambiguity box", format!("{name} is not a bounded interval")));
            }
            if !iv.contains(0.0) {
                return Err(Error::invalid(
                    "ambiguity box",
                    format!("{name} interval [{}, {}] does not contain 0", iv.lo, iv.hi),
                ));
            }
        }
        Ok(b)
    }

    /// The one-point box `{0}`: no ambiguity.
    pub const fn singleton() -> Self {
        AmbiguityBox {
            e11: Interval::point(0.0),
            e12: Interval::point(0.0),
            e21: Interval::point(0.0),
            e22: Interval::point(0.0),
        }
    }

    /// Ambiguity on the risky drift only: `{0} x {0} x [lo, hi] x {0}`.
    pub fn drift_only(lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            Interval::point(0.0),
            Interval::point(0.0),
            Interval::new(lo, hi)?,
            Interval::point(0.0),
        )
    }

    /// Ambiguity on the factor mean reversion only: `[lo, hi] x {0}^3`.
    pub fn mean_reversion_only(lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            Interval::new(lo, hi)?,
            Interval::point(0.0),
            Interval::point(0.0),
            Interval::point(0.0),
        )
    }

    pub fn contains(&self, eta: &Eta) -> bool {
        self.e11.contains(eta.e11)
            && self.e12.contains(eta.e12)
            && self.e21.contains(eta.e21)
            && self.e22.contains(eta.e22)
    }

    pub fn is_singleton(&self) -> bool {
        [self.e11, self.e12, self.e21, self.e22]
            .iter()
            .all(|iv| iv.width() == 0.0)
    }

    /// The 16 corners (with repetitions for degenerate intervals).
    pub fn corners(&self) -> [Eta; 16] {
        let mut out = [Eta::ZERO; 16];
        for (k, slot) in out.iter_mut().enumerate() {
            let pick = |iv: &Interval, bit: usize| if k >> bit & 1 == 0 { iv.lo } else { iv.hi };
            *slot = Eta {
                e11: pick(&self.e11, 0),
                e12: pick(&self.e12, 1),
                e21: pick(&self.e21, 2),
                e22: pick(&self.e22, 3),
            };
        }
        out
    }
}

/// Power utility parameter `lambda` in `(0, 1)`, `u(x) = x^lambda / lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskAversion(f64);

impl RiskAversion {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::invalid(
                "lambda",
                format!("{lambda} is outside the open interval (0, 1)"),
            ));
        }
        Ok(RiskAversion(lambda))
    }

    #[inline]
    pub fn lambda(self) -> f64 {
        self.0
    }

    /// Dual exponent `lambda / (lambda - 1)`, always negative.
    pub fn beta(self) -> f64 {
        self.0 / (self.0 - 1.0)
    }
}

/// Dual controls: a box point and the auxiliary `nu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint {
    pub eta: Eta,
    pub nu: f64,
}

/// Constants of the standing assumptions: `r >= a1 > 0` and
/// `|theta(y)| <= a3 |y| + a4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub a1: f64,
    pub a3: f64,
    pub a4: f64,
}

/// `(n, m_ebe, rho_hat)` of the condensed ergodic Bellman equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condensed {
    pub n: f64,
    pub m_ebe: f64,
    pub rho_hat: f64,
}

/// Geometric Ornstein–Uhlenbeck market: `Y` mean reverts to 0 at rate
/// `eta0`, `S = exp(Y + alpha t)`, constant short rate `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    pub eta0: f64,
    pub r: f64,
    pub alpha: f64,
    pub sigma: f64,
}

impl OuParams {
    pub fn new(eta0: f64, r: f64, alpha: f64, sigma: f64) -> Result<Self> {
        if !(eta0 > 0.0) {
            return Err(Error::invalid("eta0", "mean reversion must be positive"));
        }
        if !(sigma > 0.0) {
            return Err(Error::invalid("sigma", "volatility must be positive"));
        }
        if !(r > 0.0) {
            return Err(Error::invalid("r", "short rate must be positive"));
        }
        if !alpha.is_finite() {
            return Err(Error::invalid("alpha", "must be finite"));
        }
        Ok(OuParams {
            eta0,
            r,
            alpha,
            sigma,
        })
    }

    /// `sigma^2 / 2 + alpha - r`, the excess drift of the risky asset at `y = 0`.
    pub fn excess_drift(&self) -> f64 {
        0.5 * self.sigma * self.sigma + self.alpha - self.r
    }

    /// `r + (sigma^2/2 + alpha - r)^2 / (2 sigma^2)`, the `lambda`-linear part
    /// of the growth rate.
    pub fn gamma_const(&self) -> f64 {
        let c0 = self.excess_drift();
        self.r + c0 * c0 / (2.0 * self.sigma * self.sigma)
    }

    pub fn with_mean_reversion(&self, eta0: f64) -> Self {
        OuParams { eta0, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    r: Coefficient,
    m: Coefficient,
    g: Coefficient,
    sigma: f64,
    rho: [f64; 2],
    bounds: Bounds,
}

/// Result of the pointwise assumption checks on a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCheck {
    pub min_r: f64,
    pub max_theta_excess: f64,
    /// Finite-difference bounds on `g_y`, `m_y`, `r_y`, `r_yy`.
    pub max_g_y: f64,
    pub max_m_y: f64,
    pub max_r_y: f64,
    pub max_r_yy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AprioriCondition {
    /// The market price of risk is globally bounded.
    BoundedRisk { theta_sup: f64 },
    /// `-K y + M1 <= g + lambda rho_1 theta / (1 - lambda) <= -K y + M2` with
    /// `2 lambda |rho|^2 a3^2 / (1 - lambda)^2 < K^2`.
    MeanReverting { k: f64, m1: f64, m2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriReport {
    pub k1: f64,
    /// Explicit upper bound, available in the bounded-risk case.
    pub k2: Option<f64>,
    pub condition: AprioriCondition,
}

/// Constants `(c, c_prime)` with `y kappa(y) <= -c y^2 + c_prime` on the samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftFit {
    pub c: f64,
    pub c_prime: f64,
}

impl ReferenceModel {
    pub fn new(
        r: Coefficient,
        m: Coefficient,
        g: Coefficient,
        sigma: f64,
        rho: [f64; 2],
        bounds: Bounds,
    ) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("sigma", "volatility must be positive and finite"));
        }
        if !rho.iter().all(|v| v.is_finite()) || rho[0] == 0.0 && rho[1] == 0.0 {
            return Err(Error::invalid("rho", "factor volatility must be finite and nonzero"));
        }
        if !(r.is_finite() && m.is_finite() && g.is_finite()) {
            return Err(Error::invalid("coefficients", "non-finite coefficient"));
        }
        if r.tail_slopes() != (0.0, 0.0) {
            return Err(Error::invalid("r", "short rate must be bounded (flat tails)"));
        }
        if !(bounds.a1 > 0.0) || !(bounds.a3 >= 0.0) || !(bounds.a4 >= 0.0) {
            return Err(Error::invalid("bounds", "need a1 > 0 and a3, a4 >= 0"));
        }
        let model = ReferenceModel {
            r,
            m,
            g,
            sigma,
            rho,
            bounds,
        };
        // r >= a1 everywhere reduces to the knots (piecewise linear, flat tails).
        let min_r = model.min_r_on(&[]);
        if min_r < bounds.a1 {
            return Err(Error::invalid(
                "a1",
                format!("short rate reaches {min_r}, below a1 = {}", bounds.a1),
            ));
        }
        Ok(model)
    }

    /// Builds the model with `a1 = inf r` and `(a3, a4)` from a least-squares
    /// fit of `|theta|` against `|y|` on `ys`, with `a4` raised so that the
    /// linear-growth bound holds at every sample.
    pub fn with_fitted_bounds(
        r: Coefficient,
        m: Coefficient,
        g: Coefficient,
        sigma: f64,
        rho: [f64; 2],
        ys: &[f64],
    ) -> Result<Self> {
        let mut model = ReferenceModel::new(
            r,
            m,
            g,
            sigma,
            rho,
            Bounds {
                a1: f64::MIN_POSITIVE,
                a3: 0.0,
                a4: 0.0,
            },
        )?;
        let a1 = model.min_r_on(ys);
        if !(a1 > 0.0) {
            return Err(Error::invalid("r", format!("short rate must stay positive, found {a1}")));
        }
        let (a3, a4) = model.fit_theta_growth(ys);
        model.bounds = Bounds { a1, a3, a4 };
        Ok(model)
    }

    /// Constant coefficients. The factor is irrelevant; it is given a unit
    /// mean-reverting dynamics driven by the second Brownian motion only.
    pub fn black_scholes(r: f64, m: f64, sigma: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::invalid("r", "short rate must be positive"));
        }
        let theta = (m - r) / sigma;
        ReferenceModel::new(
            Coefficient::Constant(r),
            Coefficient::Constant(m),
            Coefficient::Affine {
                slope: -1.0,
                intercept: 0.0,
            },
            sigma,
            [0.0, 1.0],
            Bounds {
                a1: r,
                a3: 0.0,
                a4: theta.abs(),
            },
        )
    }

    /// `g(y) = -eta0 y`, `rho = (sigma, 0)`, `m(y) = -eta0 y + sigma^2/2 + alpha`.
    pub fn geometric_ou(p: &OuParams) -> Result<Self> {
        ReferenceModel::new(
            Coefficient::Constant(p.r),
            Coefficient::Affine {
                slope: -p.eta0,
                intercept: 0.5 * p.sigma * p.sigma + p.alpha,
            },
            Coefficient::Affine {
                slope: -p.eta0,
                intercept: 0.0,
            },
            p.sigma,
            [p.sigma, 0.0],
            Bounds {
                a1: p.r,
                a3: p.eta0 / p.sigma,
                a4: p.excess_drift().abs() / p.sigma,
            },
        )
    }

    pub fn r_coef(&self) -> &Coefficient {
        &self.r
    }

    pub fn m_coef(&self) -> &Coefficient {
        &self.m
    }

    pub fn g_coef(&self) -> &Coefficient {
        &self.g
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rho(&self) -> [f64; 2] {
        self.rho
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn rho_norm_sq(&self) -> f64 {
        self.rho[0] * self.rho[0] + self.rho[1] * self.rho[1]
    }

    /// `sqrt(rho_1^2 / (1 - lambda) + rho_2^2)`.
    pub fn rho_hat(&self, lam: RiskAversion) -> f64 {
        let l = lam.lambda();
        libm::sqrt(self.rho[0] * self.rho[0] / (1.0 - l) + self.rho[1] * self.rho[1])
    }

    #[inline]
    pub fn r(&self, y: f64) -> f64 {
        self.r.eval(y)
    }

    #[inline]
    pub fn m(&self, y: f64) -> f64 {
        self.m.eval(y)
    }

    #[inline]
    pub fn g(&self, y: f64) -> f64 {
        self.g.eval(y)
    }

    /// Market price of risk `(m(y) - r(y)) / sigma`.
    #[inline]
    pub fn market_price_of_risk(&self, y: f64) -> f64 {
        (self.m(y) - self.r(y)) / self.sigma
    }

    /// Running cost `l(eta, nu, y)` of the dual problem.
    pub fn dual_cost(&self, lam: RiskAversion, ctrl: &ControlPoint, y: f64) -> f64 {
        let l = lam.lambda();
        let a = self.market_price_of_risk(y) + ctrl.eta.shift1(y);
        let b = ctrl.nu + ctrl.eta.shift2(y);
        0.5 * l / ((1.0 - l) * (1.0 - l)) * (a * a + b * b) + l / (1.0 - l) * self.r(y)
    }

    /// Factor drift `h(eta, nu, y)` of the dual problem.
    pub fn dual_drift(&self, lam: RiskAversion, ctrl: &ControlPoint, y: f64) -> f64 {
        let l = lam.lambda();
        let theta = self.market_price_of_risk(y);
        self.g(y)
            + self.rho[0] / (1.0 - l) * (l * theta + ctrl.eta.shift1(y))
            + self.rho[1] / (1.0 - l) * (l * ctrl.nu + ctrl.eta.shift2(y))
    }

    /// Running reward `l~(pi, eta, y)` of the primal problem; strictly concave in `pi`.
    pub fn primal_reward(&self, lam: RiskAversion, pi: f64, eta: &Eta, y: f64) -> f64 {
        let l = lam.lambda();
        let s = self.sigma;
        0.5 * l * (l - 1.0) * s * s * pi * pi
            + l * s * (self.market_price_of_risk(y) + eta.shift1(y)) * pi
            + l * self.r(y)
    }

    /// Factor drift `h~(pi, eta, y)` of the primal problem.
    pub fn primal_drift(&self, lam: RiskAversion, pi: f64, eta: &Eta, y: f64) -> f64 {
        self.g(y)
            + self.rho[0] * eta.shift1(y)
            + self.rho[1] * eta.shift2(y)
            + lam.lambda() * self.rho[0] * self.sigma * pi
    }

    /// Coefficients of the condensed ergodic Bellman equation
    /// `Lambda = |rho|^2/2 phi'' + (rho_hat phi')^2/2 + inf_eta { n + phi' m_ebe }`.
    #[inline]
    pub fn condensed(&self, lam: RiskAversion, eta: &Eta, y: f64) -> Condensed {
        let l = lam.lambda();
        let theta = self.market_price_of_risk(y);
        let a = theta + eta.shift1(y);
        Condensed {
            n: 0.5 * l / (1.0 - l) * a * a + l * self.r(y),
            m_ebe: self.g(y)
                + self.rho[0] / (1.0 - l) * (l * theta + eta.shift1(y))
                + self.rho[1] * eta.shift2(y),
            rho_hat: self.rho_hat(lam),
        }
    }

    /// The minimizing `nu` for a fixed box point, `-(e12 y + e22) - rho_2 phi'(y)`.
    pub fn nu_star(&self, eta: &Eta, phi_y: f64, y: f64) -> f64 {
        -eta.shift2(y) - self.rho[1] * phi_y
    }

    /// Maximizer of the primal Hamiltonian,
    /// `(rho_1 phi' + theta + e11 y + e21) / ((1 - lambda) sigma)`.
    pub fn pi_star(&self, lam: RiskAversion, phi_y: f64, eta: &Eta, y: f64) -> f64 {
        (self.rho[0] * phi_y + self.market_price_of_risk(y) + eta.shift1(y))
            / ((1.0 - lam.lambda()) * self.sigma)
    }

    /// Factor drift under the optimally tilted dual measure:
    /// `g + lambda rho_1 (theta + e11 y + e21)/(1-lambda) + (rho, eta shift) + rho_hat^2 phi'`.
    pub fn ergodic_drift_kappa(&self, lam: RiskAversion, phi_y: f64, eta: &Eta, y: f64) -> f64 {
        self.kappa_with(lam, phi_y, eta, eta, y)
    }

    /// As [`Self::ergodic_drift_kappa`], but the `lambda/(1-lambda)` term uses
    /// the fixed minimizing feedback `eta_star` while `eta` drives the factor.
    pub fn ergodic_drift_kappa_tilde(
        &self,
        lam: RiskAversion,
        phi_y: f64,
        eta_star: &Eta,
        eta: &Eta,
        y: f64,
    ) -> f64 {
        self.kappa_with(lam, phi_y, eta_star, eta, y)
    }

    fn kappa_with(&self, lam: RiskAversion, phi_y: f64, tilt: &Eta, eta: &Eta, y: f64) -> f64 {
        let l = lam.lambda();
        let rh = self.rho_hat(lam);
        self.g(y)
            + l * self.rho[0] / (1.0 - l) * (self.market_price_of_risk(y) + tilt.shift1(y))
            + self.rho[0] * eta.shift1(y)
            + self.rho[1] * eta.shift2(y)
            + rh * rh * phi_y
    }

    fn sample_points(&self, ys: &[f64]) -> Vec<f64> {
        let mut pts: Vec<f64> = ys.to_vec();
        pts.extend_from_slice(self.r.knots());
        pts.extend_from_slice(self.m.knots());
        pts.extend_from_slice(self.g.knots());
        pts
    }

    fn min_r_on(&self, ys: &[f64]) -> f64 {
        let pts = self.sample_points(ys);
        let mut min = match self.r {
            Coefficient::Tabulated(ref t) => t.values().iter().copied().fold(f64::INFINITY, f64::min),
            _ => self.r(0.0),
        };
        for y in pts {
            min = min.min(self.r(y));
        }
        min
    }

    fn fit_theta_growth(&self, ys: &[f64]) -> (f64, f64) {
        let pts = self.sample_points(ys);
        if pts.is_empty() {
            return (0.0, self.market_price_of_risk(0.0).abs());
        }
        let n = pts.len() as f64;
        let xs: Vec<f64> = pts.iter().map(|y| y.abs()).collect();
        let ts: Vec<f64> = pts.iter().map(|&y| self.market_price_of_risk(y).abs()).collect();
        let mx = xs.iter().sum::<f64>() / n;
        let mt = ts.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxt: f64 = xs.iter().zip(&ts).map(|(x, t)| (x - mx) * (t - mt)).sum();
        let a3 = if sxx > 0.0 { (sxt / sxx).max(0.0) } else { 0.0 };
        let a4 = xs
            .iter()
            .zip(&ts)
            .map(|(x, t)| t - a3 * x)
            .fold(0.0_f64, f64::max);
        (a3, a4)
    }

    /// Whether `theta` is globally bounded, judged from the tail slopes of `m - r`.
    pub fn theta_is_bounded(&self) -> bool {
        let (ml, mr) = self.m.tail_slopes();
        let (rl, rr) = self.r.tail_slopes();
        ml - rl == 0.0 && mr - rr == 0.0
    }

    /// Checks `r >= a1 > 0`, the linear growth bound on `theta`, and
    /// finite-difference boundedness of the derivatives on `ys`.
    pub fn check_on_grid(&self, ys: &[f64]) -> Result<GridCheck> {
        let Bounds { a1, a3, a4 } = self.bounds;
        let mut out = GridCheck {
            min_r: f64::INFINITY,
            max_theta_excess: f64::NEG_INFINITY,
            max_g_y: 0.0,
            max_m_y: 0.0,
            max_r_y: 0.0,
            max_r_yy: 0.0,
        };
        for &y in ys {
            out.min_r = out.min_r.min(self.r(y));
            let excess = self.market_price_of_risk(y).abs() - (a3 * y.abs() + a4);
            out.max_theta_excess = out.max_theta_excess.max(excess);
        }
        for w in ys.windows(3) {
            let (h0, h1) = (w[1] - w[0], w[2] - w[1]);
            let d = |c: &Coefficient, a: f64, b: f64, h: f64| (c.eval(b) - c.eval(a)) / h;
            out.max_g_y = out.max_g_y.max(d(&self.g, w[0], w[1], h0).abs());
            out.max_m_y = out.max_m_y.max(d(&self.m, w[0], w[1], h0).abs());
            let r0 = d(&self.r, w[0], w[1], h0);
            let r1 = d(&self.r, w[1], w[2], h1);
            out.max_r_y = out.max_r_y.max(r0.abs());
            out.max_r_yy = out.max_r_yy.max(((r1 - r0) / (0.5 * (h0 + h1))).abs());
        }
        if out.min_r < a1 {
            return Err(Error::invalid("a1", format!("r drops to {} below a1 = {a1}", out.min_r)));
        }
        if out.max_theta_excess > 1e-12 * (1.0 + a4) {
            return Err(Error::invalid(
                "a3/a4",
                format!("|theta| exceeds a3|y| + a4 by {}", out.max_theta_excess),
            ));
        }
        let derivs = [out.max_g_y, out.max_m_y, out.max_r_y, out.max_r_yy];
        if derivs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficients", "unbounded finite differences"));
        }
        Ok(out)
    }

    /// A-priori bounds on the growth rate: `K1 = lambda a1` always, and
    /// `K2 = lambda/(1-lambda) |theta|^2/2 + lambda |r|` when `theta` is bounded;
    /// otherwise the mean-reversion condition is checked on `ys`.
    pub fn validate_apriori(&self, lam: RiskAversion, ys: &[f64]) -> Result<AprioriReport> {
        let l = lam.lambda();
        let k1 = l * self.bounds.a1;
        let pts = self.sample_points(ys);
        if self.theta_is_bounded() {
            let eval_pts = if pts.is_empty() { alloc::vec![0.0] } else { pts };
            let theta_sup = eval_pts
                .iter()
                .map(|&y| self.market_price_of_risk(y).abs())
                .fold(0.0_f64, f64::max);
            let r_sup = eval_pts.iter().map(|&y| self.r(y).abs()).fold(0.0_f64, f64::max);
            let k2 = 0.5 * l / (1.0 - l) * theta_sup * theta_sup + l * r_sup;
            return Ok(AprioriReport {
                k1,
                k2: Some(k2),
                condition: AprioriCondition::BoundedRisk { theta_sup },
            });
        }
        if ys.len() < 2 {
            return Err(Error::AssumptionUnverifiable(
                "unbounded market price of risk and no grid to test the drift condition".into(),
            ));
        }
        let f: Vec<f64> = ys
            .iter()
            .map(|&y| self.g(y) + l / (1.0 - l) * self.rho[0] * self.market_price_of_risk(y))
            .collect();
        let n = ys.len() as f64;
        let my = ys.iter().sum::<f64>() / n;
        let mf = f.iter().sum::<f64>() / n;
        let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        let syf: f64 = ys.iter().zip(&f).map(|(y, v)| (y - my) * (v - mf)).sum();
        let k = -syf / syy;
        let (m1, m2) = ys
            .iter()
            .zip(&f)
            .map(|(y, v)| v + k * y)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let a3 = self.bounds.a3;
        let lhs = 2.0 * l / ((1.0 - l) * (1.0 - l)) * self.rho_norm_sq() * a3 * a3;
        if k > 0.0 && lhs < k * k {
            Ok(AprioriReport {
                k1,
                k2: None,
                condition: AprioriCondition::MeanReverting { k, m1, m2 },
            })
        } else {
            Err(Error::AssumptionUnverifiable(format!(
                "theta is unbounded and the tilted drift condition fails: K = {k}, 2 lambda |rho|^2 a3^2/(1-lambda)^2 = {lhs}"
            )))
        }
    }
}

/// Fits `y kappa(y) <= -c y^2 + c_prime` to samples `(y, kappa(y))`.
///
/// `c` is the largest constant that works without offset on the outer half
/// of the sampled range; `c_prime` then absorbs the inner region.
pub fn fit_drift_condition(samples: &[(f64, f64)]) -> Result<DriftFit> {
    let y_max = samples.iter().map(|(y, _)| y.abs()).fold(0.0_f64, f64::max);
    if !(y_max > 0.0) {
        return Err(Error::invalid("samples", "need samples away from y = 0"));
    }
    let cut = 0.5 * y_max;
    let c = samples
        .iter()
        .filter(|(y, _)| y.abs() >= cut)
        .map(|(y, k)| -k / y)
        .fold(f64::INFINITY, f64::min);
    if !(c > 0.0) {
        return Err(Error::DriftConditionViolated { c });
    }
    let c_prime = samples
        .iter()
        .map(|(y, k)| y * k + c * y * y)
        .fold(0.0_f64, f64::max);
    Ok(DriftFit { c, c_prime })
}
