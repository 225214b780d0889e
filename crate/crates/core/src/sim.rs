//! Euler–Maruyama simulation of the factor and of log-wealth under a
//! perturbed model, with power-utility and outperformance estimators.
//!
//! Every path owns a ChaCha8 stream selected by its index, so results do not
//! depend on how paths are scheduled across threads. Paths are processed in
//! fixed-size chunks whose partial results are combined in chunk order.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::closed_form::{EbeClosedForm, FiniteHorizonOu};
use crate::model::{fit_drift_condition, AmbiguityBox, Eta, OuParams, ReferenceModel, RiskAversion, Table};
use crate::{EbeSolution, Error, Result};

const CHUNK: usize = 64;
pub const DEFAULT_GUARD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub y0: f64,
    pub x0: f64,
    /// Paths with `|Y| > guard` abort the run.
    pub guard: f64,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Result<Self> {
        let cfg = SimConfig {
            horizon,
            dt,
            n_paths,
            seed,
            y0: 0.0,
            x0: 1.0,
            guard: DEFAULT_GUARD,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid("dt", "step must be positive"));
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return Err(Error::invalid("horizon", "horizon must be at least one step"));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths", "need at least one path"));
        }
        if !(self.x0 > 0.0) || !self.x0.is_finite() {
            return Err(Error::invalid("x0", "initial wealth must be positive"));
        }
        if !self.y0.is_finite() || !(self.guard > 0.0) {
            return Err(Error::invalid("y0", "initial factor and guard must be finite"));
        }
        Ok(())
    }

    /// Number of steps; the effective step is `horizon / n_steps`.
    pub fn n_steps(&self) -> usize {
        (libm::round(self.horizon / self.dt) as usize).max(1)
    }

    fn step(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }
}

/// Fraction of wealth held in the risky asset.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategySpec {
    Constant(f64),
    Affine { slope: f64, intercept: f64 },
    /// Optimal finite-horizon strategy of the OU market; the horizon is the
    /// simulation horizon.
    FiniteHorizonOu { params: OuParams, lambda: f64 },
    /// Long-term strategy at the risk aversion dual to the threshold
    /// `c + 1/n` in the OU market with slowest mean reversion `a`.
    NearlyOptimal { params: OuParams, a: f64, c: f64, n: u32 },
    Tabulated(Table),
    Scaled { factor: f64, inner: Box<StrategySpec> },
}

impl StrategySpec {
    pub fn affine(slope: f64, intercept: f64) -> Self {
        StrategySpec::Affine { slope, intercept }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            StrategySpec::Constant(v) => StrategySpec::Constant(factor * v),
            StrategySpec::Affine { slope, intercept } => StrategySpec::Affine {
                slope: factor * slope,
                intercept: factor * intercept,
            },
            other => StrategySpec::Scaled {
                factor,
                inner: Box::new(other.clone()),
            },
        }
    }

    /// Affine coefficients `(slope, intercept)` when the strategy is affine
    /// in the factor and time-homogeneous.
    pub fn affine_coefficients(&self) -> Option<(f64, f64)> {
        match self {
            StrategySpec::Constant(v) => Some((0.0, *v)),
            StrategySpec::Affine { slope, intercept } => Some((*slope, *intercept)),
            StrategySpec::NearlyOptimal { params, a, c, n } => {
                Some(nearly_optimal_coefficients(params, *a, *c, *n))
            }
            StrategySpec::Scaled { factor, inner } => {
                inner.affine_coefficients().map(|(s, i)| (factor * s, factor * i))
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            StrategySpec::Constant(v) => v.is_finite(),
            StrategySpec::Affine { slope, intercept } => slope.is_finite() && intercept.is_finite(),
            StrategySpec::FiniteHorizonOu { lambda, .. } => RiskAversion::new(*lambda).is_ok(),
            StrategySpec::NearlyOptimal { a, c, n, .. } => *a > 0.0 && c.is_finite() && *n >= 1,
            StrategySpec::Tabulated(_) => true,
            StrategySpec::Scaled { factor, inner } => factor.is_finite() && inner.validate().is_ok(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("strategy", format!("invalid coefficients in {self:?}")))
        }
    }
}

/// Slope and intercept of the nearly optimal outperformance strategy.
pub fn nearly_optimal_coefficients(params: &OuParams, a: f64, c: f64, n: u32) -> (f64, f64) {
    let s2 = params.sigma * params.sigma;
    let gamma = params.gamma_const();
    let inv = 1.0 / n as f64;
    let level = if c > 0.25 * a + gamma { c + inv - gamma } else { 0.25 * a + inv };
    (-4.0 / s2 * level, params.excess_drift() / s2)
}

impl From<&EbeClosedForm> for StrategySpec {
    fn from(sol: &EbeClosedForm) -> Self {
        StrategySpec::affine(sol.pi_slope, sol.pi_intercept)
    }
}

/// Compiled form of a strategy for the inner loop.
enum Feedback {
    Affine(f64, f64),
    Finite(FiniteHorizonOu, f64),
    Table(Table),
    Scaled(f64, Box<Feedback>),
}

impl Feedback {
    fn compile(spec: &StrategySpec, horizon: f64) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            StrategySpec::FiniteHorizonOu { params, lambda } => {
                Feedback::Finite(FiniteHorizonOu::new(*params, RiskAversion::new(*lambda)?), horizon)
            }
            StrategySpec::Tabulated(t) => Feedback::Table(t.clone()),
            StrategySpec::Scaled { factor, inner } => {
                Feedback::Scaled(*factor, Box::new(Feedback::compile(inner, horizon)?))
            }
            other => {
                let (s, i) = other.affine_coefficients().expect("affine strategy");
                Feedback::Affine(s, i)
            }
        })
    }

    #[inline]
    fn eval(&self, t: f64, y: f64) -> f64 {
        match self {
            Feedback::Affine(s, i) => s * y + i,
            Feedback::Finite(fh, horizon) => fh.strategy(t, *horizon, y),
            Feedback::Table(table) => table.eval(y),
            Feedback::Scaled(k, inner) => k * inner.eval(t, y),
        }
    }
}

/// Drift perturbation applied along the path.
#[derive(Debug, Clone, PartialEq)]
pub enum EtaControl {
    Constant(Eta),
    /// Componentwise linear interpolation between box points at strictly
    /// increasing nodes, held constant outside.
    Tabulated { ys: Vec<f64>, etas: Vec<Eta> },
}

impl EtaControl {
    pub fn tabulated(ys: Vec<f64>, etas: Vec<Eta>) -> Result<Self> {
        if ys.is_empty() || ys.len() != etas.len() || ys.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("eta control", "need increasing nodes and one point per node"));
        }
        Ok(EtaControl::Tabulated { ys, etas })
    }

    #[inline]
    pub fn eval(&self, y: f64) -> Eta {
        match self {
            EtaControl::Constant(e) => *e,
            EtaControl::Tabulated { ys, etas } => {
                let n = ys.len();
                if n == 1 || y <= ys[0] {
                    return etas[0];
                }
                if y >= ys[n - 1] {
                    return etas[n - 1];
                }
                let i = ys.partition_point(|&v| v <= y);
                let w = (y - ys[i - 1]) / (ys[i] - ys[i - 1]);
                let (a, b) = (etas[i - 1], etas[i]);
                let mix = |p: f64, q: f64| p + w * (q - p);
                Eta::new(mix(a.e11, b.e11), mix(a.e12, b.e12), mix(a.e21, b.e21), mix(a.e22, b.e22))
            }
        }
    }

    pub fn within(&self, ambiguity: &AmbiguityBox) -> bool {
        match self {
            EtaControl::Constant(e) => ambiguity.contains(e),
            EtaControl::Tabulated { etas, .. } => etas.iter().all(|e| ambiguity.contains(e)),
        }
    }
}

/// Terminal state of every path, in path order.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub log_wealth: Vec<f64>,
    pub y_terminal: Vec<f64>,
    pub horizon: f64,
}

impl Batch {
    /// Realized growth rates `ln X_T / T`.
    pub fn log_growth(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_wealth.iter().map(move |lx| lx / self.horizon)
    }

    pub fn len(&self) -> usize {
        self.log_wealth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_wealth.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthEstimate {
    pub rate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutperformanceEstimate {
    pub prob: f64,
    /// `ln(prob) / T`; `-inf` when no path reaches the threshold.
    pub log_rate: f64,
}

struct PathSim<'a> {
    model: &'a ReferenceModel,
    eta: &'a EtaControl,
    pi: Feedback,
    cfg: SimConfig,
}

struct PathEnd {
    log_wealth: f64,
    y: f64,
}

impl PathSim<'_> {
    fn new<'a>(
        model: &'a ReferenceModel,
        ambiguity: &AmbiguityBox,
        eta: &'a EtaControl,
        strategy: &StrategySpec,
        cfg: &SimConfig,
    ) -> Result<PathSim<'a>> {
        cfg.validate()?;
        if !eta.within(ambiguity) {
            return Err(Error::invalid("eta control", "control leaves the ambiguity box"));
        }
        Ok(PathSim {
            model,
            eta,
            pi: Feedback::compile(strategy, cfg.horizon)?,
            cfg: *cfg,
        })
    }

    fn rng(&self, path: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(path as u64);
        rng
    }

    /// Runs one path, calling `observe(step_index, t, y)` after every step.
    fn run(&self, path: usize, mut observe: impl FnMut(usize, f64, f64)) -> Result<PathEnd> {
        let m = self.model;
        let [rho1, rho2] = m.rho();
        let sigma = m.sigma();
        let n = self.cfg.n_steps();
        let dt = self.cfg.step();
        let sq = libm::sqrt(dt);
        let mut rng = self.rng(path);
        let mut y = self.cfg.y0;
        let mut lx = libm::log(self.cfg.x0);
        for k in 0..n {
            let t = k as f64 * dt;
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let (dw1, dw2) = (sq * z1, sq * z2);
            let eta = self.eta.eval(y);
            let pi = self.pi.eval(t, y);
            let s1 = eta.shift1(y);
            let sp = sigma * pi;
            lx += (m.r(y) + sp * (m.market_price_of_risk(y) + s1) - 0.5 * sp * sp) * dt + sp * dw1;
            y += (m.g(y) + rho1 * s1 + rho2 * eta.shift2(y)) * dt + rho1 * dw1 + rho2 * dw2;
            if !(y.abs() <= self.cfg.guard) {
                return Err(Error::NumericalOverflow {
                    path,
                    time: t + dt,
                    y,
                });
            }
            observe(k + 1, t + dt, y);
        }
        Ok(PathEnd { log_wealth: lx, y })
    }
}

#[cfg(feature = "std")]
fn map_chunks<T: Send>(n_paths: usize, f: impl Fn(usize, usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let n_chunks = n_paths.div_ceil(CHUNK);
    (0..n_chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK, ((c + 1) * CHUNK).min(n_paths)))
        .collect()
}

#[cfg(not(feature = "std"))]
fn map_chunks<T>(n_paths: usize, f: impl Fn(usize, usize) -> Result<T>) -> Result<Vec<T>> {
    let n_chunks = n_paths.div_ceil(CHUNK);
    (0..n_chunks)
        .map(|c| f(c * CHUNK, ((c + 1) * CHUNK).min(n_paths)))
        .collect()
}

/// Simulates `cfg.n_paths` independent paths under the perturbation `eta`
/// with the given strategy.
pub fn simulate_paths(
    model: &ReferenceModel,
    ambiguity: &AmbiguityBox,
    eta: &EtaControl,
    strategy: &StrategySpec,
    cfg: &SimConfig,
) -> Result<Batch> {
    let sim = PathSim::new(model, ambiguity, eta, strategy, cfg)?;
    let chunks = map_chunks(cfg.n_paths, |start, end| {
        (start..end)
            .map(|p| sim.run(p, |_, _, _| {}))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut batch = Batch {
        log_wealth: Vec::with_capacity(cfg.n_paths),
        y_terminal: Vec::with_capacity(cfg.n_paths),
        horizon: cfg.horizon,
    };
    for end in chunks.into_iter().flatten() {
        batch.log_wealth.push(end.log_wealth);
        batch.y_terminal.push(end.y);
    }
    Ok(batch)
}

/// Factor trajectory `Y_0, Y_dt, ..., Y_T` of one path, drawn from the same
/// stream as in [`simulate_paths`].
pub fn factor_path(
    model: &ReferenceModel,
    ambiguity: &AmbiguityBox,
    eta: &EtaControl,
    strategy: &StrategySpec,
    cfg: &SimConfig,
    path: usize,
) -> Result<Vec<f64>> {
    let sim = PathSim::new(model, ambiguity, eta, strategy, cfg)?;
    let mut out = Vec::with_capacity(cfg.n_steps() + 1);
    out.push(cfg.y0);
    sim.run(path, |_, _, y| out.push(y))?;
    Ok(out)
}

/// `(1/T) ln mean(X_T^lambda)` evaluated in log space, with a delta-method
/// standard error.
pub fn estimate_power_growth(batch: &Batch, lam: RiskAversion) -> Result<GrowthEstimate> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "no paths"));
    }
    let l = lam.lambda();
    let n = batch.len() as f64;
    let top = batch
        .log_wealth
        .iter()
        .map(|lx| l * lx)
        .fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = batch.log_wealth.iter().map(|lx| libm::exp(l * lx - top)).collect();
    let mean = scaled.iter().sum::<f64>() / n;
    let var = if batch.len() > 1 {
        scaled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let rate = (top + libm::log(mean)) / batch.horizon;
    let std_error = libm::sqrt(var / n) / mean / batch.horizon;
    Ok(GrowthEstimate {
        rate,
        std_error,
        n_paths: batch.len(),
        horizon: batch.horizon,
    })
}

/// Fraction of paths whose realized growth rate reaches `c`.
pub fn estimate_outperformance(batch: &Batch, c: f64) -> Result<OutperformanceEstimate> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "no paths"));
    }
    let hits = batch.log_growth().filter(|lt| *lt >= c).count();
    let prob = hits as f64 / batch.len() as f64;
    let log_rate = if hits == 0 {
        f64::NEG_INFINITY
    } else {
        libm::log(prob) / batch.horizon
    };
    Ok(OutperformanceEstimate { prob, log_rate })
}

/// The strategy and perturbation whose saddle property is tested.
#[derive(Debug, Clone, PartialEq)]
pub struct Pivot {
    pub strategy: StrategySpec,
    pub eta: EtaControl,
}

impl Pivot {
    pub fn from_closed_form(sol: &EbeClosedForm) -> Self {
        Pivot {
            strategy: sol.into(),
            eta: EtaControl::Constant(sol.eta_star),
        }
    }

    /// Tabulates the feedback maps of `sol` at `ys`.
    pub fn from_solution(sol: &dyn EbeSolution, ys: &[f64]) -> Result<Self> {
        let pis: Vec<f64> = ys.iter().map(|&y| sol.pi_star(y)).collect();
        let etas: Vec<Eta> = ys.iter().map(|&y| sol.eta_star(y)).collect();
        Ok(Pivot {
            strategy: StrategySpec::Tabulated(Table::new(ys.to_vec(), pis)?),
            eta: EtaControl::tabulated(ys.to_vec(), etas)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleComparison {
    pub label: String,
    pub estimate: GrowthEstimate,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleReport {
    pub pivot: GrowthEstimate,
    /// Perturbed strategies under the pivot perturbation; each must not beat the pivot.
    pub strategy_side: Vec<SaddleComparison>,
    /// Candidate perturbations under the pivot strategy; each must not fall below the pivot.
    pub eta_side: Vec<SaddleComparison>,
}

/// Slack for comparing two estimates from common random numbers.
pub fn saddle_slack(a: &GrowthEstimate, b: &GrowthEstimate) -> f64 {
    3.0 * libm::sqrt(a.std_error * a.std_error + b.std_error * b.std_error) + 2e-3
}

/// Monte Carlo check of the saddle-point inequalities over finite candidate
/// sets, all runs sharing the same seed.
pub fn saddle_check(
    model: &ReferenceModel,
    ambiguity: &AmbiguityBox,
    lam: RiskAversion,
    cfg: &SimConfig,
    pivot: &Pivot,
    eta_candidates: &[EtaControl],
    strategy_perturbations: &[StrategySpec],
) -> Result<SaddleReport> {
    let run = |eta: &EtaControl, pi: &StrategySpec| {
        simulate_paths(model, ambiguity, eta, pi, cfg).and_then(|b| estimate_power_growth(&b, lam))
    };
    let base = run(&pivot.eta, &pivot.strategy)?;
    let mut report = SaddleReport {
        pivot: base,
        strategy_side: Vec::new(),
        eta_side: Vec::new(),
    };
    let mut violations = Vec::new();
    for (i, pi) in strategy_perturbations.iter().enumerate() {
        let est = run(&pivot.eta, pi)?;
        let slack = saddle_slack(&base, &est);
        if base.rate < est.rate - slack {
            violations.push(format!(
                "strategy {i}: {} exceeds pivot {} by more than {slack}",
                est.rate, base.rate
            ));
        }
        report.strategy_side.push(SaddleComparison {
            label: format!("strategy {i}"),
            estimate: est,
            slack,
        });
    }
    for (i, eta) in eta_candidates.iter().enumerate() {
        let est = run(eta, &pivot.strategy)?;
        let slack = saddle_slack(&base, &est);
        if base.rate > est.rate + slack {
            violations.push(format!(
                "eta candidate {i}: {} below pivot {} by more than {slack}",
                est.rate, base.rate
            ));
        }
        report.eta_side.push(SaddleComparison {
            label: format!("eta {i}"),
            estimate: est,
            slack,
        });
    }
    if violations.is_empty() {
        Ok(report)
    } else {
        Err(Error::SaddleViolation(violations.join("; ")))
    }
}

/// Sample second moment of the factor over time and a trend test.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrace {
    pub times: Vec<f64>,
    pub mean_y2: Vec<f64>,
    /// Mean over paths of the least-squares slope of `Y_t^2` on the last half.
    pub late_slope: f64,
    pub late_slope_se: f64,
}

impl MomentTrace {
    pub fn sup(&self) -> f64 {
        self.mean_y2.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Records the mean of `Y_t^2` every `record_every` steps.
pub fn moment_trace(
    model: &ReferenceModel,
    ambiguity: &AmbiguityBox,
    eta: &EtaControl,
    cfg: &SimConfig,
    record_every: usize,
) -> Result<MomentTrace> {
    let record_every = record_every.max(1);
    let strategy = StrategySpec::Constant(0.0);
    let sim = PathSim::new(model, ambiguity, eta, &strategy, cfg)?;
    let n_rec = cfg.n_steps() / record_every + 1;
    let step = cfg.step();
    let times: Vec<f64> = (0..n_rec).map(|j| (j * record_every) as f64 * step).collect();
    let late = n_rec / 2;
    let lt = &times[late..];
    let mt = lt.iter().sum::<f64>() / lt.len() as f64;
    let stt: f64 = lt.iter().map(|t| (t - mt) * (t - mt)).sum();

    let chunks = map_chunks(cfg.n_paths, |start, end| {
        let mut sums = vec![0.0; n_rec];
        let mut slopes = Vec::with_capacity(end - start);
        let mut rec = vec![0.0; n_rec];
        for p in start..end {
            rec[0] = cfg.y0 * cfg.y0;
            sim.run(p, |k, _, y| {
                if k % record_every == 0 {
                    rec[k / record_every] = y * y;
                }
            })?;
            for (s, v) in sums.iter_mut().zip(&rec) {
                *s += v;
            }
            let tail = &rec[late..];
            let my = tail.iter().sum::<f64>() / tail.len() as f64;
            let sty: f64 = lt.iter().zip(tail).map(|(t, v)| (t - mt) * (v - my)).sum();
            slopes.push(if stt > 0.0 { sty / stt } else { 0.0 });
        }
        Ok((sums, slopes))
    })?;
    let mut sums = vec![0.0; n_rec];
    let mut slopes = Vec::with_capacity(cfg.n_paths);
    for (s, sl) in chunks {
        for (a, b) in sums.iter_mut().zip(&s) {
            *a += b;
        }
        slopes.extend(sl);
    }
    let n = cfg.n_paths as f64;
    let mean_slope = slopes.iter().sum::<f64>() / n;
    let var = if cfg.n_paths > 1 {
        slopes.iter().map(|s| (s - mean_slope) * (s - mean_slope)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(MomentTrace {
        times,
        mean_y2: sums.into_iter().map(|s| s / n).collect(),
        late_slope: mean_slope,
        late_slope_se: libm::sqrt(var / n),
    })
}

/// Bound `y0^2 + (2 M + |rho|^2) / (2 K)` on the second moment of the factor
/// under a constant perturbation, from a fit `y f(y) <= -K y^2 + M` of the
/// factor drift `f` on `ys`.
pub fn second_moment_bound(model: &ReferenceModel, eta: &Eta, y0: f64, ys: &[f64]) -> Result<f64> {
    let [rho1, rho2] = model.rho();
    let samples: Vec<(f64, f64)> = ys
        .iter()
        .map(|&y| (y, model.g(y) + rho1 * eta.shift1(y) + rho2 * eta.shift2(y)))
        .collect();
    let fit = fit_drift_condition(&samples)?;
    Ok(y0 * y0 + (2.0 * fit.c_prime + model.rho_norm_sq()) / (2.0 * fit.c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::bs_solution;
    use crate::model::Interval;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn half() -> RiskAversion {
        RiskAversion::new(0.5).unwrap()
    }

    fn bs() -> ReferenceModel {
        ReferenceModel::black_scholes(0.02, 0.06, 0.2).unwrap()
    }

    #[test]
    fn bond_only_grows_at_short_rate() {
        let cfg = SimConfig::new(5.0, 0.01, 100, 7).unwrap();
        let b = simulate_paths(&bs(), &AmbiguityBox::singleton(), &EtaControl::Constant(Eta::ZERO), &StrategySpec::Constant(0.0), &cfg).unwrap();
        for lt in b.log_growth() {
            assert_abs_diff_eq!(lt, 0.02, epsilon = 1e-12);
        }
        let est = estimate_power_growth(&b, half()).unwrap();
        assert_abs_diff_eq!(est.rate, 0.01, epsilon = 1e-12);
        let out = estimate_outperformance(&b, 0.019).unwrap();
        assert_eq!(out.prob, 1.0);
        assert_eq!(out.log_rate, 0.0);
        let none = estimate_outperformance(&b, 0.03).unwrap();
        assert_eq!(none.log_rate, f64::NEG_INFINITY);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SimConfig::new(2.0, 0.01, 300, 11).unwrap();
        let run = || {
            simulate_paths(&bs(), &AmbiguityBox::singleton(), &EtaControl::Constant(Eta::ZERO), &StrategySpec::Constant(0.7), &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let other = simulate_paths(
            &bs(),
            &AmbiguityBox::singleton(),
            &EtaControl::Constant(Eta::ZERO),
            &StrategySpec::Constant(0.7),
            &SimConfig { seed: 12, ..cfg },
        )
        .unwrap();
        assert_ne!(a.log_wealth, other.log_wealth);
    }

    #[test]
    fn logsumexp_matches_naive_mean() {
        let batch = Batch {
            log_wealth: vec![0.1, -0.3, 0.25, 0.0, 1.2],
            y_terminal: vec![0.0; 5],
            horizon: 2.0,
        };
        let est = estimate_power_growth(&batch, half()).unwrap();
        let naive = batch.log_wealth.iter().map(|lx| libm::exp(0.5 * lx)).sum::<f64>() / 5.0;
        assert_relative_eq!(est.rate, libm::log(naive) / 2.0, max_relative = 1e-12);
        assert!(est.std_error > 0.0);
    }

    #[test]
    fn eta_outside_box_is_rejected() {
        let cfg = SimConfig::new(1.0, 0.1, 1, 1).unwrap();
        let b = AmbiguityBox::drift_only(-0.1, 0.1).unwrap();
        let eta = EtaControl::Constant(Eta::new(0.0, 0.0, 0.2, 0.0));
        assert!(simulate_paths(&bs(), &b, &eta, &StrategySpec::Constant(0.0), &cfg).is_err());
    }

    #[test]
    fn guard_trips_on_explosive_factor() {
        let m = ReferenceModel::new(
            crate::model::Coefficient::Constant(0.02),
            crate::model::Coefficient::Constant(0.05),
            crate::model::Coefficient::Affine { slope: 5.0, intercept: 0.0 },
            0.2,
            [1.0, 0.0],
            crate::model::Bounds { a1: 0.02, a3: 0.0, a4: 0.15 },
        )
        .unwrap();
        let cfg = SimConfig { y0: 1.0, ..SimConfig::new(10.0, 0.01, 4, 3).unwrap() };
        let err = simulate_paths(&m, &AmbiguityBox::singleton(), &EtaControl::Constant(Eta::ZERO), &StrategySpec::Constant(0.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::NumericalOverflow { .. }));
    }

    #[test]
    fn black_scholes_growth_matches_closed_form() {
        let sol = bs_solution(0.02, 0.06, 0.2, Interval::new(-0.1, 0.1).unwrap(), half()).unwrap();
        let pivot = Pivot::from_closed_form(&sol);
        let cfg = SimConfig::new(10.0, 0.01, 20_000, 5).unwrap();
        let b = AmbiguityBox::drift_only(-0.1, 0.1).unwrap();
        let batch = simulate_paths(&bs(), &b, &pivot.eta, &pivot.strategy, &cfg).unwrap();
        let est = estimate_power_growth(&batch, half()).unwrap();
        assert!((est.rate - 0.015).abs() < (3.0 * est.std_error).max(5e-3));
    }

    #[test]
    fn factor_regression_recovers_slowest_mean_reversion() {
        let p = OuParams::new(1.5, 0.01, 0.05, 0.3).unwrap();
        let m = ReferenceModel::geometric_ou(&p).unwrap();
        let b = AmbiguityBox::mean_reversion_only(-0.5 / 0.3, 0.5 / 0.3).unwrap();
        let eta = EtaControl::Constant(Eta::new(0.5 / 0.3, 0.0, 0.0, 0.0));
        let cfg = SimConfig::new(2000.0, 0.01, 1, 9).unwrap();
        let ys = factor_path(&m, &b, &eta, &StrategySpec::Constant(0.0), &cfg, 0).unwrap();
        // regress dY on Y: slope = -a dt
        let n = (ys.len() - 1) as f64;
        let (mut sxx, mut sxy, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0);
        for w in ys.windows(2) {
            let dy = w[1] - w[0];
            sx += w[0];
            sy += dy;
            sxx += w[0] * w[0];
            sxy += w[0] * dy;
        }
        let beta = (sxy - sx * sy / n) / (sxx - sx * sx / n);
        let resid_var = 0.09 * 0.01;
        let se = libm::sqrt(resid_var / (sxx - sx * sx / n));
        let a_hat = -beta / 0.01;
        assert!((a_hat - 1.0).abs() < 3.0 * se / 0.01, "a_hat = {a_hat}");
    }

    #[test]
    fn nearly_optimal_coefficients_example() {
        let p = OuParams::new(1.0, 0.01, 0.05, 0.3).unwrap();
        let c = 0.25 + p.gamma_const() + 0.05;
        let (slope, intercept) = nearly_optimal_coefficients(&p, 1.0, c, 10);
        assert_abs_diff_eq!(slope, -(4.0 / 0.09) * 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(intercept, 0.085 / 0.09, epsilon = 1e-12);
        let lam_hat: f64 = 1.0 - libm::pow(1.0 / (4.0 * 0.4), 2.0);
        assert_abs_diff_eq!(slope, -1.0 / (0.09 * libm::sqrt(1.0 - lam_hat)), epsilon = 1e-10);
        let (below, _) = nearly_optimal_coefficients(&p, 1.0, 0.0, 1_000_000);
        assert_abs_diff_eq!(below, -1.0 / 0.09, epsilon = 1e-4);
    }

    #[test]
    fn moment_bound_holds_for_ou_corner() {
        let p = OuParams::new(1.5, 0.01, 0.05, 0.3).unwrap();
        let m = ReferenceModel::geometric_ou(&p).unwrap();
        let b = AmbiguityBox::mean_reversion_only(-0.5 / 0.3, 0.5 / 0.3).unwrap();
        let cfg = SimConfig { y0: 0.5, ..SimConfig::new(10.0, 0.01, 500, 2).unwrap() };
        let ys: Vec<f64> = (0..81).map(|i| -4.0 + 0.1 * i as f64).collect();
        for e in b.corners() {
            let trace = moment_trace(&m, &b, &EtaControl::Constant(e), &cfg, 10).unwrap();
            let bound = second_moment_bound(&m, &e, cfg.y0, &ys).unwrap();
            assert!(trace.sup() <= bound);
            assert_abs_diff_eq!(trace.mean_y2[0], 0.25, epsilon = 0.0);
        }
    }
}
