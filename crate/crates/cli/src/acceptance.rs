//! Acceptance checks run by `robust-growth verify` and the `acceptance` test
//! target. Every tolerance below is fixed.

use std::fmt;
use std::time::{Duration, Instant};

use robust_growth::closed_form::{
    bs_solution, mean_reversion_box, ou_nonrobust_solution, ou_robust_solution, FiniteHorizonOu,
};
use robust_growth::ebe::{solve_ebe, Grid, SolverOptions};
use robust_growth::model::{
    AmbiguityBox, Coefficient, Eta, Interval, OuParams, ReferenceModel, RiskAversion, Table,
};
use robust_growth::outperformance::{legendre_rate, ou_rate_closed_form, GrowthCurve};
use robust_growth::sim::{
    estimate_power_growth, moment_trace, saddle_check, second_moment_bound, simulate_paths, EtaControl, Pivot,
    SimConfig,
};
use robust_growth::EbeSolution;

use crate::commands;
use crate::scenario::Scenario;

pub const BS_RATE_TOL: f64 = 1e-12;
pub const BS_MC_FLOOR: f64 = 5e-3;
pub const BS_MC_PATHS: usize = 200_000;
pub const BS_MC_BUDGET: Duration = Duration::from_secs(60);
pub const OU_RATE_TOL: f64 = 1e-4;
pub const OU_PHI_TOL: f64 = 1e-3;
pub const REFINEMENT_RANGE: (f64, f64) = (3.5, 4.5);
pub const OU_BUDGET: Duration = Duration::from_secs(120);
pub const FINITE_SLOPE_TOL: f64 = 1e-3;
pub const FINITE_HORIZON: f64 = 500.0;
pub const FINITE_COEF_TOL: f64 = 1e-8;
pub const FINITE_COEF_AGE: f64 = 200.0;
pub const MERTON_TOL: f64 = 1e-12;
pub const ZERO_HORIZON_TOL: f64 = 1e-12;
pub const LEGENDRE_TOL: f64 = 1e-6;
pub const LEGENDRE_POINTS: usize = 50;
pub const SADDLE_PATHS: usize = 100_000;
pub const SIM_HORIZON: f64 = 50.0;
pub const SIM_DT: f64 = 0.01;
pub const MOMENT_PATHS: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}. {}: {}", self.id, self.name, self.detail)
    }
}

fn result(id: u32, name: &'static str, checks: Vec<(bool, String)>) -> CriterionResult {
    let passed = checks.iter().all(|(ok, _)| *ok);
    let detail = checks
        .into_iter()
        .map(|(ok, msg)| if ok { msg } else { format!("FAILED {msg}") })
        .collect::<Vec<_>>()
        .join("; ");
    CriterionResult { id, name, passed, detail }
}

fn failed(id: u32, name: &'static str, e: impl fmt::Display) -> CriterionResult {
    CriterionResult {
        id,
        name,
        passed: false,
        detail: format!("error: {e}"),
    }
}

fn half() -> RiskAversion {
    RiskAversion::new(0.5).expect("valid")
}

/// Robust OU example: reference speed 1.5, speeds in [1, 2.5], so that the
/// box midpoint differs from both 0 and the worst case.
pub fn ou_example() -> (OuParams, Interval) {
    (
        OuParams::new(1.5, 0.01, 0.05, 0.3).expect("valid"),
        Interval::new(1.0, 2.5).expect("valid"),
    )
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("thread pool")
        .install(f)
}

pub fn black_scholes() -> CriterionResult {
    const NAME: &str = "Black-Scholes closed form and Monte Carlo growth";
    let run = || -> robust_growth::Result<Vec<(bool, String)>> {
        let (r, m, sigma) = (0.02, 0.06, 0.2);
        let drift = Interval::new(-0.1, 0.1)?;
        let sol = bs_solution(r, m, sigma, drift, half())?;
        let mut checks = vec![
            (
                (sol.growth_rate - 0.015).abs() <= BS_RATE_TOL,
                format!("rate {:.17}", sol.growth_rate),
            ),
            ((sol.pi_star(0.0) - 1.0).abs() <= BS_RATE_TOL, format!("pi* {:.17}", sol.pi_star(0.0))),
            (sol.eta_star.e21 == -0.1, format!("eta21* {}", sol.eta_star.e21)),
        ];
        let model = ReferenceModel::black_scholes(r, m, sigma)?;
        let ambiguity = AmbiguityBox::drift_only(-0.1, 0.1)?;
        let pivot = Pivot::from_closed_form(&sol);
        let cfg = SimConfig::new(SIM_HORIZON, SIM_DT, BS_MC_PATHS, 20_240_601)?;
        let start = Instant::now();
        let est = single_thread(|| {
            simulate_paths(&model, &ambiguity, &pivot.eta, &pivot.strategy, &cfg)
                .and_then(|b| estimate_power_growth(&b, half()))
        })?;
        let elapsed = start.elapsed();
        let tol = (3.0 * est.std_error).max(BS_MC_FLOOR);
        checks.push((
            (est.rate - 0.015).abs() <= tol,
            format!("MC rate {:.6} (se {:.2e}, tol {:.1e})", est.rate, est.std_error, tol),
        ));
        checks.push((
            elapsed < BS_MC_BUDGET,
            format!("single-threaded MC {:.1}s", elapsed.as_secs_f64()),
        ));
        Ok(checks)
    };
    match run() {
        Ok(c) => result(1, NAME, c),
        Err(e) => failed(1, NAME, e),
    }
}

pub fn ou_numerical() -> CriterionResult {
    const NAME: &str = "robust OU closed form against the numerical solver";
    let run = || -> robust_growth::Result<Vec<(bool, String)>> {
        let start = Instant::now();
        let (p, iv) = ou_example();
        let e11 = mean_reversion_box(&p, iv)?;
        let ambiguity = AmbiguityBox::mean_reversion_only(e11.lo, e11.hi)?;
        let model = ReferenceModel::geometric_ou(&p)?;
        let exact = ou_robust_solution(&p, iv, half())?;
        let opts = SolverOptions::default();
        let solve = |n| Grid::new(-4.0, 4.0, n).and_then(|g| solve_ebe(&model, half(), &ambiguity, &g, &opts));
        let fine = solve(401)?;
        let coarse = solve(201)?;
        let err_fine = fine.growth_rate - exact.growth_rate;
        let err_coarse = coarse.growth_rate - exact.growth_rate;
        let ratio = err_coarse / err_fine;
        let phi0 = fine.phi(0.0);
        let phi_err = fine
            .grid
            .nodes()
            .into_iter()
            .filter(|y| y.abs() <= 2.0)
            .map(|y| (fine.phi(y) - phi0 - exact.phi(y)).abs())
            .fold(0.0, f64::max);
        let elapsed = start.elapsed();
        Ok(vec![
            (err_fine.abs() <= OU_RATE_TOL, format!("rate error {err_fine:.2e}")),
            (phi_err <= OU_PHI_TOL, format!("phi sup error {phi_err:.2e}")),
            (
                ratio >= REFINEMENT_RANGE.0 && ratio <= REFINEMENT_RANGE.1,
                format!("refinement ratio {ratio:.4}"),
            ),
            (elapsed < OU_BUDGET, format!("runtime {:.1}s", elapsed.as_secs_f64())),
        ])
    };
    match run() {
        Ok(c) => result(2, NAME, c),
        Err(e) => failed(2, NAME, e),
    }
}

pub fn finite_horizon() -> CriterionResult {
    const NAME: &str = "finite-horizon value and strategy consistency";
    let run = || -> robust_growth::Result<Vec<(bool, String)>> {
        let p = OuParams::new(1.0, 0.01, 0.05, 0.3)?;
        let lam = half();
        let long = ou_nonrobust_solution(&p, lam);
        let fh = FiniteHorizonOu::new(p, lam);
        let slope = fh.ln_value(1.0, 0.0, FINITE_HORIZON)? / FINITE_HORIZON;
        let without_prefactor = slope - (1.0 / lam.lambda()).ln() / FINITE_HORIZON;
        let slope_gap = slope - long.growth_rate;
        let a_gap = (fh.a_coef(FINITE_COEF_AGE) - long.pi_slope).abs();
        let b_gap = (fh.b_coef(FINITE_COEF_AGE) - long.pi_intercept).abs();
        let model = ReferenceModel::geometric_ou(&p)?;
        let merton_gap = (-20..=20)
            .map(|k| {
                let y = 0.1 * k as f64;
                let merton = model.market_price_of_risk(y) / ((1.0 - lam.lambda()) * p.sigma);
                let got = fh.a_coef(0.0) * y + fh.b_coef(0.0);
                (got - merton).abs() / merton.abs().max(1.0)
            })
            .fold(0.0, f64::max);
        Ok(vec![
            (
                slope_gap.abs() <= FINITE_SLOPE_TOL,
                format!(
                    "ln(U_T)/T at T = {FINITE_HORIZON} is {slope:.8} vs rate {:.8} (gap {slope_gap:.3e}; \
                     without the 1/lambda factor {without_prefactor:.8})",
                    long.growth_rate
                ),
            ),
            (a_gap <= FINITE_COEF_TOL, format!("slope gap at s = {FINITE_COEF_AGE}: {a_gap:.1e}")),
            (b_gap <= FINITE_COEF_TOL, format!("intercept gap at s = {FINITE_COEF_AGE}: {b_gap:.1e}")),
            (merton_gap <= MERTON_TOL, format!("myopic fraction gap at s = 0: {merton_gap:.1e}")),
        ])
    };
    match run() {
        Ok(c) => result(3, NAME, c),
        Err(e) => failed(3, NAME, e),
    }
}

pub fn zero_horizon() -> CriterionResult {
    const NAME: &str = "zero-horizon value identity";
    let run = || -> robust_growth::Result<Vec<(bool, String)>> {
        let mut worst = 0.0_f64;
        for l in [0.1, 0.5, 0.9] {
            let lam = RiskAversion::new(l)?;
            let fh = FiniteHorizonOu::new(OuParams::new(1.0, 0.01, 0.05, 0.3)?, lam);
            for x0 in [0.5_f64, 1.0, 3.7] {
                for y0 in [-1.5, 0.0, 0.8] {
                    let expected = x0.powf(l) / l;
                    let got = fh.value(x0, y0, 0.0)?;
                    worst = worst.max((got - expected).abs() / expected);
                }
            }
        }
        Ok(vec![(worst <= ZERO_HORIZON_TOL, format!("max relative error {worst:.1e}"))])
    };
    match run() {
        Ok(c) => result(4, NAME, c),
        Err(e) => failed(4, NAME, e),
    }
}

pub fn legendre_duality() -> CriterionResult {
    const NAME: &str = "outperformance rate by Legendre transform";
    let run = || -> robust_growth::Result<Vec<(bool, String)>> {
        let p = OuParams::new(1.0, 0.01, 0.05, 0.3)?;
        let (a, gamma) = (1.0, p.gamma_const());
        let kink = 0.25 * a + gamma;
        let curve = GrowthCurve::closed_form_ou(a, gamma)?;
        let (mut rate_gap, mut lambda_gap) = (0.0_f64, 0.0_f64);
        for k in 1..=LEGENDRE_POINTS {
            let c = kink + 0.02 * k as f64;
            let excess = c - gamma;
            let rate = -(0.25 * a - c + gamma).powi(2) / excess;
            let lambda_c = 1.0 - (a / (4.0 * excess)).powi(2);
            let num = legendre_rate(&curve, c)?;
            let closed = ou_rate_closed_form(a, gamma, c)?;
            rate_gap = rate_gap.max((num.rate - rate).abs()).max((closed.rate - rate).abs());
            lambda_gap = lambda_gap
                .max((num.lambda_c - lambda_c).abs())
                .max((closed.lambda_c - lambda_c).abs());
        }
        let mut flat = true;
        for k in 0..=20 {
            let c = kink - 0.05 * k as f64;
            flat &= legendre_rate(&curve, c)?.rate == 0.0 && ou_rate_closed_form(a, gamma, c)?.rate == 0.0;
        }
        Ok(vec![
            (rate_gap <= LEGENDRE_TOL, format!("max rate gap {rate_gap:.1e} over {LEGENDRE_POINTS} thresholds")),
            (lambda_gap <= LEGENDRE_TOL, format!("max lambda_c gap {lambda_gap:.1e}")),
            (flat, "zero rate at and below the kink".to_string()),
        ])
    };
    match run() {
        Ok(c) => result(5, NAME, c),
        Err(e) => failed(5, NAME, e),
    }
}

pub fn saddle_point() -> CriterionResult {
    const NAME: &str = "saddle point of the robust OU example";
    let run = || -> robust_growth::Result<Vec<(bool, String)>> {
        let (p, iv) = ou_example();
        let e11 = mean_reversion_box(&p, iv)?;
        let ambiguity = AmbiguityBox::mean_reversion_only(e11.lo, e11.hi)?;
        let model = ReferenceModel::geometric_ou(&p)?;
        let sol = ou_robust_solution(&p, iv, half())?;
        let pivot = Pivot::from_closed_form(&sol);
        let cfg = SimConfig::new(SIM_HORIZON, SIM_DT, SADDLE_PATHS, 31_337)?;
        let candidates = [
            EtaControl::Constant(Eta::ZERO),
            EtaControl::Constant(Eta::new(e11.midpoint(), 0.0, 0.0, 0.0)),
        ];
        let perturbations = [pivot.strategy.scaled(0.8), pivot.strategy.scaled(1.2)];
        match saddle_check(&model, &ambiguity, half(), &cfg, &pivot, &candidates, &perturbations) {
            Ok(rep) => {
                let mut checks = vec![(
                    true,
                    format!("pivot {:.5} (se {:.1e})", rep.pivot.rate, rep.pivot.std_error),
                )];
                for c in rep.strategy_side.iter().chain(&rep.eta_side) {
                    checks.push((true, format!("{} {:.5}", c.label, c.estimate.rate)));
                }
                Ok(checks)
            }
            Err(robust_growth::Error::SaddleViolation(msg)) => Ok(vec![(false, msg)]),
            Err(e) => Err(e),
        }
    };
    match run() {
        Ok(c) => result(6, NAME, c),
        Err(e) => failed(6, NAME, e),
    }
}

/// Bounded market price of risk between 0.1 and 0.3 with flat tails.
pub fn tabulated_bounded_model(ys: &[f64]) -> robust_growth::Result<ReferenceModel> {
    let sigma = 0.2;
    let r = 0.02;
    let m = Table::new(
        vec![-3.0, -2.0, 2.0, 3.0],
        vec![r + 0.1 * sigma, r + 0.1 * sigma, r + 0.3 * sigma, r + 0.3 * sigma],
    )?;
    ReferenceModel::with_fitted_bounds(
        Coefficient::Constant(r),
        Coefficient::Tabulated(m),
        Coefficient::Affine {
            slope: -1.0,
            intercept: 0.0,
        },
        sigma,
        [0.15, 0.1],
        ys,
    )
}

pub fn apriori_bounds() -> CriterionResult {
    const NAME: &str = "a-priori bounds on the growth rate";
    let run = || -> robust_growth::Result<Vec<(bool, String)>> {
        let grid = Grid::new(-4.0, 4.0, 81)?;
        let ys = grid.nodes();
        let bs = ReferenceModel::black_scholes(0.02, 0.06, 0.2)?;
        let bs_box = AmbiguityBox::drift_only(-0.1, 0.1)?;
        let tab = tabulated_bounded_model(&ys)?;
        let tab_box = AmbiguityBox::drift_only(-0.05, 0.05)?;
        let opts = SolverOptions::default();
        let mut checked = 0;
        let mut violations = Vec::new();
        let mut check = |label: &str, l: f64, rate: f64, lo: f64, hi: f64| {
            checked += 1;
            if !(lo <= rate && rate <= hi) {
                violations.push(format!("{label} at lambda {l}: {rate} outside [{lo}, {hi}]"));
            }
        };
        for k in 1..=9 {
            let l = 0.1 * k as f64;
            let lam = RiskAversion::new(l)?;

            let rep = bs.validate_apriori(lam, &ys)?;
            let k2 = rep.k2.ok_or_else(|| robust_growth::Error::AssumptionUnverifiable("no K2".into()))?;
            let closed = bs_solution(0.02, 0.06, 0.2, bs_box.e21, lam)?;
            check("BS closed form", l, closed.growth_rate, rep.k1, k2);
            let num = solve_ebe(&bs, lam, &bs_box, &grid, &opts)?;
            check("BS numerical", l, num.growth_rate, rep.k1, k2);
            let pivot = Pivot::from_closed_form(&closed);
            let cfg = SimConfig::new(20.0, 0.02, 20_000, 4_242 + k)?;
            let est = simulate_paths(&bs, &bs_box, &pivot.eta, &pivot.strategy, &cfg)
                .and_then(|b| estimate_power_growth(&b, lam))?;
            check("BS Monte Carlo", l, est.rate, rep.k1, k2);

            let rep = tab.validate_apriori(lam, &ys)?;
            let k2 = rep.k2.ok_or_else(|| robust_growth::Error::AssumptionUnverifiable("no K2".into()))?;
            let num = solve_ebe(&tab, lam, &tab_box, &grid, &opts)?;
            check("tabulated numerical", l, num.growth_rate, rep.k1, k2);
        }
        let mut checks = vec![(true, format!("{checked} rates checked over lambda 0.1..0.9"))];
        checks.extend(violations.into_iter().map(|v| (false, v)));
        Ok(checks)
    };
    match run() {
        Ok(c) => result(7, NAME, c),
        Err(e) => failed(7, NAME, e),
    }
}

pub fn moment_bounds() -> CriterionResult {
    const NAME: &str = "bounded second moment of the factor";
    let run = || -> robust_growth::Result<Vec<(bool, String)>> {
        let (p, iv) = ou_example();
        let e11 = mean_reversion_box(&p, iv)?;
        let ambiguity = AmbiguityBox::new(
            e11,
            Interval::point(0.0),
            Interval::new(-0.1, 0.1)?,
            Interval::point(0.0),
        )?;
        let model = ReferenceModel::geometric_ou(&p)?;
        let ys = Grid::new(-4.0, 4.0, 81)?.nodes();
        let mut corners: Vec<Eta> = Vec::new();
        for c in ambiguity.corners() {
            if !corners.contains(&c) {
                corners.push(c);
            }
        }
        let cfg = SimConfig::new(SIM_HORIZON, SIM_DT, MOMENT_PATHS, 8_675_309)?;
        let mut checks = Vec::new();
        for (i, eta) in corners.iter().enumerate() {
            let trace = moment_trace(&model, &ambiguity, &EtaControl::Constant(*eta), &cfg, 10)?;
            let bound = second_moment_bound(&model, eta, cfg.y0, &ys)?;
            let sup = trace.sup();
            checks.push((sup <= bound, format!("corner {i}: sup E[Y^2] {sup:.4} <= {bound:.4}")));
            checks.push((
                trace.late_slope.abs() <= 3.0 * trace.late_slope_se,
                format!(
                    "corner {i}: late slope {:.2e} (se {:.1e})",
                    trace.late_slope, trace.late_slope_se
                ),
            ));
        }
        Ok(checks)
    };
    match run() {
        Ok(c) => result(8, NAME, c),
        Err(e) => failed(8, NAME, e),
    }
}

/// Scenario used for the reproducibility check.
pub const DETERMINISM_SCENARIO: &str = r#"
[model]
kind = "ou"
eta0 = 1.5
r = 0.01
alpha = 0.05
sigma = 0.3

[ambiguity]
mean_reversion = [1.0, 2.0]

[risk_aversion]
lambdas = [0.3, 0.5]

[simulation]
horizon = 5.0
dt = 0.01
n_paths = 2000
seed = 99

[[simulation.strategies]]
kind = "optimal"
id = "opt"

[[simulation.strategies]]
kind = "finite_horizon"
id = "finite"

[[simulation.controls]]
kind = "worst"
id = "worst"

[[simulation.controls]]
kind = "midpoint"
id = "mid"
"#;

pub fn determinism() -> CriterionResult {
    const NAME: &str = "byte-identical output for a fixed seed";
    let run = || -> Result<Vec<(bool, String)>, crate::error::CliError> {
        let scn = Scenario::parse(DETERMINISM_SCENARIO)?;
        let hash = scn.config.hash();
        let csv_with = |threads: usize| -> Result<String, crate::error::CliError> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("thread pool");
            pool.install(|| commands::simulate(&scn)).map(|r| r.to_csv(&hash))
        };
        let first = csv_with(1)?;
        let second = csv_with(1)?;
        let parallel = csv_with(4)?;
        Ok(vec![
            (first == second, "repeated single-threaded runs agree".to_string()),
            (first == parallel, "1 and 4 worker threads agree".to_string()),
            (first.lines().count() == 10, format!("{} lines", first.lines().count())),
        ])
    };
    match run() {
        Ok(c) => result(9, NAME, c),
        Err(e) => failed(9, NAME, e),
    }
}

pub const CRITERIA: [fn() -> CriterionResult; 9] = [
    black_scholes,
    ou_numerical,
    finite_horizon,
    zero_horizon,
    legendre_duality,
    saddle_point,
    apriori_bounds,
    moment_bounds,
    determinism,
];

/// Runs every criterion, calling `each` as results come in.
pub fn run_all(mut each: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .map(|f| {
            let r = f();
            each(&r);
            r
        })
        .collect()
}
