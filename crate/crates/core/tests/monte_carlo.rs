use robust_growth::closed_form::{bs_solution, mean_reversion_box, ou_robust_solution};
use robust_growth::ebe::{solve_ebe, Grid, SolverOptions};
use robust_growth::model::{AmbiguityBox, Eta, Interval, OuParams, ReferenceModel, RiskAversion};
use robust_growth::sim::{
    estimate_outperformance, estimate_power_growth, saddle_check, simulate_paths, EtaControl, Pivot, SimConfig,
    StrategySpec,
};

fn ou_setup() -> (OuParams, Interval, ReferenceModel, AmbiguityBox, RiskAversion) {
    let p = OuParams::new(1.5, 0.01, 0.05, 0.3).unwrap();
    let iv = Interval::new(1.0, 2.0).unwrap();
    let e11 = mean_reversion_box(&p, iv).unwrap();
    let b = AmbiguityBox::mean_reversion_only(e11.lo, e11.hi).unwrap();
    (p, iv, ReferenceModel::geometric_ou(&p).unwrap(), b, RiskAversion::new(0.5).unwrap())
}

#[test]
fn black_scholes_growth_matches_formula() {
    let model = ReferenceModel::black_scholes(0.02, 0.06, 0.2).unwrap();
    let drift = Interval::new(-0.1, 0.1).unwrap();
    let b = AmbiguityBox::drift_only(-0.1, 0.1).unwrap();
    let lam = RiskAversion::new(0.5).unwrap();
    let sol = bs_solution(0.02, 0.06, 0.2, drift, lam).unwrap();
    let pivot = Pivot::from_closed_form(&sol);
    let cfg = SimConfig::new(20.0, 0.01, 20_000, 11).unwrap();
    let batch = simulate_paths(&model, &b, &pivot.eta, &pivot.strategy, &cfg).unwrap();
    let est = estimate_power_growth(&batch, lam).unwrap();
    assert!((est.rate - 0.015).abs() <= (3.0 * est.std_error).max(5e-3), "{est:?}");
}

#[test]
fn bond_only_growth_is_lambda_r() {
    let (_, _, model, b, lam) = ou_setup();
    let cfg = SimConfig::new(5.0, 0.01, 256, 3).unwrap();
    let eta = EtaControl::Constant(Eta::new(b.e11.hi, 0.0, 0.0, 0.0));
    let batch = simulate_paths(&model, &b, &eta, &StrategySpec::Constant(0.0), &cfg).unwrap();
    let est = estimate_power_growth(&batch, lam).unwrap();
    assert!((est.rate - 0.5 * 0.01).abs() < 1e-12);
    let out = estimate_outperformance(&batch, 0.02).unwrap();
    assert_eq!(out.prob, 0.0);
}

#[test]
fn closed_form_pivot_is_a_saddle_point() {
    let (p, iv, model, b, lam) = ou_setup();
    let sol = ou_robust_solution(&p, iv, lam).unwrap();
    let pivot = Pivot::from_closed_form(&sol);
    let cfg = SimConfig::new(20.0, 0.01, 8_000, 7).unwrap();
    let mid = Eta::new(0.5 * (b.e11.lo + b.e11.hi), 0.0, 0.0, 0.0);
    let report = saddle_check(
        &model,
        &b,
        lam,
        &cfg,
        &pivot,
        &[EtaControl::Constant(Eta::ZERO), EtaControl::Constant(mid)],
        &[pivot.strategy.scaled(0.8), pivot.strategy.scaled(1.2)],
    )
    .unwrap();
    assert_eq!(report.strategy_side.len(), 2);
    assert_eq!(report.eta_side.len(), 2);
}

#[test]
fn numerical_pivot_is_a_saddle_point() {
    let (_, _, model, b, lam) = ou_setup();
    let grid = Grid::new(-4.0, 4.0, 161).unwrap();
    let sol = solve_ebe(&model, lam, &b, &grid, &SolverOptions::default()).unwrap();
    let pivot = Pivot::from_solution(&sol, &grid.nodes()).unwrap();
    let cfg = SimConfig::new(20.0, 0.01, 8_000, 9).unwrap();
    saddle_check(
        &model,
        &b,
        lam,
        &cfg,
        &pivot,
        &[EtaControl::Constant(Eta::ZERO)],
        &[pivot.strategy.scaled(0.8), pivot.strategy.scaled(1.2)],
    )
    .unwrap();
}

#[test]
fn thread_count_does_not_change_results() {
    let (p, iv, model, b, lam) = ou_setup();
    let sol = ou_robust_solution(&p, iv, lam).unwrap();
    let pivot = Pivot::from_closed_form(&sol);
    let cfg = SimConfig::new(2.0, 0.01, 1_000, 5).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_paths(&model, &b, &pivot.eta, &pivot.strategy, &cfg).unwrap())
    };
    assert_eq!(run(1), run(4));
}
