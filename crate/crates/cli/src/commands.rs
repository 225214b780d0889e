//! The `solve`, `simulate` and `outperform` commands.

use robust_growth::closed_form::{ou_robust_solution, EbeClosedForm};
use robust_growth::ebe::{check_ergodic_branch, inner_minimize, solve_ebe, EbeNumericalSolution};
use robust_growth::model::{Eta, RiskAversion};
use robust_growth::outperformance::{
    legendre_rate, numerical_curve, ou_rate_closed_form, CurveOptions, GrowthCurve, RateResult,
};
use robust_growth::sim::{
    estimate_outperformance, estimate_power_growth, nearly_optimal_coefficients, simulate_paths, EtaControl,
    Pivot, StrategySpec,
};
use robust_growth::EbeSolution;

use crate::config::{ControlConfig, StrategyConfig};
use crate::error::CliError;
use crate::report::{fmt, Report};
use crate::scenario::{sim_config, Scenario, Template};

pub const SOLVE_COLUMNS: [&str; 16] = [
    "method",
    "lambda",
    "growth_rate",
    "residual",
    "branch_check",
    "pi_slope",
    "pi_intercept",
    "y",
    "phi",
    "phi_y",
    "pi_star",
    "nu_star",
    "eta11",
    "eta12",
    "eta21",
    "eta22",
];

pub const SIMULATE_COLUMNS: [&str; 9] = [
    "lambda",
    "strategy_id",
    "eta_id",
    "T",
    "dt",
    "n_paths",
    "seed",
    "rate",
    "std_error",
];

pub const OUTPERFORM_COLUMNS: [&str; 9] = [
    "c",
    "rate",
    "lambda_c",
    "legendre_rate",
    "legendre_lambda_c",
    "strategy_slope",
    "strategy_intercept",
    "mc_prob",
    "mc_log_rate",
];

/// Least-squares line through `(x, y)`.
pub fn affine_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Sup over `ys` of the pointwise mismatch of the closed form in the
/// stationary equation.
pub fn closed_form_residual(scn: &Scenario, lam: RiskAversion, sol: &EbeClosedForm, ys: &[f64]) -> f64 {
    let diffusion = 0.5 * scn.model.rho_norm_sq();
    let rho_hat = scn.model.rho_hat(lam);
    ys.iter()
        .map(|&y| {
            let py = sol.phi_y(y);
            let (_, inf) = inner_minimize(&scn.model, lam, py, y, &scn.ambiguity);
            let rhs = diffusion * sol.phi_quad + 0.5 * rho_hat * rho_hat * py * py + inf;
            (rhs - sol.growth_rate).abs()
        })
        .fold(0.0, f64::max)
}

#[allow(clippy::too_many_arguments)]
fn solution_rows(
    report: &mut Report,
    method: &str,
    lam: RiskAversion,
    sol: &dyn EbeSolution,
    residual: f64,
    branch: &str,
    coefs: (f64, f64),
    ys: &[f64],
) {
    let phi0 = sol.phi(0.0);
    for &y in ys {
        let eta = sol.eta_star(y);
        report.push(vec![
            method.to_string(),
            fmt(lam.lambda()),
            fmt(sol.growth_rate()),
            fmt(residual),
            branch.to_string(),
            fmt(coefs.0),
            fmt(coefs.1),
            fmt(y),
            fmt(sol.phi(y) - phi0),
            fmt(sol.phi_y(y)),
            fmt(sol.pi_star(y)),
            fmt(sol.nu_star(y)),
            fmt(eta.e11),
            fmt(eta.e12),
            fmt(eta.e21),
            fmt(eta.e22),
        ]);
    }
}

fn numerical(scn: &Scenario, lam: RiskAversion) -> Result<EbeNumericalSolution, CliError> {
    Ok(solve_ebe(&scn.model, lam, &scn.ambiguity, &scn.grid, &scn.options)?)
}

pub fn solve(scn: &Scenario) -> Result<Report, CliError> {
    let ys = scn.sample_points();
    let mut report = Report::new(&SOLVE_COLUMNS);
    for &lam in &scn.lambdas {
        if let Some(t) = scn.template {
            let sol = t.closed_form(lam)?;
            let branch = match check_ergodic_branch(
                &scn.model,
                lam,
                &scn.ambiguity,
                &scn.grid.nodes(),
                |y| sol.phi_y(y),
                |y| sol.eta_star(y),
            ) {
                Ok(_) => "ok",
                Err(robust_growth::Error::NonErgodicBranch { .. }) => "violated",
                Err(e) => return Err(e.into()),
            };
            let residual = closed_form_residual(scn, lam, &sol, &ys);
            let coefs = (sol.pi_slope, sol.pi_intercept);
            solution_rows(&mut report, "closed_form", lam, &sol, residual, branch, coefs, &ys);
        }
        if scn.template.is_none() || scn.numerical_requested {
            let sol = numerical(scn, lam)?;
            let pis: Vec<f64> = ys.iter().map(|&y| sol.pi_star(y)).collect();
            let coefs = affine_fit(&ys, &pis);
            let branch = if sol.converged { "ok" } else { "not_converged" };
            solution_rows(&mut report, "numerical", lam, &sol, sol.residual_sup, branch, coefs, &ys);
        }
    }
    Ok(report)
}

/// Saddle candidate at `lam`: closed form when available, numerical otherwise.
pub fn pivot(scn: &Scenario, lam: RiskAversion) -> Result<Pivot, CliError> {
    match scn.template {
        Some(t) => Ok(Pivot::from_closed_form(&t.closed_form(lam)?)),
        None => {
            let sol = numerical(scn, lam)?;
            Ok(Pivot::from_solution(&sol, &scn.grid.nodes())?)
        }
    }
}

fn strategy(scn: &Scenario, pivot: &Pivot, lam: RiskAversion, s: &StrategyConfig) -> Result<StrategySpec, CliError> {
    Ok(match s {
        StrategyConfig::Optimal { scale, .. } => {
            if *scale == 1.0 {
                pivot.strategy.clone()
            } else {
                pivot.strategy.scaled(*scale)
            }
        }
        StrategyConfig::Constant { value, .. } => StrategySpec::Constant(*value),
        StrategyConfig::Affine { slope, intercept, .. } => StrategySpec::affine(*slope, *intercept),
        StrategyConfig::FiniteHorizon { id } => match scn.template {
            Some(Template::Ou { params, .. }) => StrategySpec::FiniteHorizonOu {
                params,
                lambda: lam.lambda(),
            },
            _ => {
                return Err(CliError::Config(format!(
                    "[simulation] strategy `{id}`: finite_horizon needs an `ou` model without extra ambiguity"
                )))
            }
        },
    })
}

fn control(scn: &Scenario, pivot: &Pivot, c: &ControlConfig) -> Result<EtaControl, CliError> {
    let ctrl = match c {
        ControlConfig::Worst { .. } => pivot.eta.clone(),
        ControlConfig::Constant { e11, e12, e21, e22, .. } => EtaControl::Constant(Eta::new(*e11, *e12, *e21, *e22)),
        ControlConfig::Midpoint { .. } => {
            let b = &scn.ambiguity;
            EtaControl::Constant(Eta::new(
                b.e11.midpoint(),
                b.e12.midpoint(),
                b.e21.midpoint(),
                b.e22.midpoint(),
            ))
        }
    };
    if !ctrl.within(&scn.ambiguity) {
        return Err(CliError::Config(format!(
            "[simulation] control `{}` leaves the ambiguity box",
            c.id()
        )));
    }
    Ok(ctrl)
}

pub fn simulate(scn: &Scenario) -> Result<Report, CliError> {
    let sim = scn
        .config
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a [simulation] block".into()))?;
    let cfg = sim_config(sim).map_err(|e| CliError::Config(format!("[simulation] {e}")))?;
    let mut report = Report::new(&SIMULATE_COLUMNS);
    for &lam in &scn.lambdas {
        let pivot = pivot(scn, lam)?;
        for s in &sim.strategies {
            let spec = strategy(scn, &pivot, lam, s)?;
            for c in &sim.controls {
                let eta = control(scn, &pivot, c)?;
                let batch = simulate_paths(&scn.model, &scn.ambiguity, &eta, &spec, &cfg)?;
                let est = estimate_power_growth(&batch, lam)?;
                report.push(vec![
                    fmt(lam.lambda()),
                    s.id().to_string(),
                    c.id().to_string(),
                    fmt(sim.horizon),
                    fmt(sim.dt),
                    sim.n_paths.to_string(),
                    sim.seed.to_string(),
                    fmt(est.rate),
                    fmt(est.std_error),
                ]);
            }
        }
    }
    Ok(report)
}

struct OutperformRow {
    primary: RateResult,
    legendre: RateResult,
    strategy: StrategySpec,
    coefs: (f64, f64),
    eta: EtaControl,
}

pub fn outperform(scn: &Scenario) -> Result<Report, CliError> {
    let out = scn
        .config
        .outperformance
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs an [outperformance] block".into()))?;
    let mut rows = Vec::with_capacity(out.c.len());
    match scn.template {
        Some(Template::Ou { params, mean_reversion }) => {
            let a = mean_reversion.lo;
            let gamma = params.gamma_const();
            let curve = GrowthCurve::closed_form_ou(a, gamma)?;
            let worst = ou_robust_solution(&params, mean_reversion, RiskAversion::new(0.5)?)?.eta_star;
            for &c in &out.c {
                rows.push(OutperformRow {
                    primary: ou_rate_closed_form(a, gamma, c)?,
                    legendre: legendre_rate(&curve, c)?,
                    strategy: StrategySpec::NearlyOptimal { params, a, c, n: out.n },
                    coefs: nearly_optimal_coefficients(&params, a, c, out.n),
                    eta: EtaControl::Constant(worst),
                });
            }
        }
        _ => {
            let opts = CurveOptions {
                lambda_max: out.lambda_max,
                n_lambdas: out.n_lambdas,
                grid: scn.grid,
                solver: scn.options,
                richardson: true,
            };
            let curve = numerical_curve(&scn.model, &scn.ambiguity, &opts)?;
            let smallest = robust_growth::outperformance::chebyshev_lambdas(out.lambda_max, out.n_lambdas)[0];
            let ys = scn.sample_points();
            for &c in &out.c {
                let rate = legendre_rate(&curve, c)?;
                let target = legendre_rate(&curve, c + 1.0 / out.n as f64)?;
                let lam = RiskAversion::new(target.lambda_c.max(smallest))?;
                let sol = numerical(scn, lam)?;
                let pivot = Pivot::from_solution(&sol, &scn.grid.nodes())?;
                let pis: Vec<f64> = ys.iter().map(|&y| sol.pi_star(y)).collect();
                rows.push(OutperformRow {
                    primary: rate,
                    legendre: rate,
                    strategy: pivot.strategy,
                    coefs: affine_fit(&ys, &pis),
                    eta: pivot.eta,
                });
            }
        }
    }
    let sim = if out.simulate {
        let s = scn.config.simulation.as_ref().expect("checked at parse time");
        Some(sim_config(s).map_err(|e| CliError::Config(format!("[simulation] {e}")))?)
    } else {
        None
    };
    let mut report = Report::new(&OUTPERFORM_COLUMNS);
    for row in rows {
        let (prob, log_rate) = match &sim {
            Some(cfg) => {
                let batch = simulate_paths(&scn.model, &scn.ambiguity, &row.eta, &row.strategy, cfg)?;
                let est = estimate_outperformance(&batch, row.primary.c)?;
                (fmt(est.prob), fmt(est.log_rate))
            }
            None => (String::new(), String::new()),
        };
        report.push(vec![
            fmt(row.primary.c),
            fmt(row.primary.rate),
            fmt(row.primary.lambda_c),
            fmt(row.legendre.rate),
            fmt(row.legendre.lambda_c),
            fmt(row.coefs.0),
            fmt(row.coefs.1),
            prob,
            log_rate,
        ]);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const OU: &str = "[model]\nkind = \"ou\"\neta0 = 1.5\nr = 0.01\nalpha = 0.05\nsigma = 0.3\n\n[ambiguity]\nmean_reversion = [1.0, 2.0]\n\n[risk_aversion]\nlambda = 0.5\n";

    #[test]
    fn affine_fit_recovers_line() {
        let xs = [-1.0, 0.0, 1.0, 2.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 0.5).collect();
        let (s, i) = affine_fit(&xs, &ys);
        assert!((s - 3.0).abs() < 1e-14 && (i + 0.5).abs() < 1e-14);
    }

    #[test]
    fn solve_reports_closed_form_rate() {
        let scn = Scenario::parse(OU).unwrap();
        let report = solve(&scn).unwrap();
        assert_eq!(report.rows.len(), 41);
        let rate: f64 = report.rows[0][2].parse().unwrap();
        assert!((rate - 0.1715161).abs() < 5e-8);
        assert_eq!(report.rows[0][0], "closed_form");
        assert_eq!(report.rows[0][4], "ok");
        let residual: f64 = report.rows[0][3].parse().unwrap();
        assert!(residual < 1e-12, "{residual}");
    }

    #[test]
    fn solve_emits_both_methods_when_solver_given() {
        let src = format!("{OU}\n[solver]\nn_points = 161\nsamples = 5\n");
        let report = solve(&Scenario::parse(&src).unwrap()).unwrap();
        assert_eq!(report.rows.len(), 10);
        let a: f64 = report.rows[0][2].parse().unwrap();
        let b: f64 = report.rows[5][2].parse().unwrap();
        assert_eq!(report.rows[5][0], "numerical");
        assert!((a - b).abs() < 1e-3);
    }

    #[test]
    fn outperform_has_kink() {
        let src = format!("{OU}\n[outperformance]\nc = [0.1, 0.2, 0.3, 0.5]\n");
        let report = outperform(&Scenario::parse(&src).unwrap()).unwrap();
        let kink = 0.25 + robust_growth::model::OuParams::new(1.5, 0.01, 0.05, 0.3).unwrap().gamma_const();
        for row in &report.rows {
            let c: f64 = row[0].parse().unwrap();
            let rate: f64 = row[1].parse().unwrap();
            let leg: f64 = row[3].parse().unwrap();
            if c <= kink {
                assert_eq!(rate, 0.0);
            } else {
                assert!(rate < 0.0);
            }
            assert!((rate - leg).abs() < 1e-6);
            assert!(row[7].is_empty());
        }
    }

    #[test]
    fn bond_only_rate_is_lambda_r() {
        let src = format!(
            "{OU}\n[simulation]\nhorizon = 2.0\ndt = 0.01\nn_paths = 64\nseed = 1\n\n[[simulation.strategies]]\nkind = \"constant\"\nid = \"bond\"\nvalue = 0.0\n"
        );
        let report = simulate(&Scenario::parse(&src).unwrap()).unwrap();
        let rate: f64 = report.rows[0][7].parse().unwrap();
        assert!((rate - 0.005).abs() < 1e-15);
    }

    #[test]
    fn control_outside_box_is_config_error() {
        let src = format!(
            "{OU}\n[simulation]\nhorizon = 1.0\ndt = 0.01\nn_paths = 8\nseed = 1\n\n[[simulation.controls]]\nkind = \"constant\"\nid = \"far\"\ne11 = 5.0\n"
        );
        let err = simulate(&Scenario::parse(&src).unwrap()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
