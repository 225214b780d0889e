//! Validated scenario: a parsed config turned into library types.

use robust_growth::closed_form::{bs_solution, mean_reversion_box, ou_nonrobust_solution, ou_robust_solution, EbeClosedForm};
use robust_growth::ebe::{Grid, SolverOptions};
use robust_growth::model::{AmbiguityBox, Coefficient, Interval, OuParams, ReferenceModel, RiskAversion, Table};
use robust_growth::sim::SimConfig;

use crate::config::{CoefficientConfig, IntervalConfig, ModelConfig, ScenarioConfig, SimulationConfig, SolverConfig};
use crate::error::CliError;

/// Models with an explicit solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Template {
    BlackScholes { r: f64, m: f64, sigma: f64, drift: Interval },
    Ou { params: OuParams, mean_reversion: Interval },
}

impl Template {
    pub fn closed_form(&self, lam: RiskAversion) -> Result<EbeClosedForm, robust_growth::Error> {
        match *self {
            Template::BlackScholes { r, m, sigma, drift } => bs_solution(r, m, sigma, drift, lam),
            Template::Ou { params, mean_reversion } => {
                if mean_reversion.width() == 0.0 && mean_reversion.lo == params.eta0 {
                    Ok(ou_nonrobust_solution(&params, lam))
                } else {
                    ou_robust_solution(&params, mean_reversion, lam)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: ReferenceModel,
    pub ambiguity: AmbiguityBox,
    pub template: Option<Template>,
    pub lambdas: Vec<RiskAversion>,
    pub solver: SolverConfig,
    pub grid: Grid,
    pub options: SolverOptions,
    /// Whether the numerical solver is requested explicitly.
    pub numerical_requested: bool,
}

fn interval(iv: Option<IntervalConfig>) -> Interval {
    iv.map_or(Interval::point(0.0), |iv| Interval { lo: iv.lo, hi: iv.hi })
}

fn coefficient(c: &CoefficientConfig) -> Result<Coefficient, robust_growth::Error> {
    Ok(match c {
        CoefficientConfig::Constant(v) => Coefficient::Constant(*v),
        CoefficientConfig::Affine { slope, intercept } => Coefficient::Affine {
            slope: *slope,
            intercept: *intercept,
        },
        CoefficientConfig::Table { ys, values } => Coefficient::Tabulated(Table::new(ys.clone(), values.clone())?),
    })
}

impl Scenario {
    pub fn parse(src: &str) -> Result<Self, CliError> {
        Self::from_config(ScenarioConfig::parse(src)?, src)
    }

    /// `src` is only used to anchor error messages.
    pub fn from_config(config: ScenarioConfig, src: &str) -> Result<Self, CliError> {
        let cfg_err = |section: &str, key: &str| {
            let (section, key) = (section.to_string(), key.to_string());
            move |e: robust_growth::Error| CliError::at(src, &section, &key, e.to_string())
        };
        let solver = config.solver.clone().unwrap_or_default();
        let grid = Grid::new(solver.y_min, solver.y_max, solver.n_points).map_err(cfg_err("solver", "n_points"))?;
        let options = SolverOptions {
            dt: solver.dt,
            t_max: solver.t_max,
            tol: solver.tol,
            check_every: solver.check_every,
            initial_value: 0.0,
        };
        if solver.samples < 2 {
            return Err(CliError::at(src, "solver", "samples", "need at least two samples".into()));
        }

        let amb = &config.ambiguity;
        let mut e11 = interval(amb.e11);
        let (e12, e21, e22) = (interval(amb.e12), interval(amb.e21), interval(amb.e22));
        let only_e11 = e12.width() == 0.0 && e21.width() == 0.0 && e22.width() == 0.0;
        let (model, template) = match &config.model {
            ModelConfig::BlackScholes { r, m, sigma } => {
                let model = ReferenceModel::black_scholes(*r, *m, *sigma).map_err(cfg_err("model", "kind"))?;
                let drift_only = e11.width() == 0.0 && e12.width() == 0.0 && e22.width() == 0.0;
                let t = drift_only.then_some(Template::BlackScholes {
                    r: *r,
                    m: *m,
                    sigma: *sigma,
                    drift: e21,
                });
                (model, t)
            }
            ModelConfig::Ou { eta0, r, alpha, sigma } => {
                let params = OuParams::new(*eta0, *r, *alpha, *sigma).map_err(cfg_err("model", "kind"))?;
                let model = ReferenceModel::geometric_ou(&params).map_err(cfg_err("model", "kind"))?;
                let mr = match amb.mean_reversion {
                    Some(iv) => {
                        let iv = Interval { lo: iv.lo, hi: iv.hi };
                        if !iv.contains(params.eta0) {
                            return Err(CliError::at(
                                src,
                                "ambiguity",
                                "mean_reversion",
                                format!("range [{}, {}] must contain eta0 = {}", iv.lo, iv.hi, params.eta0),
                            ));
                        }
                        e11 = mean_reversion_box(&params, iv).map_err(cfg_err("ambiguity", "mean_reversion"))?;
                        Some(iv)
                    }
                    None => {
                        let lo = params.eta0 - params.sigma * e11.hi;
                        let hi = params.eta0 - params.sigma * e11.lo;
                        (lo > 0.0).then_some(Interval { lo, hi })
                    }
                };
                let t = mr.filter(|_| only_e11).map(|mean_reversion| Template::Ou { params, mean_reversion });
                (model, t)
            }
            ModelConfig::Custom { r, m, g, sigma, rho } => {
                let model = ReferenceModel::with_fitted_bounds(
                    coefficient(r).map_err(cfg_err("model", "r"))?,
                    coefficient(m).map_err(cfg_err("model", "m"))?,
                    coefficient(g).map_err(cfg_err("model", "g"))?,
                    *sigma,
                    *rho,
                    &grid.nodes(),
                )
                .map_err(cfg_err("model", "kind"))?;
                (model, None)
            }
        };
        let ambiguity = AmbiguityBox::new(e11, e12, e21, e22).map_err(cfg_err("ambiguity", "e11"))?;
        let lambdas = config
            .lambdas()
            .into_iter()
            .map(RiskAversion::new)
            .collect::<Result<Vec<_>, _>>()
            .map_err(cfg_err("risk_aversion", "lambda"))?;
        if let Some(sim) = &config.simulation {
            sim_config(sim).map_err(cfg_err("simulation", "horizon"))?;
        }
        Ok(Scenario {
            numerical_requested: config.solver.is_some(),
            config,
            model,
            ambiguity,
            template,
            lambdas,
            solver,
            grid,
            options,
        })
    }

    /// Output sample points of the solver domain.
    pub fn sample_points(&self) -> Vec<f64> {
        let n = self.solver.samples;
        let (a, b) = (self.solver.y_min, self.solver.y_max);
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn require_lambdas(&self, src: &str) -> Result<(), CliError> {
        if self.lambdas.is_empty() {
            return Err(CliError::at(
                src,
                "risk_aversion",
                "lambda",
                "this command needs `lambda` or `lambdas`".into(),
            ));
        }
        Ok(())
    }
}

pub fn sim_config(sim: &SimulationConfig) -> Result<SimConfig, robust_growth::Error> {
    let mut cfg = SimConfig::new(sim.horizon, sim.dt, sim.n_paths, sim.seed)?;
    cfg.y0 = sim.y0;
    cfg.x0 = sim.x0;
    cfg.guard = sim.guard;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou(amb: &str) -> String {
        format!(
            "[model]\nkind = \"ou\"\neta0 = 1.5\nr = 0.01\nalpha = 0.05\nsigma = 0.3\n\n[ambiguity]\n{amb}\n\n[risk_aversion]\nlambda = 0.5\n"
        )
    }

    #[test]
    fn mean_reversion_range_gives_template() {
        let s = Scenario::parse(&ou("mean_reversion = [1.0, 2.0]")).unwrap();
        match s.template {
            Some(Template::Ou { mean_reversion, .. }) => assert_eq!(mean_reversion, Interval { lo: 1.0, hi: 2.0 }),
            other => panic!("{other:?}"),
        }
        assert!((s.ambiguity.e11.hi - 0.5 / 0.3).abs() < 1e-15);
        assert!(!s.numerical_requested);
    }

    #[test]
    fn e11_box_inverts_to_speeds() {
        let s = Scenario::parse(&ou("e11 = [-1.0, 1.0]")).unwrap();
        match s.template {
            Some(Template::Ou { mean_reversion, .. }) => {
                assert!((mean_reversion.lo - 1.2).abs() < 1e-15);
                assert!((mean_reversion.hi - 1.8).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn extra_directions_disable_template() {
        let s = Scenario::parse(&ou("e11 = [-1.0, 1.0]\ne21 = [-0.1, 0.1]")).unwrap();
        assert!(s.template.is_none());
    }

    #[test]
    fn range_must_contain_reference_speed() {
        let err = Scenario::parse(&ou("mean_reversion = [2.0, 3.0]")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line 9: [ambiguity] mean_reversion"), "{err}");
    }

    #[test]
    fn singleton_box_matches_nonrobust() {
        let s = Scenario::parse(&ou("")).unwrap();
        let lam = RiskAversion::new(0.5).unwrap();
        let t = s.template.unwrap();
        let p = OuParams::new(1.5, 0.01, 0.05, 0.3).unwrap();
        assert_eq!(t.closed_form(lam).unwrap().growth_rate, ou_nonrobust_solution(&p, lam).growth_rate);
    }
}
