//! Scenario files.
//!
//! A scenario is a TOML document with a `[model]` block and optional
//! `[ambiguity]`, `[risk_aversion]`, `[solver]`, `[simulation]` and
//! `[outperformance]` blocks. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Closed interval written as a two-element array `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct IntervalConfig {
    pub lo: f64,
    pub hi: f64,
}

impl TryFrom<[f64; 2]> for IntervalConfig {
    type Error = String;

    fn try_from([lo, hi]: [f64; 2]) -> Result<Self, String> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(format!("interval [{lo}, {hi}] must have finite endpoints"));
        }
        if lo > hi {
            return Err(format!("interval [{lo}, {hi}] has lo > hi"));
        }
        Ok(IntervalConfig { lo, hi })
    }
}

impl From<IntervalConfig> for [f64; 2] {
    fn from(iv: IntervalConfig) -> Self {
        [iv.lo, iv.hi]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientConfig {
    Constant(f64),
    Affine { slope: f64, intercept: f64 },
    Table { ys: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    BlackScholes {
        r: f64,
        m: f64,
        sigma: f64,
    },
    /// Geometric Ornstein-Uhlenbeck market.
    Ou {
        eta0: f64,
        r: f64,
        alpha: f64,
        sigma: f64,
    },
    Custom {
        r: CoefficientConfig,
        m: CoefficientConfig,
        g: CoefficientConfig,
        sigma: f64,
        rho: [f64; 2],
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguityConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e11: Option<IntervalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e12: Option<IntervalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e21: Option<IntervalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e22: Option<IntervalConfig>,
    /// Range of the factor mean-reversion speed; OU models only, exclusive
    /// with `e11`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_reversion: Option<IntervalConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskAversionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub y_min: f64,
    pub y_max: f64,
    pub n_points: usize,
    pub t_max: f64,
    pub tol: f64,
    pub check_every: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Number of equally spaced output samples of the value function.
    pub samples: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            y_min: -4.0,
            y_max: 4.0,
            n_points: 401,
            t_max: 200.0,
            tol: 1e-8,
            check_every: 1.0,
            dt: None,
            samples: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyConfig {
    /// Long-term optimal feedback, optionally scaled.
    Optimal {
        id: String,
        #[serde(default = "one")]
        scale: f64,
    },
    Constant {
        id: String,
        value: f64,
    },
    Affine {
        id: String,
        slope: f64,
        intercept: f64,
    },
    /// Optimal strategy for the simulation horizon (OU model only).
    FiniteHorizon { id: String },
}

impl StrategyConfig {
    pub fn id(&self) -> &str {
        match self {
            StrategyConfig::Optimal { id, .. }
            | StrategyConfig::Constant { id, .. }
            | StrategyConfig::Affine { id, .. }
            | StrategyConfig::FiniteHorizon { id } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    /// Worst-case feedback of the solution.
    Worst { id: String },
    Constant {
        id: String,
        #[serde(default)]
        e11: f64,
        #[serde(default)]
        e12: f64,
        #[serde(default)]
        e21: f64,
        #[serde(default)]
        e22: f64,
    },
    /// Centre of the ambiguity box.
    Midpoint { id: String },
}

impl ControlConfig {
    pub fn id(&self) -> &str {
        match self {
            ControlConfig::Worst { id } | ControlConfig::Constant { id, .. } | ControlConfig::Midpoint { id } => id,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_strategies() -> Vec<StrategyConfig> {
    vec![StrategyConfig::Optimal {
        id: "optimal".into(),
        scale: 1.0,
    }]
}

fn default_controls() -> Vec<ControlConfig> {
    vec![ControlConfig::Worst { id: "worst".into() }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub y0: f64,
    #[serde(default = "one")]
    pub x0: f64,
    #[serde(default = "default_guard")]
    pub guard: f64,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyConfig>,
    #[serde(default = "default_controls")]
    pub controls: Vec<ControlConfig>,
}

fn default_guard() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutperformanceConfig {
    pub c: Vec<f64>,
    #[serde(default = "default_n")]
    pub n: u32,
    /// Upper end of the sampled risk aversions for numerical curves.
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    #[serde(default = "default_n_lambdas")]
    pub n_lambdas: usize,
    /// Add a Monte Carlo column using the `[simulation]` block.
    #[serde(default)]
    pub simulate: bool,
}

fn default_n() -> u32 {
    10
}

fn default_lambda_max() -> f64 {
    0.95
}

fn default_n_lambdas() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub ambiguity: AmbiguityConfig,
    #[serde(default)]
    pub risk_aversion: RiskAversionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outperformance: Option<OutperformanceConfig>,
}

impl ScenarioConfig {
    /// Parses a scenario; syntax and type errors carry the line and column.
    pub fn parse(src: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = toml::from_str(src).map_err(|e| CliError::Config(refine(src, e)))?;
        cfg.check(src)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Lowercase hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        match (&self.risk_aversion.lambda, &self.risk_aversion.lambdas) {
            (Some(l), _) => vec![*l],
            (None, Some(ls)) => ls.clone(),
            (None, None) => Vec::new(),
        }
    }

    /// Applies command-line overrides of the simulation seed and path count.
    pub fn override_simulation(&mut self, seed: Option<u64>, paths: Option<usize>) {
        if let Some(sim) = self.simulation.as_mut() {
            if let Some(s) = seed {
                sim.seed = s;
            }
            if let Some(p) = paths {
                sim.n_paths = p;
            }
        }
    }

    /// Checks that need more than one field; errors point at the offending key.
    fn check(&self, src: &str) -> Result<(), CliError> {
        let err = |section: &str, key: &str, msg: String| CliError::at(src, section, key, msg);
        let ra = &self.risk_aversion;
        match (&ra.lambda, &ra.lambdas) {
            (Some(_), Some(_)) => {
                return Err(err("risk_aversion", "lambdas", "give either `lambda` or `lambdas`, not both".into()))
            }
            (None, Some(ls)) if ls.is_empty() => {
                return Err(err("risk_aversion", "lambdas", "`lambdas` must not be empty".into()))
            }
            _ => {}
        }
        for l in self.lambdas() {
            if !(l > 0.0 && l < 1.0) {
                let key = if ra.lambda.is_some() { "lambda" } else { "lambdas" };
                return Err(err("risk_aversion", key, format!("risk aversion {l} must lie in (0, 1)")));
            }
        }
        let amb = &self.ambiguity;
        for (key, iv) in [("e11", amb.e11), ("e12", amb.e12), ("e21", amb.e21), ("e22", amb.e22)] {
            if let Some(iv) = iv {
                if iv.lo > 0.0 || iv.hi < 0.0 {
                    return Err(err(
                        "ambiguity",
                        key,
                        format!("interval [{}, {}] must contain 0", iv.lo, iv.hi),
                    ));
                }
            }
        }
        if let Some(mr) = amb.mean_reversion {
            if !matches!(self.model, ModelConfig::Ou { .. }) {
                return Err(err("ambiguity", "mean_reversion", "only valid for `kind = \"ou\"`".into()));
            }
            if amb.e11.is_some() {
                return Err(err("ambiguity", "mean_reversion", "conflicts with `e11`".into()));
            }
            if mr.lo <= 0.0 {
                return Err(err("ambiguity", "mean_reversion", "speeds must be positive".into()));
            }
        }
        if let Some(sim) = &self.simulation {
            let mut ids: Vec<&str> = sim.strategies.iter().map(StrategyConfig::id).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(err("simulation", "strategies", "strategy ids must be unique".into()));
            }
            let mut ids: Vec<&str> = sim.controls.iter().map(ControlConfig::id).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(err("simulation", "controls", "control ids must be unique".into()));
            }
        }
        if let Some(out) = &self.outperformance {
            if out.c.is_empty() {
                return Err(err("outperformance", "c", "the list of thresholds is empty".into()));
            }
            if out.n == 0 {
                return Err(err("outperformance", "n", "must be a positive integer".into()));
            }
            if out.simulate && self.simulation.is_none() {
                return Err(err("outperformance", "simulate", "needs a [simulation] block".into()));
            }
        }
        Ok(())
    }
}

/// Unknown fields inside tagged tables are reported at the table header;
/// point at the key instead.
fn refine(src: &str, e: toml::de::Error) -> String {
    let msg = e.to_string();
    let field = e
        .message()
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next());
    let line = field.and_then(|f| {
        src.lines()
            .position(|l| l.split_once('=').is_some_and(|(k, _)| k.trim() == f))
            .map(|i| i + 1)
    });
    match (field, line) {
        (Some(f), Some(line)) => format!("line {line}: unknown key `{f}`\n{msg}"),
        _ => msg,
    }
}

/// 1-based line of `key` inside `[section]` (or of the section header), if present.
pub fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('[') {
            current = rest.trim_start_matches('[').trim_end_matches(']').trim().to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        let in_section = current == section || current.starts_with(&format!("{section}."));
        if in_section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

#[cfg(test)]
mod tests {
    use super::*;

    const OU: &str = r#"
[model]
kind = "ou"
eta0 = 1.5
r = 0.01
alpha = 0.05
sigma = 0.3

[ambiguity]
mean_reversion = [1.0, 2.0]

[risk_aversion]
lambda = 0.5

[solver]
n_points = 201

[simulation]
horizon = 10.0
dt = 0.01
n_paths = 100
seed = 7

[[simulation.strategies]]
kind = "optimal"
id = "opt"

[[simulation.strategies]]
kind = "optimal"
id = "opt_08"
scale = 0.8

[[simulation.controls]]
kind = "constant"
id = "zero"

[outperformance]
c = [0.2, 0.4]
"#;

    #[test]
    fn parses_full_scenario() {
        let cfg = ScenarioConfig::parse(OU).unwrap();
        assert_eq!(cfg.lambdas(), vec![0.5]);
        assert_eq!(cfg.solver.as_ref().unwrap().n_points, 201);
        assert_eq!(cfg.solver.as_ref().unwrap().y_min, -4.0);
        let sim = cfg.simulation.as_ref().unwrap();
        assert_eq!(sim.strategies.len(), 2);
        assert_eq!(sim.x0, 1.0);
        assert_eq!(cfg.outperformance.as_ref().unwrap().n, 10);
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg = ScenarioConfig::parse(OU).unwrap();
        let again = ScenarioConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }

    #[test]
    fn hash_tracks_overrides() {
        let cfg = ScenarioConfig::parse(OU).unwrap();
        let mut other = cfg.clone();
        other.override_simulation(Some(8), None);
        assert_ne!(cfg.hash(), other.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let src = OU.replace("sigma = 0.3", "sigma = 0.3\nvol = 1.0");
        let msg = ScenarioConfig::parse(&src).unwrap_err().to_string();
        assert!(msg.contains("line 8: unknown key `vol`"), "{msg}");
    }

    #[test]
    fn reversed_interval_is_rejected_with_line() {
        let src = OU.replace("mean_reversion = [1.0, 2.0]", "mean_reversion = [2.0, 1.0]");
        let msg = ScenarioConfig::parse(&src).unwrap_err().to_string();
        assert!(msg.contains("line 10"), "{msg}");
        assert!(msg.contains("lo > hi"), "{msg}");
    }

    #[test]
    fn semantic_errors_point_at_key() {
        let line_of = |src: &str, needle: &str| src.lines().position(|l| l == needle).unwrap() + 1;
        let src = OU.replace("c = [0.2, 0.4]", "c = []");
        let msg = ScenarioConfig::parse(&src).unwrap_err().to_string();
        assert!(msg.contains(&format!("line {}:", line_of(&src, "c = []"))), "{msg}");
        let src = OU.replace("lambda = 0.5", "lambda = 1.5");
        let msg = ScenarioConfig::parse(&src).unwrap_err().to_string();
        assert!(msg.contains(&format!("line {}:", line_of(&src, "lambda = 1.5"))), "{msg}");
    }

    #[test]
    fn interval_must_contain_zero() {
        let src = OU.replace("mean_reversion = [1.0, 2.0]", "e21 = [0.1, 0.2]");
        assert!(ScenarioConfig::parse(&src).is_err());
    }

    #[test]
    fn lambda_grid() {
        let src = OU.replace("lambda = 0.5", "lambdas = [0.1, 0.5]");
        assert_eq!(ScenarioConfig::parse(&src).unwrap().lambdas(), vec![0.1, 0.5]);
    }
}
