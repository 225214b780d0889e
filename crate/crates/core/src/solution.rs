use crate::model::Eta;

/// A solution `(Lambda, phi)` of the ergodic Bellman equation together with
/// its feedback controls.
pub trait EbeSolution {
    /// Optimal long-term growth rate `Lambda(lambda)`.
    fn growth_rate(&self) -> f64;
    fn phi(&self, y: f64) -> f64;
    fn phi_y(&self, y: f64) -> f64;
    /// Worst-case box point at factor level `y`.
    fn eta_star(&self, y: f64) -> Eta;
    /// Optimal fraction of wealth in the risky asset.
    fn pi_star(&self, y: f64) -> f64;
    fn nu_star(&self, y: f64) -> f64;
}
