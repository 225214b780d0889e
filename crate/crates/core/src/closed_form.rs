//! Exact solutions for constant coefficients with drift ambiguity and for
//! the geometric Ornstein–Uhlenbeck market, plus its finite-horizon value.

use libm::{exp, log as ln, pow, sqrt};

use crate::model::{Eta, Interval, OuParams, RiskAversion};
use crate::{EbeSolution, Error, Result};

/// Quadratic solution `phi(y) = A y^2 / 2 + B y` with constant worst case
/// and affine optimal fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EbeClosedForm {
    pub growth_rate: f64,
    pub phi_quad: f64,
    pub phi_lin: f64,
    pub eta_star: Eta,
    pub pi_slope: f64,
    pub pi_intercept: f64,
}

impl EbeSolution for EbeClosedForm {
    fn growth_rate(&self) -> f64 {
        self.growth_rate
    }

    fn phi(&self, y: f64) -> f64 {
        0.5 * self.phi_quad * y * y + self.phi_lin * y
    }

    fn phi_y(&self, y: f64) -> f64 {
        self.phi_quad * y + self.phi_lin
    }

    fn eta_star(&self, _y: f64) -> Eta {
        self.eta_star
    }

    fn pi_star(&self, y: f64) -> f64 {
        self.pi_slope * y + self.pi_intercept
    }

    /// Identically zero in both explicit models.
    fn nu_star(&self, _y: f64) -> f64 {
        0.0
    }
}

/// Constant coefficients with the risky drift perturbed by `sigma e21`,
/// `e21` in `drift_interval`.
pub fn bs_solution(
    r: f64,
    m: f64,
    sigma: f64,
    drift_interval: Interval,
    lam: RiskAversion,
) -> Result<EbeClosedForm> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma", "volatility must be positive"));
    }
    if !(r > 0.0) {
        return Err(Error::invalid("r", "short rate must be positive"));
    }
    let l = lam.lambda();
    let theta = (m - r) / sigma;
    let e21 = drift_interval.clamp(-theta);
    let tilted = theta + e21;
    Ok(EbeClosedForm {
        growth_rate: 0.5 * l / (1.0 - l) * tilted * tilted + l * r,
        phi_quad: 0.0,
        phi_lin: 0.0,
        eta_star: Eta::new(0.0, 0.0, e21, 0.0),
        pi_slope: 0.0,
        pi_intercept: tilted / ((1.0 - l) * sigma),
    })
}

/// Which root of the quadratic for the `y^2` coefficient of `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuRoot {
    /// The ergodic branch.
    Minus,
    /// The explosive branch; never the answer, kept for branch-selection tests.
    Plus,
}

/// Parabolic EBE solution of the geometric OU market for either root.
pub fn ou_branch(p: &OuParams, lam: RiskAversion, root: OuRoot) -> EbeClosedForm {
    let l = lam.lambda();
    let s2 = p.sigma * p.sigma;
    let sq = sqrt(1.0 - l);
    let k = match root {
        OuRoot::Minus => 1.0 - sq,
        OuRoot::Plus => 1.0 + sq,
    };
    let c0 = p.excess_drift();
    let a = k * p.eta0 / s2;
    EbeClosedForm {
        growth_rate: 0.5 * k * p.eta0 + l * p.gamma_const(),
        phi_quad: a,
        phi_lin: -l * c0 / s2,
        eta_star: Eta::ZERO,
        pi_slope: (s2 * a - p.eta0) / ((1.0 - l) * s2),
        pi_intercept: c0 / s2,
    }
}

/// Long-term solution without ambiguity.
pub fn ou_nonrobust_solution(p: &OuParams, lam: RiskAversion) -> EbeClosedForm {
    let sol = ou_branch(p, lam, OuRoot::Minus);
    debug_assert!(sol.phi_quad < p.eta0 / (p.sigma * p.sigma));
    sol
}

/// Long-term solution when the mean-reversion speed is only known to lie in
/// `[a, b]` around the reference `eta0`; the worst case is the slowest speed.
pub fn ou_robust_solution(
    p: &OuParams,
    mean_reversion: Interval,
    lam: RiskAversion,
) -> Result<EbeClosedForm> {
    let Interval { lo: a, hi: b } = mean_reversion;
    if !(0.0 < a && a <= p.eta0 && p.eta0 <= b) {
        return Err(Error::invalid(
            "mean reversion interval",
            alloc::format!("need 0 < a <= eta0 <= b, got a = {a}, eta0 = {}, b = {b}", p.eta0),
        ));
    }
    let mut sol = ou_nonrobust_solution(&p.with_mean_reversion(a), lam);
    sol.eta_star = Eta::new((p.eta0 - a) / p.sigma, 0.0, 0.0, 0.0);
    Ok(sol)
}

/// Box interval for `e11` equivalent to a mean-reversion interval `[a, b]`.
pub fn mean_reversion_box(p: &OuParams, mean_reversion: Interval) -> Result<Interval> {
    Interval::new(
        (p.eta0 - mean_reversion.hi) / p.sigma,
        (p.eta0 - mean_reversion.lo) / p.sigma,
    )
}

/// Finite-horizon value and strategy of the geometric OU market without
/// ambiguity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteHorizonOu {
    params: OuParams,
    lam: RiskAversion,
}

impl FiniteHorizonOu {
    pub fn new(params: OuParams, lam: RiskAversion) -> Self {
        FiniteHorizonOu { params, lam }
    }

    fn q(&self) -> f64 {
        1.0 / sqrt(1.0 - self.lam.lambda())
    }

    /// `q - q^2` with `q = (1 - lambda)^(-1/2)`.
    fn gap(&self) -> f64 {
        let q = self.q();
        q - q * q
    }

    /// `lambda / (lambda - 1) * c0 / sigma^2`.
    fn lin(&self) -> f64 {
        self.lam.beta() * self.params.excess_drift() / (self.params.sigma * self.params.sigma)
    }

    fn decay(&self, t: f64) -> f64 {
        exp(-self.params.eta0 * self.q() * t)
    }

    pub fn a_plus(&self, t: f64) -> f64 {
        let d = self.decay(t);
        1.0 - 0.5 * (1.0 - self.q()) * (1.0 + d * d)
    }

    pub fn a_minus(&self, t: f64) -> f64 {
        let d = self.decay(t);
        1.0 - 0.5 * (1.0 - self.q()) * (1.0 - d * d)
    }

    pub fn b_t(&self, t: f64, y: f64) -> f64 {
        let p = &self.params;
        let s2 = p.sigma * p.sigma;
        let c0 = p.excess_drift();
        -p.eta0 / (2.0 * s2) * self.gap() * y * y + self.lin() * y
            - 0.5 * (p.eta0 * self.gap() + self.lam.beta() * c0 * c0 / s2) * t
    }

    pub fn c_t(&self, t: f64, y: f64) -> f64 {
        let p = &self.params;
        let s2 = p.sigma * p.sigma;
        let l = self.lam.lambda();
        let c0 = p.excess_drift();
        let d = self.decay(t);
        p.eta0 / (2.0 * s2) * self.gap() * d * d * y * y - self.lin() * d * y
            + 0.25 / s2 * l * l / pow(1.0 - l, 1.5) * c0 * c0 * (1.0 - d * d)
    }

    /// Logarithm of the maximal expected utility at horizon `t`.
    pub fn ln_value(&self, x0: f64, y0: f64, t: f64) -> Result<f64> {
        if !(x0 > 0.0) {
            return Err(Error::invalid("x0", "initial wealth must be positive"));
        }
        if !(t >= 0.0) {
            return Err(Error::invalid("T", "horizon must be nonnegative"));
        }
        let l = self.lam.lambda();
        let am = self.a_minus(t);
        let inner = -0.5 * ln(am) + self.b_t(t, y0) + l / (1.0 - l) * self.params.r * t
            + self.c_t(t, y0) / am;
        Ok(-ln(l) + l * ln(x0) + (1.0 - l) * inner)
    }

    /// Maximal expected utility `U_T(x0)` at horizon `t`.
    pub fn value(&self, x0: f64, y0: f64, t: f64) -> Result<f64> {
        self.ln_value(x0, y0, t).map(exp)
    }

    /// Slope of the optimal fraction with time to go `s`.
    pub fn a_coef(&self, s: f64) -> f64 {
        let p = &self.params;
        -p.eta0 / (p.sigma * p.sigma) * self.q() * self.a_plus(s) / self.a_minus(s)
    }

    /// Intercept of the optimal fraction with time to go `s`.
    pub fn b_coef(&self, s: f64) -> f64 {
        let p = &self.params;
        let l = self.lam.lambda();
        p.excess_drift() / (p.sigma * p.sigma)
            * (1.0 + l / ((1.0 - l) * self.a_minus(s)) * self.decay(s))
    }

    /// Optimal fraction at time `t` of a horizon `horizon` when the factor is at `y`.
    pub fn strategy(&self, t: f64, horizon: f64, y: f64) -> f64 {
        let s = horizon - t;
        self.a_coef(s) * y + self.b_coef(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AmbiguityBox, ReferenceModel};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn example() -> OuParams {
        OuParams::new(1.0, 0.01, 0.05, 0.3).unwrap()
    }

    fn half() -> RiskAversion {
        RiskAversion::new(0.5).unwrap()
    }

    #[test]
    fn black_scholes_examples() {
        let iv = Interval::new(-0.1, 0.1).unwrap();
        let sol = bs_solution(0.02, 0.06, 0.2, iv, half()).unwrap();
        assert_abs_diff_eq!(sol.eta_star.e21, -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.growth_rate, 0.015, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.pi_star(3.0), 1.0, epsilon = 1e-14);

        let inside = bs_solution(0.02, 0.03, 0.2, iv, half()).unwrap();
        assert_abs_diff_eq!(inside.eta_star.e21, -0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(inside.growth_rate, 0.5 * 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(inside.pi_intercept, 0.0, epsilon = 1e-15);

        let tiny = bs_solution(0.02, 0.06, 0.2, iv, RiskAversion::new(1e-10).unwrap()).unwrap();
        assert!(tiny.growth_rate < 1e-10);
    }

    #[test]
    fn ou_nonrobust_example() {
        let p = example();
        assert_abs_diff_eq!(p.gamma_const(), 0.0501388888888889, epsilon = 1e-15);
        let sol = ou_nonrobust_solution(&p, half());
        assert_abs_diff_eq!(sol.growth_rate, 0.17151605, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.pi_slope, -1.0 / (0.09 * libm::sqrt(0.5)), epsilon = 1e-12);
        assert_abs_diff_eq!(sol.pi_intercept, 0.085 / 0.09, epsilon = 1e-14);

        let small = ou_nonrobust_solution(&p, RiskAversion::new(1e-9).unwrap());
        assert!(small.growth_rate < 1e-8);
        assert_abs_diff_eq!(small.pi_slope, -1.0 / 0.09, epsilon = 1e-7);
    }

    #[test]
    fn rejected_root_is_not_returned() {
        let p = example();
        let good = ou_nonrobust_solution(&p, half());
        let bad = ou_branch(&p, half(), OuRoot::Plus);
        assert!(bad.growth_rate > good.growth_rate);
        assert_ne!(good, bad);
        assert!(good.phi_quad < p.eta0 / (p.sigma * p.sigma));
    }

    #[test]
    fn ou_robust_examples() {
        let p = OuParams::new(1.5, 0.01, 0.05, 0.3).unwrap();
        let sol = ou_robust_solution(&p, Interval::new(1.0, 2.0).unwrap(), half()).unwrap();
        assert_abs_diff_eq!(sol.growth_rate, 0.17151605, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.eta_star.e11, 0.5 / 0.3, epsilon = 1e-14);

        let q = example();
        let same = ou_robust_solution(&q, Interval::new(1.0, 1.0).unwrap(), half()).unwrap();
        assert_eq!(same, ou_nonrobust_solution(&q, half()));

        let slower = ou_robust_solution(&p, Interval::new(0.8, 2.0).unwrap(), half()).unwrap();
        assert!(slower.growth_rate < sol.growth_rate);
        assert!(ou_robust_solution(&p, Interval::new(1.6, 2.0).unwrap(), half()).is_err());
    }

    /// Substitutes the robust parabola into the condensed equation, minimizing
    /// over a dense grid of the box.
    #[test]
    fn robust_solution_solves_condensed_equation() {
        let p = OuParams::new(1.5, 0.01, 0.05, 0.3).unwrap();
        let iv = Interval::new(1.0, 2.0).unwrap();
        let lam = RiskAversion::new(0.4).unwrap();
        let sol = ou_robust_solution(&p, iv, lam).unwrap();
        let model = ReferenceModel::geometric_ou(&p).unwrap();
        let e11 = mean_reversion_box(&p, iv).unwrap();
        let rn = model.rho_norm_sq();
        for i in 0..41 {
            let y = -4.0 + 0.2 * i as f64;
            let py = sol.phi_y(y);
            let mut best = f64::INFINITY;
            let mut arg = 0.0;
            for k in 0..=400 {
                let e = e11.lo + e11.width() * k as f64 / 400.0;
                let c = model.condensed(lam, &Eta::new(e, 0.0, 0.0, 0.0), y);
                let v = c.n + py * c.m_ebe;
                if v < best {
                    best = v;
                    arg = e;
                }
            }
            let c = model.condensed(lam, &sol.eta_star, y);
            let rhs = 0.5 * rn * sol.phi_quad + 0.5 * c.rho_hat * c.rho_hat * py * py + c.n + py * c.m_ebe;
            assert_abs_diff_eq!(rhs, sol.growth_rate, epsilon = 1e-12);
            assert!(c.n + py * c.m_ebe <= best + 1e-12);
            if y != 0.0 {
                assert_abs_diff_eq!(arg, e11.hi, epsilon = 1e-12);
            }
        }
        assert!(AmbiguityBox::mean_reversion_only(e11.lo, e11.hi).is_ok());
    }

    #[test]
    fn finite_horizon_limits() {
        let p = example();
        let lam = half();
        let fh = FiniteHorizonOu::new(p, lam);
        let q = 1.0 / libm::sqrt(0.5);
        assert_abs_diff_eq!(fh.a_plus(0.0), q, epsilon = 1e-14);
        assert_abs_diff_eq!(fh.a_minus(0.0), 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(fh.a_plus(200.0), 0.5 * (1.0 + q), epsilon = 1e-12);
        assert_abs_diff_eq!(fh.a_minus(200.0), 0.5 * (1.0 + q), epsilon = 1e-12);

        for (x0, y0) in [(1.0, 0.0), (2.5, -0.7), (0.3, 1.1)] {
            let v = fh.value(x0, y0, 0.0).unwrap();
            let expect = libm::pow(x0, 0.5) / 0.5;
            assert_relative_eq!(v, expect, max_relative = 1e-12);
        }

        let long = ou_nonrobust_solution(&p, lam);
        assert_abs_diff_eq!(fh.a_coef(200.0), long.pi_slope, epsilon = 1e-8);
        assert_abs_diff_eq!(fh.b_coef(200.0), long.pi_intercept, epsilon = 1e-8);

        let model = ReferenceModel::geometric_ou(&p).unwrap();
        for y in [-1.0, 0.0, 0.8] {
            let merton = model.market_price_of_risk(y) / (0.5 * p.sigma);
            assert_abs_diff_eq!(fh.strategy(3.0, 3.0, y), merton, epsilon = 1e-12);
        }
    }

    #[test]
    fn finite_horizon_value_slope() {
        // (1/T) ln U_T at T = 500, computed independently in double precision:
        // 0.17281999 (the 1/lambda prefactor contributes ln 2 / 500).
        let fh = FiniteHorizonOu::new(example(), half());
        let slope = fh.ln_value(1.0, 0.0, 500.0).unwrap() / 500.0;
        assert_abs_diff_eq!(slope, 0.17281999, epsilon = 1e-8);
        let without_prefactor = slope - libm::log(2.0) / 500.0;
        let long = ou_nonrobust_solution(&example(), half()).growth_rate;
        assert!((without_prefactor - long).abs() < 1e-4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn bs_clamp_is_optimal(theta_excess in -0.3f64..0.3, lo in -0.5f64..0.0, hi in 0.0f64..0.5, t in 0.0f64..1.0) {
                let iv = Interval::new(lo, hi).unwrap();
                let sol = bs_solution(0.02, 0.02 + 0.2 * theta_excess, 0.2, iv, RiskAversion::new(0.5).unwrap()).unwrap();
                let theta = theta_excess;
                let e = lo + t * (hi - lo);
                prop_assert!((theta + sol.eta_star.e21).abs() <= (theta + e).abs() + 1e-15);
            }

            #[test]
            fn ou_rate_convex_increasing(l in 0.02f64..0.97, h in 0.001f64..0.01) {
                let p = example();
                let f = |l: f64| ou_nonrobust_solution(&p, RiskAversion::new(l).unwrap()).growth_rate;
                prop_assert!(f(l + h) > f(l));
                prop_assert!(f(l + h) - 2.0 * f(l) + f(l - h) > 0.0);
            }

            #[test]
            fn ou_rate_above_lower_bound(l in 0.01f64..0.99, eta0 in 0.1f64..3.0) {
                let p = OuParams::new(eta0, 0.01, 0.05, 0.3).unwrap();
                let lam = RiskAversion::new(l).unwrap();
                prop_assert!(ou_nonrobust_solution(&p, lam).growth_rate >= l * p.r);
            }

            #[test]
            fn finite_strategy_converges(s in 2.0f64..15.0) {
                let p = example();
                let lam = RiskAversion::new(0.5).unwrap();
                let fh = FiniteHorizonOu::new(p, lam);
                let long = ou_nonrobust_solution(&p, lam);
                let gap = |s: f64| (fh.a_coef(s) - long.pi_slope).abs() + (fh.b_coef(s) - long.pi_intercept).abs();
                prop_assert!(gap(s + 1.0) < gap(s));
                let rate = p.eta0 / libm::sqrt(0.5);
                prop_assert!(gap(s) <= 10.0 * libm::exp(-rate * s));
            }
        }
    }
}
