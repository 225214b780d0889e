//! Large-deviation rate of the robust outperformance probability as the
//! Legendre transform of the growth-rate curve.

use alloc::vec::Vec;

use crate::closed_form::ou_robust_solution;
use crate::ebe::{solve_ebe, Grid, SolverOptions};
use crate::model::{AmbiguityBox, Interval, OuParams, ReferenceModel, RiskAversion};
use crate::sim::{nearly_optimal_coefficients, StrategySpec};
use crate::{EbeSolution, Error, Result};

/// Tolerance in `lambda` of the golden-section search.
pub const LAMBDA_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum CurveSource {
    /// `Lambda(l) = (1 - sqrt(1 - l)) a / 2 + l gamma`.
    ClosedFormOu { a: f64, gamma: f64 },
    /// Monotone cubic interpolant of sampled values.
    Numerical(Pchip),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthCurve {
    pub source: CurveSource,
    pub lambda_prime: f64,
    pub deriv_at_zero: f64,
}

impl GrowthCurve {
    pub fn closed_form_ou(a: f64, gamma: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::invalid("a", "mean reversion must be positive"));
        }
        Ok(GrowthCurve {
            source: CurveSource::ClosedFormOu { a, gamma },
            lambda_prime: 1.0,
            deriv_at_zero: 0.25 * a + gamma,
        })
    }

    /// Curve through `(lambda_k, Lambda_k)`, anchored at `Lambda(0) = 0` when
    /// the first node is positive.
    pub fn from_samples(lambdas: &[f64], values: &[f64]) -> Result<Self> {
        let mut xs = Vec::with_capacity(lambdas.len() + 1);
        let mut ys = Vec::with_capacity(lambdas.len() + 1);
        if lambdas.first().copied() != Some(0.0) {
            xs.push(0.0);
            ys.push(0.0);
        }
        xs.extend_from_slice(lambdas);
        ys.extend_from_slice(values);
        check_convex(&xs, &ys)?;
        let pchip = Pchip::new(xs, ys)?;
        let lambda_prime = *pchip.xs.last().unwrap();
        let deriv_at_zero = pchip.slopes[0];
        Ok(GrowthCurve {
            source: CurveSource::Numerical(pchip),
            lambda_prime,
            deriv_at_zero,
        })
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        match &self.source {
            CurveSource::ClosedFormOu { a, gamma } => {
                0.5 * (1.0 - libm::sqrt(1.0 - lambda)) * a + lambda * gamma
            }
            CurveSource::Numerical(p) => p.eval(lambda),
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn check_convex(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() < 3 || xs.len() != ys.len() {
        return Err(Error::invalid("growth curve", "need at least two samples besides 0"));
    }
    let secant = |i: usize| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
    for i in 1..xs.len() - 1 {
        let second = secant(i) - secant(i - 1);
        if second < -1e-9 {
            return Err(Error::CurveNotConvex {
                lambda: xs[i],
                second_diff: second,
            });
        }
    }
    Ok(())
}

/// Piecewise cubic Hermite interpolant with Fritsch–Carlson slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 3 || ys.len() != n || xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("interpolant", "need increasing nodes"));
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut m = alloc::vec![0.0; n];
        for i in 1..n - 1 {
            if d[i - 1] * d[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
            }
        }
        let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
            let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if s * d0 <= 0.0 {
                0.0
            } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
                3.0 * d0
            } else {
                s
            }
        };
        m[0] = end(h[0], h[1], d[0], d[1]);
        m[n - 1] = end(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
        Ok(Pchip { xs, ys, slopes: m })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = self.xs.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[i]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[i + 1]
            + (t3 - t2) * h * self.slopes[i + 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateResult {
    pub c: f64,
    /// Decay exponent, `<= 0`.
    pub rate: f64,
    /// Maximizing risk aversion, 0 on the flat branch.
    pub lambda_c: f64,
    /// The maximizer sits at the upper end of the sampled range.
    pub boundary_hit: bool,
}

/// `-sup_{0 < l < l'} { l c - Lambda(l) }` by golden-section search.
pub fn legendre_rate(curve: &GrowthCurve, c: f64) -> Result<RateResult> {
    if !c.is_finite() {
        return Err(Error::invalid("c", "threshold must be finite"));
    }
    if c <= curve.deriv_at_zero {
        return Ok(RateResult {
            c,
            rate: 0.0,
            lambda_c: 0.0,
            boundary_hit: false,
        });
    }
    let f = |l: f64| l * c - curve.eval(l);
    let inv_phi = 0.5 * (libm::sqrt(5.0) - 1.0);
    let (mut lo, mut hi) = (0.0, curve.lambda_prime);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > LAMBDA_TOL {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    let mut best = 0.5 * (lo + hi);
    let mut value = f(best);
    let end = f(curve.lambda_prime);
    if end > value {
        best = curve.lambda_prime;
        value = end;
    }
    Ok(RateResult {
        c,
        rate: -value.max(0.0),
        lambda_c: best,
        boundary_hit: curve.lambda_prime - best < 1e-6,
    })
}

/// Closed-form rate for the OU market with slowest mean reversion `a`.
pub fn ou_rate_closed_form(a: f64, gamma: f64, c: f64) -> Result<RateResult> {
    if !(a > 0.0) {
        return Err(Error::invalid("a", "mean reversion must be positive"));
    }
    if c <= 0.25 * a + gamma {
        return Ok(RateResult {
            c,
            rate: 0.0,
            lambda_c: 0.0,
            boundary_hit: false,
        });
    }
    let excess = c - gamma;
    if !(excess > 0.0) {
        return Err(Error::Domain(alloc::format!("c = {c} must exceed gamma = {gamma}")));
    }
    let gap = 0.25 * a - excess;
    let ratio = a / (4.0 * excess);
    Ok(RateResult {
        c,
        rate: -gap * gap / excess,
        lambda_c: 1.0 - ratio * ratio,
        boundary_hit: false,
    })
}

/// Affine strategy nearly optimal for the threshold `c`, built from the
/// long-term strategy at the risk aversion dual to `c + 1/n`.
pub fn nearly_optimal_strategy(params: &OuParams, a: f64, c: f64, n: u32) -> Result<StrategySpec> {
    if n == 0 {
        return Err(Error::invalid("n", "must be a positive integer"));
    }
    if !(a > 0.0) {
        return Err(Error::invalid("a", "mean reversion must be positive"));
    }
    let spec = StrategySpec::NearlyOptimal {
        params: *params,
        a,
        c,
        n,
    };
    debug_assert!(spec.affine_coefficients() == Some(nearly_optimal_coefficients(params, a, c, n)));
    Ok(spec)
}

/// Chebyshev–Lobatto nodes on `(0, lambda_max]`, excluding 0.
pub fn chebyshev_lambdas(lambda_max: f64, n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| {
            let x = libm::cos(core::f64::consts::PI * k as f64 / n as f64);
            0.5 * lambda_max * (1.0 - x)
        })
        .collect()
}

/// Options for sampling a growth curve with the numerical solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveOptions {
    pub lambda_max: f64,
    pub n_lambdas: usize,
    pub grid: Grid,
    pub solver: SolverOptions,
    /// Combine the solve on `grid` with one at half spacing to cancel the
    /// leading `h^2` error.
    pub richardson: bool,
}

/// Growth rate at one risk aversion, optionally Richardson-extrapolated.
pub fn numerical_growth_rate(
    model: &ReferenceModel,
    lam: RiskAversion,
    ambiguity: &AmbiguityBox,
    opts: &CurveOptions,
) -> Result<f64> {
    let coarse = solve_ebe(model, lam, ambiguity, &opts.grid, &opts.solver)?;
    if !opts.richardson {
        return Ok(coarse.growth_rate());
    }
    let g = &opts.grid;
    let fine_grid = Grid::new(g.y_min(), g.y_max(), 2 * g.n_points() - 1)?;
    let fine = solve_ebe(model, lam, ambiguity, &fine_grid, &opts.solver)?;
    Ok((4.0 * fine.growth_rate() - coarse.growth_rate()) / 3.0)
}

/// Samples the growth rate at Chebyshev nodes with the numerical solver.
pub fn numerical_curve(model: &ReferenceModel, ambiguity: &AmbiguityBox, opts: &CurveOptions) -> Result<GrowthCurve> {
    if !(opts.lambda_max > 0.0 && opts.lambda_max < 1.0) || opts.n_lambdas < 2 {
        return Err(Error::invalid("curve options", "need 0 < lambda_max < 1 and two nodes"));
    }
    let lambdas = chebyshev_lambdas(opts.lambda_max, opts.n_lambdas);
    let values = lambdas
        .iter()
        .map(|&l| numerical_growth_rate(model, RiskAversion::new(l)?, ambiguity, opts))
        .collect::<Result<Vec<_>>>()?;
    GrowthCurve::from_samples(&lambdas, &values)
}

/// Closed-form curve of the OU market with mean reversion known to lie in
/// `mean_reversion`.
pub fn ou_curve(params: &OuParams, mean_reversion: Interval) -> Result<GrowthCurve> {
    // validates the interval against eta0
    ou_robust_solution(params, mean_reversion, RiskAversion::new(0.5)?)?;
    GrowthCurve::closed_form_ou(mean_reversion.lo, params.gamma_const())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gamma() -> f64 {
        OuParams::new(1.0, 0.01, 0.05, 0.3).unwrap().gamma_const()
    }

    #[test]
    fn closed_form_examples() {
        let g = gamma();
        let r = ou_rate_closed_form(1.0, g, 0.25 + g + 0.05).unwrap();
        assert_abs_diff_eq!(r.rate, -0.05 * 0.05 / 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(r.rate, -0.0083333, epsilon = 1e-7);
        assert_abs_diff_eq!(r.lambda_c, 0.3055556, epsilon = 1e-7);
        assert_eq!(ou_rate_closed_form(1.0, g, 0.25 + g).unwrap().rate, 0.0);
        let just_above = ou_rate_closed_form(1.0, g, 0.25 + g + 1e-9).unwrap();
        assert!(just_above.rate.abs() < 1e-15);
        assert!(ou_rate_closed_form(0.0, g, 1.0).is_err());
    }

    #[test]
    fn legendre_matches_closed_form() {
        let g = gamma();
        let curve = GrowthCurve::closed_form_ou(1.0, g).unwrap();
        for k in 0..50 {
            let c = g + 0.1 + 0.02 * k as f64;
            let num = legendre_rate(&curve, c).unwrap();
            let exact = ou_rate_closed_form(1.0, g, c).unwrap();
            assert_abs_diff_eq!(num.rate, exact.rate, epsilon = 1e-6);
            assert_abs_diff_eq!(num.lambda_c, exact.lambda_c, epsilon = 1e-6);
        }
        let at_kink = legendre_rate(&curve, curve.deriv_at_zero).unwrap();
        assert_eq!(at_kink.rate, 0.0);
    }

    #[test]
    fn double_transform_recovers_curve() {
        let g = gamma();
        let curve = GrowthCurve::closed_form_ou(1.0, g).unwrap();
        let rate = |c: f64| -legendre_rate(&curve, c).unwrap().rate;
        for k in 0..18 {
            let l = 0.05 + 0.05 * k as f64;
            // sup_c { l c - I(c) } over c, golden section on a bracket
            let f = |c: f64| l * c - rate(c);
            let (mut lo, mut hi) = (g, g + 20.0);
            let inv_phi = 0.5 * (libm::sqrt(5.0) - 1.0);
            while hi - lo > 1e-9 {
                let x1 = hi - inv_phi * (hi - lo);
                let x2 = lo + inv_phi * (hi - lo);
                if f(x1) < f(x2) {
                    lo = x1;
                } else {
                    hi = x2;
                }
            }
            assert_abs_diff_eq!(f(0.5 * (lo + hi)), curve.eval(l), epsilon = 1e-5);
        }
    }

    #[test]
    fn nearly_optimal_example() {
        let p = OuParams::new(1.0, 0.01, 0.05, 0.3).unwrap();
        let c = 0.25 + p.gamma_const() + 0.05;
        let spec = nearly_optimal_strategy(&p, 1.0, c, 10).unwrap();
        let (slope, intercept) = spec.affine_coefficients().unwrap();
        assert_abs_diff_eq!(slope, -17.77777777777778, epsilon = 1e-10);
        assert_abs_diff_eq!(intercept, 0.9444444444444444, epsilon = 1e-12);
        let lam_hat = ou_rate_closed_form(1.0, p.gamma_const(), c + 0.1).unwrap().lambda_c;
        assert_abs_diff_eq!(slope, -1.0 / (0.09 * libm::sqrt(1.0 - lam_hat)), epsilon = 1e-9);
        assert!(nearly_optimal_strategy(&p, 1.0, c, 0).is_err());
    }

    #[test]
    fn sampled_curve_interpolates_and_transforms() {
        let g = gamma();
        let exact = GrowthCurve::closed_form_ou(1.0, g).unwrap();
        let lambdas = chebyshev_lambdas(0.95, 24);
        let values: Vec<f64> = lambdas.iter().map(|&l| exact.eval(l)).collect();
        let curve = GrowthCurve::from_samples(&lambdas, &values).unwrap();
        assert_abs_diff_eq!(curve.eval(0.0), 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(curve.lambda_prime, 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(curve.deriv_at_zero, exact.deriv_at_zero, epsilon = 1e-4);
        for k in 1..19 {
            let l = 0.05 * k as f64;
            assert_abs_diff_eq!(curve.eval(l), exact.eval(l), epsilon = 1e-5);
        }
        let r = legendre_rate(&curve, g + 0.3).unwrap();
        assert_abs_diff_eq!(r.rate, -0.0083333, epsilon = 1e-5);
        assert!(!r.boundary_hit);
        let far = legendre_rate(&curve, g + 5.0).unwrap();
        assert!(far.boundary_hit);
    }

    #[test]
    fn concave_samples_are_rejected() {
        let err = GrowthCurve::from_samples(&[0.2, 0.4, 0.6], &[0.1, 0.15, 0.16]).unwrap_err();
        assert!(matches!(err, Error::CurveNotConvex { .. }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rate_nonincreasing_and_flat_below_kink(c1 in -1.0f64..3.0, dc in 0.0f64..1.0, a in 0.2f64..3.0) {
                let g = 0.05;
                let r1 = ou_rate_closed_form(a, g, c1).unwrap();
                let r2 = ou_rate_closed_form(a, g, c1 + dc).unwrap();
                prop_assert!(r2.rate <= r1.rate + 1e-15);
                prop_assert!(r1.rate <= 0.0);
                prop_assert_eq!(r1.rate == 0.0, c1 <= a / 4.0 + g);
                if r1.lambda_c > 0.0 {
                    prop_assert!(r2.lambda_c >= r1.lambda_c);
                }
            }
        }
    }
}
