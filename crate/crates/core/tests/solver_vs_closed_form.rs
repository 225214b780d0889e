use approx::assert_abs_diff_eq;
use robust_growth::closed_form::{mean_reversion_box, ou_nonrobust_solution, ou_robust_solution};
use robust_growth::ebe::{solve_ebe, Grid, SolverOptions};
use robust_growth::model::{AmbiguityBox, Interval, OuParams, ReferenceModel, RiskAversion};
use robust_growth::outperformance::{legendre_rate, numerical_curve, ou_rate_closed_form, CurveOptions};
use robust_growth::EbeSolution;

fn lam(l: f64) -> RiskAversion {
    RiskAversion::new(l).unwrap()
}

#[test]
fn robust_box_reproduces_slowest_mean_reversion() {
    let p = OuParams::new(1.5, 0.01, 0.05, 0.3).unwrap();
    let iv = Interval::new(1.0, 2.0).unwrap();
    let e11 = mean_reversion_box(&p, iv).unwrap();
    let b = AmbiguityBox::mean_reversion_only(e11.lo, e11.hi).unwrap();
    let model = ReferenceModel::geometric_ou(&p).unwrap();
    let grid = Grid::new(-4.0, 4.0, 401).unwrap();
    let sol = solve_ebe(&model, lam(0.5), &b, &grid, &SolverOptions::default()).unwrap();
    let exact = ou_robust_solution(&p, iv, lam(0.5)).unwrap();
    assert_abs_diff_eq!(sol.growth_rate, exact.growth_rate, epsilon = 1e-4);
    for (i, y) in grid.nodes().into_iter().enumerate() {
        if y.abs() <= 2.0 {
            assert_abs_diff_eq!(sol.phi_values[i], exact.phi(y), epsilon = 1e-3);
            if y.abs() > 1e-9 {
                assert_abs_diff_eq!(sol.eta_star_values[i].e11, e11.hi, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(sol.pi_star(y), exact.pi_star(y), epsilon = 1e-3);
        }
    }
    assert!(sol.eta_star_values.iter().all(|e| b.contains(e)));
}

#[test]
fn stored_derivative_matches_central_differences() {
    let p = OuParams::new(1.0, 0.01, 0.05, 0.3).unwrap();
    let model = ReferenceModel::geometric_ou(&p).unwrap();
    let grid = Grid::new(-4.0, 4.0, 201).unwrap();
    let sol = solve_ebe(&model, lam(0.3), &AmbiguityBox::singleton(), &grid, &SolverOptions::default()).unwrap();
    let h = grid.spacing();
    for i in 1..grid.n_points() - 1 {
        let central = (sol.phi_values[i + 1] - sol.phi_values[i - 1]) / (2.0 * h);
        assert!((central - sol.phi_y_values[i]).abs() <= 10.0 * h * h);
    }
}

#[test]
fn rate_increases_with_risk_appetite_and_stays_above_lower_bound() {
    let p = OuParams::new(1.0, 0.01, 0.05, 0.3).unwrap();
    let model = ReferenceModel::geometric_ou(&p).unwrap();
    let grid = Grid::new(-3.0, 3.0, 121).unwrap();
    let mut last = 0.0;
    for l in [0.1, 0.3, 0.5, 0.7] {
        let sol = solve_ebe(&model, lam(l), &AmbiguityBox::singleton(), &grid, &SolverOptions::default()).unwrap();
        assert!(sol.growth_rate > last);
        assert!(sol.growth_rate >= l * p.r);
        let exact = ou_nonrobust_solution(&p, lam(l)).growth_rate;
        let h = grid.spacing();
        let a = ou_nonrobust_solution(&p, lam(l)).phi_quad;
        let shift = model.rho_hat(lam(l)).powi(2) * a * a * h * h / 8.0;
        assert!((sol.growth_rate - exact - shift).abs() < 1e-4, "{l}: {} {} {}", sol.growth_rate, exact, shift);
        last = sol.growth_rate;
    }
}

#[test]
fn numerical_curve_reproduces_closed_form_rates() {
    let p = OuParams::new(1.0, 0.01, 0.05, 0.3).unwrap();
    let model = ReferenceModel::geometric_ou(&p).unwrap();
    let opts = CurveOptions {
        lambda_max: 0.95,
        n_lambdas: 16,
        grid: Grid::new(-3.0, 3.0, 121).unwrap(),
        solver: SolverOptions::default(),
        richardson: true,
    };
    let curve = numerical_curve(&model, &AmbiguityBox::singleton(), &opts).unwrap();
    let g = p.gamma_const();
    assert!((curve.deriv_at_zero - (0.25 + g)).abs() < 5e-3);
    for k in 0..25 {
        let c = g + 0.15 + 0.025 * k as f64;
        let num = legendre_rate(&curve, c).unwrap();
        let exact = ou_rate_closed_form(1.0, g, c).unwrap();
        assert!((num.rate - exact.rate).abs() < 5e-4, "c = {c}: {} vs {}", num.rate, exact.rate);
    }
}
