use master_eq::pareto::*;
use master_eq::TimeGrid;
use proptest::prelude::*;

fn growth_params() -> ParetoParams {
    ParetoParams {
        tail_exp: 20.0,
        production_exp: 1.35,
        density_exp: 0.15,
        production_weight: 1.0,
        effort_weight: 1.0,
        effort_exp: 1.5,
        sigma: 0.3,
        discount: 0.0,
        horizon: 1.0,
    }
}

fn quadratic_params(c: f64) -> ParetoParams {
    ParetoParams {
        tail_exp: 3.0,
        production_exp: 1.0,
        density_exp: 1.0,
        production_weight: c,
        effort_weight: 1.0,
        effort_exp: 2.0,
        sigma: 0.5,
        discount: 0.0,
        horizon: 1.0,
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn quadratic_case_matches_the_quadratic_formula() {
    let p = quadratic_params(1.0);
    let eq = solve(&p).unwrap();
    // -2.5 B^2 + 0.25 B + 1/3 = 0
    let (a, b, c) = (-2.5f64, 0.25f64, 1.0 / 3.0);
    let root = (-b - (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
    assert!((eq.value_coef - root).abs() < 1e-14, "{} vs {root}", eq.value_coef);
    assert!(p.root_function(eq.value_coef).abs() <= 1e-12);
    assert!((eq.growth_rate - 5.0 * eq.value_coef).abs() < 1e-14);
    assert!(!eq.degenerate);
}

#[test]
fn vanishing_production_returns_positive_root_and_flags_it() {
    let eq = solve(&quadratic_params(0.0)).unwrap();
    assert!((eq.value_coef - 0.1).abs() < 1e-14, "{}", eq.value_coef);
    assert!(eq.degenerate);
}

#[test]
fn growth_rate_scales_inversely_with_effort_units() {
    let p = growth_params();
    let b = 0.3;
    let base = growth_rate(&p, b).unwrap();
    for lambda in [0.5, 2.0, 3.7] {
        let mut q = p;
        q.effort_weight = p.effort_weight * f64::powf(lambda, p.effort_exp - 1.0);
        let g = growth_rate(&q, b).unwrap();
        assert!((g - base / lambda).abs() < 1e-12 * base, "{g} vs {}", base / lambda);
    }
    assert!(growth_rate(&p, -1.0).is_err());
}

#[test]
fn pareto_tail_frequency_at_twice_the_endpoint() {
    let k = 3.0;
    let n = 1_000_000;
    let xs = sample_pareto(1.0, k, n, 99).unwrap();
    let hits = xs.iter().filter(|x| **x >= 2.0).count() as f64 / n as f64;
    let target = f64::powf(2.0, -k);
    let se = (target * (1.0 - target) / n as f64).sqrt();
    assert!((hits - target).abs() <= 3.0 * se, "{hits} vs {target}");
}

#[test]
fn states_are_exact_multiples_of_the_endpoint() {
    let eq = solve(&growth_params()).unwrap();
    let grid = TimeGrid::on(1.0, 50).unwrap();
    let states = simulate_growth(&eq, grid, 500, 3, 8).unwrap();
    for st in &states {
        assert_eq!(st.endpoint[0], 1.0);
        for k in 0..=50 {
            let xs = st.states(k);
            for (x, x0) in xs.iter().zip(&st.initial) {
                assert_eq!(x.to_bits(), (x0 * st.endpoint[k]).to_bits());
                assert!(*x >= st.endpoint[k]);
            }
        }
        // Ordering is preserved along the path.
        let mut order: Vec<usize> = (0..500).collect();
        order.sort_by(|a, b| st.initial[*a].total_cmp(&st.initial[*b]));
        let last = st.states(50);
        assert!(order.windows(2).all(|w| last[w[0]] <= last[w[1]]));
    }
}

#[test]
fn deterministic_endpoint_without_volatility() {
    let mut p = growth_params();
    p.sigma = 0.0;
    let eq = solve(&p).unwrap();
    let grid = TimeGrid::on(2.0, 40).unwrap();
    let st = &simulate_growth(&eq, grid, 10, 1, 1).unwrap()[0];
    for (k, q) in st.endpoint.iter().enumerate() {
        assert_eq!(*q, (eq.growth_rate * grid.time(k)).exp());
    }
}

#[test]
fn normalised_states_stay_pareto() {
    let eq = solve(&growth_params()).unwrap();
    let st = &simulate_growth(&eq, TimeGrid::on(1.0, 100).unwrap(), 10_000, 1, 4).unwrap()[0];
    let report = ks_checks(st, eq.params.tail_exp, &[0, 25, 50, 75, 100]);
    assert_eq!(report.stats.len(), 5);
    assert!(report.passes(), "{report:?}");
}

#[test]
fn master_residual_is_fourth_order_above_the_endpoint() {
    let eq = solve(&growth_params()).unwrap();
    let res: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&h| pareto_master_residual(&eq, &ParetoProbe { xs: linspace(1.8, 2.6, 9), qs: linspace(0.6, 1.2, 7), h }).unwrap())
        .collect();
    for w in res.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 3.5 && order <= 4.6, "residuals {res:?}");
    }
    let bumped = eq.with_value_coef(1.05 * eq.value_coef);
    let probe = ParetoProbe { xs: linspace(1.8, 2.6, 9), qs: linspace(0.6, 1.2, 7), h: 0.025 };
    let control = pareto_master_residual(&bumped, &probe).unwrap();
    assert!(control > 1e3 * res[2], "{control} vs {}", res[2]);
}

#[test]
fn extended_value_is_a_subsolution_below_the_endpoint() {
    let eq = solve(&growth_params()).unwrap();
    for h in [0.1, 0.05, 0.025] {
        let probe = ParetoProbe { xs: linspace(0.3, 1.0, 8), qs: linspace(1.3, 2.0, 8), h };
        let margin = subsolution_margin(&eq, &probe).unwrap();
        assert!(margin >= -1e-8, "h={h}: {margin}");
    }
}

#[test]
fn probe_without_usable_points_is_rejected() {
    let eq = solve(&growth_params()).unwrap();
    let probe = ParetoProbe { xs: vec![1.0], qs: vec![1.0], h: 0.05 };
    assert!(pareto_master_residual(&eq, &probe).is_err());
    assert!(subsolution_margin(&eq, &probe).is_err());
    assert!(pareto_master_residual(&eq, &ParetoProbe { xs: vec![2.0], qs: vec![-1.0], h: 0.05 }).is_err());
}

#[test]
fn equilibrium_is_a_martingale_and_deviations_are_not_cheaper() {
    let eq = solve(&growth_params()).unwrap();
    let grid = TimeGrid::on(1.0, 100).unwrap();
    let base = martingale_checks(&eq, grid, 1000, 200, 7, eq.growth_rate).unwrap();
    assert!(base.is_martingale(), "{base:?}");
    for factor in [0.5, 1.5] {
        let dev = martingale_checks(&eq, grid, 1000, 200, 7, factor * eq.growth_rate).unwrap();
        assert!(dev.is_submartingale(), "{factor}: {:?}", dev.drift);
        // These two deviations are strictly costlier at this size.
        assert!(dev.drift.mean > 3.0 * dev.drift.se, "{factor}: {:?}", dev.drift);
    }
}

#[test]
fn discounted_equilibrium_reports_its_tail() {
    let mut p = growth_params();
    p.discount = 0.4;
    p.horizon = 2.0;
    let eq = solve(&p).unwrap();
    assert!(p.root_function(eq.value_coef).abs() <= 1e-12);
    let grid = TimeGrid::on(2.0, 100).unwrap();
    let base = martingale_checks(&eq, grid, 800, 200, 5, eq.growth_rate).unwrap();
    assert!(base.is_martingale(), "{base:?}");
    assert!(base.tail > 0.0 && base.tail.is_finite());
    let slow = martingale_checks(&eq, grid, 800, 200, 5, 0.5 * eq.growth_rate).unwrap();
    assert!(slow.is_submartingale(), "{:?}", slow.drift);
}

#[test]
fn costless_inaction_gives_zero_everywhere() {
    let mut p = growth_params();
    p.sigma = 0.0;
    p.production_weight = 0.0;
    p.effort_weight = 1e12;
    let eq = solve(&p).unwrap();
    assert_eq!(eq.value_coef, 0.0);
    assert_eq!(eq.growth_rate, 0.0);
    let r = martingale_checks(&eq, TimeGrid::on(1.0, 20).unwrap(), 10, 20, 1, 0.0).unwrap();
    assert!(r.path.iter().all(|v| *v == 0.0));
    assert_eq!(r.tail, 0.0);
}

fn valid_params() -> impl Strategy<Value = ParetoParams> {
    (1.1f64..3.0, 0.05f64..1.0, 0.0f64..3.0, 0.05f64..5.0, 0.1f64..4.0, 0.0f64..1.0, 0.0f64..0.5)
        .prop_map(|(p, b, extra, c, e, sigma, r)| {
            let k = (p * (p - 1.0) / b) * (1.05 + extra);
            ParetoParams {
                tail_exp: k,
                production_exp: p - b,
                density_exp: b,
                production_weight: c,
                effort_weight: e,
                effort_exp: p,
                sigma,
                discount: r,
                horizon: 1.0,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn root_contract(p in valid_params()) {
        let eq = solve(&p).unwrap();
        prop_assert!(eq.value_coef > 0.0);
        prop_assert!(p.root_function(eq.value_coef).abs() <= 1e-12, "F = {}", p.root_function(eq.value_coef));
        prop_assert!(eq.growth_rate > 0.0);
    }
}
