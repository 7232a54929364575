use master_eq::ito::*;
use master_eq::model::make_noise;
use master_eq::{InitialLaw, TimeGrid};
use proptest::prelude::*;

fn cloud(idio: f64, common: bool) -> ItoProcessSpec {
    ItoProcessSpec {
        drift: Coef::Sine { amp: 0.3, freq: 1.0, phase: 0.0, offset: -0.1 },
        idio_vol: Coef::Sine { amp: idio * 0.3, freq: 1.3, phase: 0.5, offset: idio },
        common_vols: if common {
            vec![Coef::Sine { amp: 0.3, freq: 0.8, phase: 0.3, offset: 0.6 }]
        } else {
            vec![Coef::Const(0.0)]
        },
        mode_weights: vec![1.0],
        initial: InitialLaw::Normal { mean: 0.3, std: 0.8 },
    }
}

fn tagged(idio: f64, common: bool) -> StateSpec {
    StateSpec {
        drift: Coef::Sine { amp: 0.2, freq: 1.0, phase: 0.1, offset: 0.0 },
        idio_vol: Coef::Const(idio),
        common_vols: if common {
            vec![Coef::Sine { amp: 0.2, freq: 0.9, phase: 0.0, offset: 0.5 }]
        } else {
            vec![Coef::Const(0.0)]
        },
        x0: 0.7,
    }
}

/// Mean of max_t |LHS - RHS| for coarser and coarser right-hand-side steps
/// over a fixed simulation grid.
fn dt_axis(h: &JointFunctional, state: Option<&StateSpec>) -> Vec<f64> {
    [32usize, 8, 2]
        .iter()
        .map(|&sub| {
            let run = ItoRun { grid: TimeGrid::on(1.0, 512).unwrap(), substeps: sub, n_particles: 1000, n_scenarios: 30, seed: 5 };
            ito_verify_joint(h, &cloud(0.02, true), state, &run).unwrap().max_abs_gap.mean
        })
        .collect()
}

fn particle_axis(h: &JointFunctional, state: Option<&StateSpec>) -> Vec<f64> {
    [500usize, 2000, 8000]
        .iter()
        .map(|&n| {
            let run = ItoRun { grid: TimeGrid::on(1.0, 128).unwrap(), substeps: 1, n_particles: n, n_scenarios: 30, seed: 5 };
            ito_verify_joint(h, &cloud(0.5, false), state, &run).unwrap().max_abs_gap.mean
        })
        .collect()
}

fn assert_decays(gaps: &[f64], what: &str) {
    for w in gaps.windows(2) {
        assert!(w[0] / w[1] >= 1.3, "{what}: gaps {gaps:?} do not decay");
    }
}

#[test]
fn mean_gap_decays_on_both_axes() {
    let h = JointFunctional::from_measure(&CylindricalFunctional::mean());
    assert_decays(&dt_axis(&h, None), "mean/dt");
    assert_decays(&particle_axis(&h, None), "mean/particles");
}

#[test]
fn mean_squared_gap_decays_on_both_axes() {
    let h = JointFunctional::from_measure(&CylindricalFunctional::mean_squared());
    assert_decays(&dt_axis(&h, None), "mean^2/dt");
    assert_decays(&particle_axis(&h, None), "mean^2/particles");
}

#[test]
fn variance_gap_decays_on_both_axes() {
    let h = JointFunctional::from_measure(&CylindricalFunctional::variance());
    assert_decays(&dt_axis(&h, None), "variance/dt");
    assert_decays(&particle_axis(&h, None), "variance/particles");
}

#[test]
fn joint_product_gap_decays_on_both_axes() {
    let h = JointFunctional::state_times_mean();
    assert_decays(&dt_axis(&h, Some(&tagged(0.02, true))), "x*mean/dt");
    assert_decays(&particle_axis(&h, Some(&tagged(0.5, false))), "x*mean/particles");
}

fn within_mc(value: f64, target: f64, se: f64, slack: f64) -> bool {
    (value - target).abs() <= 3.0 * se + slack
}

#[test]
fn square_of_mean_under_constant_common_noise() {
    let s0 = 0.4;
    let spec = ItoProcessSpec {
        drift: Coef::Const(0.0),
        idio_vol: Coef::Const(0.0),
        common_vols: vec![Coef::Const(s0)],
        mode_weights: vec![1.0],
        initial: InitialLaw::Normal { mean: 0.3, std: 0.5 },
    };
    let grid = TimeGrid::on(1.0, 200).unwrap();
    let run = ItoRun { grid, substeps: 1, n_particles: 200, n_scenarios: 2000, seed: 9 };
    let h = CylindricalFunctional::mean_squared();
    let r = ito_verify(&h, &spec, &run).unwrap();
    for (s, tr) in r.traces.iter().enumerate().take(50) {
        let dw = make_noise(run.seed, s as u32, grid, 0, &[1.0]).unwrap().common.remove(0);
        let m0 = spec.initial.sample(run.seed, s as u32, run.n_particles).iter().sum::<f64>() / run.n_particles as f64;
        let (mut w, mut integral) = (0.0, 0.0);
        for d in &dw {
            integral += 2.0 * (m0 + s0 * w) * s0 * d;
            w += d;
        }
        let exact = (m0 + s0 * w).powi(2) - m0 * m0;
        assert!((tr.lhs[200] - exact).abs() < 1e-12);
        assert!((tr.terms.common_integral - integral).abs() < 1e-12);
        assert!((tr.terms.common_second - s0 * s0).abs() < 1e-12);
        assert_eq!(tr.terms.drift, 0.0);
        assert_eq!(tr.terms.idio_second, 0.0);
    }
    assert!(within_mc(r.final_gap.mean, 0.0, r.final_gap.se, 0.0), "{:?}", r.final_gap);
    assert!(within_mc(r.lhs_final.mean, s0 * s0, r.lhs_final.se, 0.0), "{:?}", r.lhs_final);
}

#[test]
fn variance_under_constant_idiosyncratic_noise() {
    let sig = 0.5;
    let n = 1000;
    let spec = ItoProcessSpec {
        drift: Coef::Const(0.0),
        idio_vol: Coef::Const(sig),
        common_vols: vec![],
        mode_weights: vec![],
        initial: InitialLaw::Uniform { low: -1.0, high: 1.0 },
    };
    let run = ItoRun { grid: TimeGrid::on(2.0, 100).unwrap(), substeps: 1, n_particles: n, n_scenarios: 300, seed: 4 };
    let r = ito_verify(&CylindricalFunctional::variance(), &spec, &run).unwrap();
    for tr in &r.traces {
        assert!((tr.terms.idio_second - sig * sig * 2.0).abs() < 1e-12);
        assert_eq!(tr.terms.common_integral, 0.0);
        assert_eq!(tr.terms.common_second, 0.0);
        assert_eq!(tr.terms.cross, 0.0);
    }
    // The empirical variance carries the 1 - 1/n factor.
    let target = sig * sig * 2.0 * (1.0 - 1.0 / n as f64);
    assert!(within_mc(r.lhs_final.mean, target, r.lhs_final.se, 0.0), "{:?}", r.lhs_final);
}

#[test]
fn product_of_state_and_mean_picks_up_the_bracket() {
    let (s0, x0vol) = (0.4, 0.3);
    let spec = ItoProcessSpec {
        drift: Coef::Const(0.0),
        idio_vol: Coef::Const(0.1),
        common_vols: vec![Coef::Const(s0)],
        mode_weights: vec![1.0],
        initial: InitialLaw::Normal { mean: -0.2, std: 0.5 },
    };
    let state = StateSpec { drift: Coef::Const(0.0), idio_vol: Coef::Const(0.2), common_vols: vec![Coef::Const(x0vol)], x0: 0.8 };
    let t = 1.5;
    let run = ItoRun { grid: TimeGrid::on(t, 150).unwrap(), substeps: 1, n_particles: 100, n_scenarios: 4000, seed: 12 };
    let r = ito_verify_joint(&JointFunctional::state_times_mean(), &spec, Some(&state), &run).unwrap();
    for tr in &r.traces {
        assert!((tr.terms.cross - s0 * x0vol * t).abs() < 1e-12);
        assert_eq!(tr.terms.state_second, 0.0);
        assert_eq!(tr.terms.common_second, 0.0);
    }
    assert!(within_mc(r.lhs_final.mean, s0 * x0vol * t, r.lhs_final.se, 0.0), "{:?}", r.lhs_final);
    assert!(within_mc(r.final_gap.mean, 0.0, r.final_gap.se, 0.0), "{:?}", r.final_gap);
}

#[test]
fn cross_term_with_two_test_maps() {
    // H(x, mu) = x (<id, mu> + <id^2, mu>); the bracket term is
    // sum_k d_x d_k phi E[psi_k' s0] sigma0 = (1 + 2 E[X]) s0 sigma0.
    let h = JointFunctional::new(
        vec![TestMap::Identity, TestMap::Power(2)],
        Outer::Quadratic {
            c0: 0.0,
            lin: vec![0.0; 3],
            quad: vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
        },
    )
    .unwrap();
    let spec = ItoProcessSpec {
        drift: Coef::Const(0.0),
        idio_vol: Coef::Const(0.0),
        common_vols: vec![Coef::Const(0.5)],
        mode_weights: vec![1.0],
        initial: InitialLaw::PointMass(0.25),
    };
    let state = StateSpec { drift: Coef::Const(0.0), idio_vol: Coef::Const(0.0), common_vols: vec![Coef::Const(0.6)], x0: 1.0 };
    let run = ItoRun { grid: TimeGrid::on(1.0, 400).unwrap(), substeps: 1, n_particles: 2, n_scenarios: 4000, seed: 2 };
    let r = ito_verify_joint(&h, &spec, Some(&state), &run).unwrap();
    // E[X_t] stays at 0.25, so the expected bracket is 1.5 * 0.5 * 0.6.
    let expected = r.mean_terms().cross;
    assert!((expected - 0.45).abs() < 0.02, "{expected}");
    assert!(within_mc(r.final_gap.mean, 0.0, r.final_gap.se, 1e-3), "{:?}", r.final_gap);
    // The bracket is needed: dropping it leaves a visible bias.
    assert!((r.final_gap.mean + expected).abs() > 10.0 * r.final_gap.se);
}

#[test]
fn common_second_order_term_is_additive_over_modes() {
    let (w1, w2, v1, v2) = (0.6, 1.7, 0.3, 0.5);
    let spec = |w: Vec<f64>, v: Vec<f64>| ItoProcessSpec {
        drift: Coef::Sine { amp: 0.2, freq: 1.0, phase: 0.0, offset: 0.0 },
        idio_vol: Coef::Const(0.3),
        common_vols: v.into_iter().map(Coef::Const).collect(),
        mode_weights: w,
        initial: InitialLaw::Normal { mean: 0.0, std: 1.0 },
    };
    let run = ItoRun { grid: TimeGrid::on(1.0, 50).unwrap(), substeps: 5, n_particles: 300, n_scenarios: 6, seed: 8 };
    let h = CylindricalFunctional::mean_squared();
    let both = ito_verify(&h, &spec(vec![w1, w2], vec![v1, v2]), &run).unwrap();
    let one = ito_verify(&h, &spec(vec![w1], vec![v1]), &run).unwrap();
    let two = ito_verify(&h, &spec(vec![w2], vec![v2]), &run).unwrap();
    for s in 0..6 {
        let sum = one.traces[s].terms.common_second + two.traces[s].terms.common_second;
        let joint = both.traces[s].terms.common_second;
        assert!((joint - sum).abs() <= 1e-14 * joint.abs().max(1.0), "{joint} vs {sum}");
        assert!((joint - (w1 * v1 * v1 + w2 * v2 * v2)).abs() < 1e-12);
    }
}

#[test]
fn measure_only_functional_ignores_the_state_bitwise() {
    let spec = cloud(0.4, true);
    let run = ItoRun { grid: TimeGrid::on(1.0, 60).unwrap(), substeps: 3, n_particles: 200, n_scenarios: 5, seed: 77 };
    for h in [
        CylindricalFunctional::variance(),
        CylindricalFunctional::new(vec![TestMap::Sin(1.1), TestMap::Exp(0.3)], Outer::Exp(vec![0.5, -0.4])).unwrap(),
    ] {
        let plain = ito_verify(&h, &spec, &run).unwrap();
        let joint = ito_verify_joint(&JointFunctional::from_measure(&h), &spec, Some(&tagged(0.3, true)), &run).unwrap();
        for (a, b) in plain.traces.iter().zip(&joint.traces) {
            assert_eq!(a.lhs, b.lhs);
            assert_eq!(a.rhs, b.rhs);
        }
    }
}

fn frozen_cloud() -> ItoProcessSpec {
    ItoProcessSpec {
        drift: Coef::Const(0.0),
        idio_vol: Coef::Const(0.0),
        common_vols: vec![],
        mode_weights: vec![],
        initial: InitialLaw::PointMass(0.0),
    }
}

#[test]
fn state_only_square_of_arithmetic_brownian_motion() {
    let (b, sig, x0, t) = (0.3, 0.4, 0.5, 1.0);
    let state = StateSpec { drift: Coef::Const(b), idio_vol: Coef::Const(sig), common_vols: vec![], x0 };
    let run = ItoRun { grid: TimeGrid::on(t, 100).unwrap(), substeps: 1, n_particles: 1, n_scenarios: 20000, seed: 3 };
    let r = ito_verify_joint(&JointFunctional::state_only(0.0, 0.0, 2.0), &frozen_cloud(), Some(&state), &run).unwrap();
    let exact = (x0 + b * t).powi(2) + sig * sig * t - x0 * x0;
    assert!(within_mc(r.lhs_final.mean, exact, r.lhs_final.se, 0.0), "{:?} vs {exact}", r.lhs_final);
    for tr in &r.traces {
        assert!((tr.terms.state_second - sig * sig * t).abs() < 1e-12);
    }
    // Squared Euler increments carry (b dt)^2 per step beyond the bracket.
    let euler_bias = b * b * t * run.grid.dt();
    assert!(within_mc(r.final_gap.mean, euler_bias, r.final_gap.se, 0.0), "{:?}", r.final_gap);
}

#[test]
fn state_only_moments_of_geometric_brownian_motion() {
    let (mu, sig, x0, t, steps) = (0.2, 0.3, 1.0, 1.0, 200);
    let state = StateSpec { drift: Coef::Affine(0.0, mu), idio_vol: Coef::Affine(0.0, sig), common_vols: vec![], x0 };
    let run = ItoRun { grid: TimeGrid::on(t, steps).unwrap(), substeps: 1, n_particles: 1, n_scenarios: 20000, seed: 6 };
    let dt = t / steps as f64;
    // Euler moments are exact powers; their distance to the continuous ones bounds the bias.
    let first = x0 * (mu * t).exp() - x0;
    let first_bias = (x0 * (1.0 + mu * dt).powi(steps as i32) - x0 - first).abs();
    let second = x0 * x0 * ((2.0 * mu + sig * sig) * t).exp() - x0 * x0;
    let second_bias =
        (x0 * x0 * ((1.0 + mu * dt).powi(2) + sig * sig * dt).powi(steps as i32) - x0 * x0 - second).abs();
    let lin = ito_verify_joint(&JointFunctional::state_only(0.0, 1.0, 0.0), &frozen_cloud(), Some(&state), &run).unwrap();
    assert!(within_mc(lin.lhs_final.mean, first, lin.lhs_final.se, first_bias), "{:?} vs {first}", lin.lhs_final);
    let sq = ito_verify_joint(&JointFunctional::state_only(0.0, 0.0, 2.0), &frozen_cloud(), Some(&state), &run).unwrap();
    assert!(within_mc(sq.lhs_final.mean, second, sq.lhs_final.se, second_bias), "{:?} vs {second}", sq.lhs_final);
    let rhs = sq.rhs_mean[steps];
    assert!((rhs - second).abs() <= 3.0 * sq.lhs_final.se + second_bias + 0.01, "{rhs} vs {second}");
}

fn test_map() -> impl Strategy<Value = TestMap> {
    prop_oneof![
        Just(TestMap::Identity),
        (2i32..5).prop_map(TestMap::Power),
        (0.2f64..2.0).prop_map(TestMap::Sin),
        (0.2f64..2.0).prop_map(TestMap::Cos),
        (-0.8f64..0.8).prop_map(TestMap::Exp),
    ]
}

fn functional() -> impl Strategy<Value = CylindricalFunctional> {
    (1usize..4)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(test_map(), k),
                0usize..3,
                prop::collection::vec(-1.0f64..1.0, k),
                prop::collection::vec(-1.0f64..1.0, k * k),
            )
        })
        .prop_map(|(inner, kind, w, q)| {
            let k = inner.len();
            let outer = match kind {
                0 => Outer::Quadratic {
                    c0: 0.1,
                    lin: w.clone(),
                    quad: (0..k).map(|i| (0..k).map(|j| q[i.min(j) * k + i.max(j)]).collect()).collect(),
                },
                1 => Outer::Exp(w.iter().map(|v| 0.5 * v).collect()),
                _ => Outer::Sin(w),
            };
            CylindricalFunctional::new(inner, outer).unwrap()
        })
}

fn lifted_difference(h: &CylindricalFunctional, sample: &[f64], i: usize, eps: f64) -> f64 {
    let mut up = sample.to_vec();
    let mut down = sample.to_vec();
    up[i] += eps;
    down[i] -= eps;
    // Each atom carries mass 1/n, so the lifted difference is scaled back by n.
    sample.len() as f64 * (h.value(&up) - h.value(&down)) / (2.0 * eps)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn lions_derivative_matches_lifted_differences(
        h in functional(),
        sample in prop::collection::vec(-1.5f64..1.5, 5..30),
    ) {
        for i in [0, sample.len() / 2, sample.len() - 1] {
            let exact = lions_derivative(&h, &sample, sample[i]).unwrap();
            let e1 = (lifted_difference(&h, &sample, i, 1e-2) - exact).abs();
            let e2 = (lifted_difference(&h, &sample, i, 5e-3) - exact).abs();
            let scale = 1.0 + exact.abs();
            prop_assert!(e1 <= 1e-3 * scale, "eps=1e-2 error {e1}");
            // Halving epsilon divides a second-order error by about four.
            prop_assert!(e2 <= 0.3 * e1 + 1e-9 * scale, "{e1} -> {e2}");
        }
    }

    #[test]
    fn lift_second_matches_directional_differences(
        h in functional(),
        sample in prop::collection::vec(-1.5f64..1.5, 5..20),
        dir in prop::collection::vec(-1.0f64..1.0, 20),
    ) {
        let y = &dir[..sample.len()];
        let eps = 1e-3;
        let shift = |s: f64| -> f64 {
            let moved: Vec<f64> = sample.iter().zip(y).map(|(x, d)| x + s * d).collect();
            h.value(&moved)
        };
        let fd = (shift(eps) - 2.0 * shift(0.0) + shift(-eps)) / (eps * eps);
        let exact = h.lift_second(&sample, y, y);
        prop_assert!((fd - exact).abs() <= 1e-4 * (1.0 + exact.abs()), "{fd} vs {exact}");
    }
}
