//! Particle-system rates and the N-player to limit comparison.

use master_eq::mkv::{
    moment_errors, nplayer_vs_limit, prepare, run_cloud, variance_ode, CloudOptions, Environment,
};
use master_eq::stats::mean_se;
use master_eq::{InitialLaw, LqParams, Players, TimeGrid};

fn params() -> LqParams {
    LqParams {
        a: 0.1,
        q: 0.2,
        eps: 0.5,
        c: 0.3,
        sigma: 1.0,
        rho: 0.6,
        horizon: 1.0,
        players: Players::Limit,
    }
}

fn law() -> InitialLaw {
    InitialLaw::Normal { mean: 0.5, std: 1.0 }
}

#[test]
fn mean_and_variance_errors_halve_when_particles_quadruple() {
    let g = TimeGrid::on(1.0, 200).unwrap();
    let rows = moment_errors(&params(), &g, 21, 100, &law(), &[1000, 4000, 16000]).unwrap();
    for w in rows.windows(2) {
        let rm = w[0].mean_err / w[1].mean_err;
        let rv = w[0].var_err / w[1].var_err;
        assert!((1.4..=2.6).contains(&rm), "mean ratio {rm}: {rows:?}");
        assert!((1.4..=2.6).contains(&rv), "variance ratio {rv}: {rows:?}");
    }
}

#[test]
fn without_common_noise_the_mean_barely_moves() {
    let p = LqParams { rho: 0.0, ..params() };
    let g = TimeGrid::on(1.0, 100).unwrap();
    let curves = prepare(&p, &g, &law()).unwrap();
    let c = run_cloud(&p, &curves, 20_000, 4, 0, &law(), CloudOptions::default()).unwrap();
    let drift = c.cond_mean.iter().map(|m| (m - c.cond_mean[0]).abs()).fold(0.0, f64::max);
    // sup of the average of 2e4 Brownian paths: a few times 1/sqrt(2e4).
    assert!(drift < 5.0 / (20_000f64).sqrt(), "{drift}");
}

#[test]
fn single_particle_in_exact_environment_is_ou() {
    let p = LqParams { rho: 0.0, ..params() };
    let g = TimeGrid::on(1.0, 400).unwrap();
    let law = InitialLaw::Normal { mean: 1.0, std: 0.5 };
    let curves = prepare(&p, &g, &law).unwrap();
    let opts = CloudOptions { environment: Environment::Exact, record_states: false };
    let finals: Vec<f64> = (0..20_000)
        .map(|s| run_cloud(&p, &curves, 1, 8, s, &law, opts).unwrap().cond_mean[400])
        .collect();
    let m = mean_se(&finals);
    assert!((m.mean - 1.0).abs() < 3.0 * m.se, "{m:?}");
    let sq: Vec<f64> = finals.iter().map(|x| (x - 1.0).powi(2)).collect();
    let v = mean_se(&sq);
    let target = variance_ode(&p, &g, 0.25).unwrap()[400];
    assert!((v.mean - target).abs() < 3.0 * v.se + 2e-3, "{v:?} vs {target}");
}

#[test]
fn player_mean_approaches_limit_at_root_rate() {
    let g = TimeGrid::on(1.0, 200).unwrap();
    let rows = nplayer_vs_limit(&params(), &g, 5, 400, &law(), &[32, 64, 128]).unwrap();
    for w in rows.windows(2) {
        let r = w[0].sup_distance / w[1].sup_distance;
        assert!((1.2..=1.7).contains(&r), "ratio {r}: {rows:?}");
    }
}

#[test]
fn degenerate_noise_cases_of_the_player_mean() {
    let g = TimeGrid::on(1.0, 100).unwrap();
    let calm = LqParams { sigma: 0.0, ..params() };
    let rows = nplayer_vs_limit(&calm, &g, 5, 10, &law(), &[4, 16]).unwrap();
    assert!(rows.iter().all(|r| r.sup_distance < 1e-14), "{rows:?}");
    let shared = LqParams { rho: 1.0, ..params() };
    let rows = nplayer_vs_limit(&shared, &g, 5, 10, &law(), &[4, 16]).unwrap();
    assert!(rows.iter().all(|r| r.sup_distance < 1e-12), "{rows:?}");
}
