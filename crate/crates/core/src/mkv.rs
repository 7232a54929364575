//! Conditional McKean-Vlasov particle system of the mean-field limit and its
//! moment-level checks.
//!
//! Particles follow `dX = (a + q + eta_t)(m_t - X) dt + sigma (rho dW0 + sqrt(1-rho^2) dW)`
//! with a single common path per scenario. The conditional mean obeys
//! `dm = sigma rho dW0` exactly in the limit, and the conditional variance the
//! ODE `v' = -2(a + q + eta_t) v + sigma^2 (1 - rho^2)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{cumulative, make_noise, InitialLaw, LqParams, NoiseBundle, PathStreams, Players, TimeGrid};
use crate::nplayer::{self, Record};
use crate::riccati::{closed_curves, eta_closed, RiccatiCurves};
use crate::stats::mean_se;

/// Source of the population mean seen by the particles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Environment {
    /// Running empirical mean of the cloud (self-consistent interaction).
    #[default]
    Particles,
    /// The exact limit `m_0 + sigma rho W0_t`; particles are then
    /// independent given the common path.
    Exact,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CloudOptions {
    pub environment: Environment,
    pub record_states: bool,
}

/// One scenario of the particle system.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub params: LqParams,
    pub grid: TimeGrid,
    pub n_particles: usize,
    pub scenario_id: u32,
    /// Mean of the initial law.
    pub m0: f64,
    /// Variance of the initial law.
    pub v0: f64,
    /// Cumulative common path `W0_{t_k}`.
    pub common_path: Vec<f64>,
    pub cond_mean: Vec<f64>,
    pub cond_var: Vec<f64>,
    /// Mean used in the drift at each node.
    pub environment_mean: Vec<f64>,
    /// `states[i][k]` if recorded.
    pub states: Option<Vec<Vec<f64>>>,
}

impl ParticleCloud {
    /// Exact conditional mean `m_0 + sigma rho W0_t`.
    pub fn exact_mean(&self) -> Vec<f64> {
        let s = self.params.common_vol();
        self.common_path.iter().map(|w| self.m0 + s * w).collect()
    }

    /// `max_k |cond_mean_k - exact_k|`.
    pub fn mean_sup_error(&self) -> f64 {
        sup_gap(&self.cond_mean, &self.exact_mean())
    }
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn limit_params(p: &LqParams) -> Result<LqParams> {
    if p.players != Players::Limit {
        return Err(Error::invalid("the particle system runs in the limit regime"));
    }
    p.validated()
}

/// Curves plus the stability check shared by every cloud run.
pub fn prepare(p: &LqParams, grid: &TimeGrid, law: &InitialLaw) -> Result<RiccatiCurves> {
    let p = limit_params(p)?;
    law.validate()?;
    let curves = closed_curves(&p, grid)?;
    nplayer::stability_guard(&p, grid, curves.max_eta())?;
    Ok(curves)
}

/// Euler-Maruyama core. `idio(i, k)` returns the increment of particle `i` at
/// step `k` and is called with `k` increasing.
#[allow(clippy::too_many_arguments)]
fn advance<F: FnMut(usize, usize) -> f64>(
    p: &LqParams,
    curves: &RiccatiCurves,
    common: &[f64],
    x0: Vec<f64>,
    m0: f64,
    v0: f64,
    scenario_id: u32,
    opts: CloudOptions,
    mut idio: F,
) -> ParticleCloud {
    let grid = curves.grid;
    let steps = grid.steps();
    let dt = grid.dt();
    let n = x0.len();
    let (sig_i, sig_c) = (p.idio_vol(), p.common_vol());
    let common_path = cumulative(common);
    let mut x = x0;
    let mut cond_mean = Vec::with_capacity(steps + 1);
    let mut cond_var = Vec::with_capacity(steps + 1);
    let mut environment_mean = Vec::with_capacity(steps + 1);
    let mut states = opts.record_states.then(|| x.iter().map(|&v| vec![v]).collect::<Vec<_>>());
    // Shifted by the first particle so that a cloud of identical states has
    // exactly that mean and zero variance.
    let moments = |x: &[f64]| {
        let x0 = x[0];
        let (s1, s2) = x.iter().fold((0.0, 0.0), |(a, b), y| {
            let d = y - x0;
            (a + d, b + d * d)
        });
        let d = s1 / n as f64;
        (x0 + d, (s2 / n as f64 - d * d).max(0.0))
    };
    for k in 0..=steps {
        let (m, v) = moments(&x);
        cond_mean.push(m);
        cond_var.push(v);
        let env = match opts.environment {
            Environment::Particles => m,
            Environment::Exact => m0 + sig_c * common_path[k],
        };
        environment_mean.push(env);
        if k == steps {
            break;
        }
        let rate = p.a + curves.gain(p, k);
        let dw0 = common[k];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += rate * (env - *xi) * dt + sig_c * dw0 + sig_i * idio(i, k);
        }
        if let Some(st) = states.as_mut() {
            for (path, v) in st.iter_mut().zip(&x) {
                path.push(*v);
            }
        }
    }
    ParticleCloud {
        params: *p,
        grid,
        n_particles: n,
        scenario_id,
        m0,
        v0,
        common_path,
        cond_mean,
        cond_var,
        environment_mean,
        states,
    }
}

/// One scenario with particles drawn from `law` and noise streamed from the
/// scenario's generators.
pub fn run_cloud(
    p: &LqParams,
    curves: &RiccatiCurves,
    n_particles: usize,
    seed: u64,
    scenario_id: u32,
    law: &InitialLaw,
    opts: CloudOptions,
) -> Result<ParticleCloud> {
    if n_particles == 0 {
        return Err(Error::invalid("need at least one particle"));
    }
    let grid = curves.grid;
    let common = make_noise(seed, scenario_id, grid, 0, &[1.0])?.common.remove(0);
    let x0 = law.sample(seed, scenario_id, n_particles);
    let mut streams = PathStreams::idiosyncratic(seed, scenario_id, n_particles, &grid);
    Ok(advance(p, curves, &common, x0, law.mean(), law.variance(), scenario_id, opts, |i, _| streams.next(i)))
}

/// One scenario driven by stored increments (e.g. a coarsened bundle).
pub fn run_cloud_on(
    p: &LqParams,
    curves: &RiccatiCurves,
    noise: &NoiseBundle,
    x0: Vec<f64>,
    law: &InitialLaw,
    opts: CloudOptions,
) -> Result<ParticleCloud> {
    if x0.len() != noise.n_idio() || x0.is_empty() {
        return Err(Error::invalid("need one idiosyncratic path per particle"));
    }
    if noise.grid != curves.grid {
        return Err(Error::invalid("noise and Riccati curves live on different grids"));
    }
    Ok(advance(p, curves, &noise.common[0], x0, law.mean(), law.variance(), noise.scenario_id, opts, |i, k| {
        noise.idio[i][k]
    }))
}

/// Scenario 0 of the particle system.
pub fn simulate_mkv(
    p: &LqParams,
    grid: &TimeGrid,
    n_particles: usize,
    seed: u64,
    law: &InitialLaw,
) -> Result<ParticleCloud> {
    let curves = prepare(p, grid, law)?;
    run_cloud(p, &curves, n_particles, seed, 0, law, CloudOptions::default())
}

/// RK4 solution of the conditional variance ODE on the cloud's grid.
pub fn variance_ode(p: &LqParams, grid: &TimeGrid, v0: f64) -> Result<Vec<f64>> {
    let gain = |t: f64| eta_closed(t, p).map(|e| p.a + p.q + e);
    let s2 = p.idio_vol().powi(2);
    let h = grid.dt();
    let mut out = Vec::with_capacity(grid.steps() + 1);
    let mut v = v0;
    out.push(v);
    for k in 0..grid.steps() {
        let t = grid.time(k);
        let (g0, gm, g1) = (gain(t)?, gain(t + 0.5 * h)?, gain(grid.time(k + 1))?);
        let f = |g: f64, v: f64| -2.0 * g * v + s2;
        let k1 = f(g0, v);
        let k2 = f(gm, v + 0.5 * h * k1);
        let k3 = f(gm, v + 0.5 * h * k2);
        let k4 = f(g1, v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(v);
    }
    Ok(out)
}

/// Largest deviation of the particle variance from the variance ODE.
pub fn conditional_variance_check(cloud: &ParticleCloud) -> Result<f64> {
    let ode = variance_ode(&cloud.params, &cloud.grid, cloud.v0)?;
    Ok(sup_gap(&cloud.cond_var, &ode))
}

/// Scenario-averaged sup errors at one particle count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentErrors {
    pub n_particles: usize,
    pub mean_err: f64,
    pub mean_err_se: f64,
    pub var_err: f64,
    pub var_err_se: f64,
}

/// Averages the mean and variance sup errors over `n_scenarios` scenarios
/// for each particle count.
pub fn moment_errors(
    p: &LqParams,
    grid: &TimeGrid,
    seed: u64,
    n_scenarios: usize,
    law: &InitialLaw,
    particle_counts: &[usize],
) -> Result<Vec<MomentErrors>> {
    let curves = prepare(p, grid, law)?;
    let ode = variance_ode(p, grid, law.variance())?;
    particle_counts
        .iter()
        .map(|&n| {
            let per = (0..n_scenarios)
                .into_par_iter()
                .map(|s| {
                    let c = run_cloud(p, &curves, n, seed, s as u32, law, CloudOptions::default())?;
                    Ok((c.mean_sup_error(), sup_gap(&c.cond_var, &ode)))
                })
                .collect::<Result<Vec<_>>>()?;
            let (me, ve): (Vec<f64>, Vec<f64>) = per.into_iter().unzip();
            let (me, ve) = (mean_se(&me), mean_se(&ve));
            Ok(MomentErrors {
                n_particles: n,
                mean_err: me.mean,
                mean_err_se: me.se,
                var_err: ve.mean,
                var_err_se: ve.se,
            })
        })
        .collect()
}

/// Scenario-averaged `sup_t |m^N_t - (m_0 + sigma rho W0_t)|` for one N.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitRow {
    pub n_players: u32,
    pub sup_distance: f64,
    pub std_err: f64,
}

/// Runs the N-player equilibrium for each N on the scenario's common path
/// and measures the distance of its empirical mean to the limit mean. Each
/// scenario draws its initial states from `law`; `m_0` is their average.
pub fn nplayer_vs_limit(
    p: &LqParams,
    grid: &TimeGrid,
    seed: u64,
    n_scenarios: usize,
    law: &InitialLaw,
    n_list: &[u32],
) -> Result<Vec<LimitRow>> {
    law.validate()?;
    n_list
        .iter()
        .map(|&n| {
            if n < 2 {
                return Err(Error::invalid("each N must be at least 2"));
            }
            let pn = p.with_players(Players::Finite(n));
            let probe = law.sample(seed, 0, n as usize);
            let curves = nplayer::prepare(&pn, grid, &probe)?;
            let ones = vec![1.0; n as usize];
            let dists = (0..n_scenarios)
                .into_par_iter()
                .map(|s| {
                    let x0 = law.sample(seed, s as u32, n as usize);
                    let noise = make_noise(seed, s as u32, *grid, n as usize, &[1.0])?;
                    let out = nplayer::run_scenario(&pn, &curves, &noise, &x0, &ones, Record { paths: false, mean: true });
                    let m0 = x0.iter().sum::<f64>() / n as f64;
                    let w0 = noise.common_path(0);
                    let mp = out.mean_path.expect("mean path recorded");
                    Ok(mp
                        .iter()
                        .zip(&w0)
                        .map(|(m, w)| (m - m0 - pn.common_vol() * w).abs())
                        .fold(0.0, f64::max))
                })
                .collect::<Result<Vec<f64>>>()?;
            let s = mean_se(&dists);
            Ok(LimitRow { n_players: n, sup_distance: s.mean, std_err: s.se })
        })
        .collect()
}
