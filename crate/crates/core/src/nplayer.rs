//! Monte Carlo simulation of the finite-N Nash equilibrium, realized costs
//! against the explicit value function, and the gain-deviation gap.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{make_noise, LqParams, NoiseBundle, Players, TimeGrid};
use crate::riccati::{closed_curves, eta_closed, chi_closed, RiccatiCurves};
use crate::stats::{mean_se, order_free_mean, MeanSe};

/// What to keep besides the realized costs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Record {
    /// Every player's state at every node.
    pub paths: bool,
    /// The empirical mean at every node.
    pub mean: bool,
}

/// Output of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub costs: Vec<f64>,
    /// `mean_path[k]` is the player average at node `k` (if recorded).
    pub mean_path: Option<Vec<f64>>,
    /// `paths[i][k]` (if recorded).
    pub paths: Option<Vec<Vec<f64>>>,
}

/// Seeded ensemble of equilibrium runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBatch {
    pub params: LqParams,
    pub grid: TimeGrid,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub scenarios: Vec<ScenarioOutcome>,
}

impl ScenarioBatch {
    pub fn n_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    /// Realized costs of one player across scenarios, in scenario order.
    pub fn player_costs(&self, player: usize) -> Vec<f64> {
        self.scenarios.iter().map(|s| s.costs[player]).collect()
    }
}

fn player_count(p: &LqParams) -> Result<usize> {
    match p.players {
        Players::Limit => Err(Error::invalid("the N-player game needs a finite N")),
        Players::Finite(n) => Ok(n as usize),
    }
}

/// Checks parameters, grid and initial states, and returns the Riccati curves
/// used by the feedback.
pub fn prepare(p: &LqParams, grid: &TimeGrid, x0: &[f64]) -> Result<RiccatiCurves> {
    let p = p.validated()?;
    let n = player_count(&p)?;
    if x0.len() != n {
        return Err(Error::invalid(format!("expected {n} initial states, got {}", x0.len())));
    }
    if x0.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("initial states must be finite"));
    }
    let curves = closed_curves(&p, grid)?;
    stability_guard(&p, grid, curves.max_eta())?;
    Ok(curves)
}

/// Rejects steps at or beyond the inverse of the largest mean-reversion rate.
pub fn stability_guard(p: &LqParams, grid: &TimeGrid, max_eta: f64) -> Result<()> {
    let rate = p.a + p.q + max_eta.max(0.0);
    if rate > 0.0 && grid.dt() >= 1.0 / rate {
        return Err(Error::Stability(format!(
            "dt = {} is not below 1/(a+q+max eta) = {}",
            grid.dt(),
            1.0 / rate
        )));
    }
    Ok(())
}

/// Runs one scenario of the game on the given noise. Player `i` plays
/// `gain_scale[i]` times the equilibrium feedback.
pub fn run_scenario(
    p: &LqParams,
    curves: &RiccatiCurves,
    noise: &NoiseBundle,
    x0: &[f64],
    gain_scale: &[f64],
    record: Record,
) -> ScenarioOutcome {
    let n = x0.len();
    let steps = curves.grid.steps();
    let dt = curves.grid.dt();
    let (sig_i, sig_c) = (p.idio_vol(), p.common_vol());
    let mut x = x0.to_vec();
    let mut costs = vec![0.0; n];
    let mut mean_path = record.mean.then(|| Vec::with_capacity(steps + 1));
    let mut paths = record.paths.then(|| x0.iter().map(|&v| {
        let mut path = Vec::with_capacity(steps + 1);
        path.push(v);
        path
    }).collect::<Vec<_>>());
    let mut next = vec![0.0; n];
    for k in 0..steps {
        let m = order_free_mean(&x);
        if let Some(mp) = mean_path.as_mut() {
            mp.push(m);
        }
        let g = curves.gain(p, k);
        let dw0 = noise.common[0][k];
        for i in 0..n {
            let alpha = gain_scale[i] * g * (m - x[i]);
            costs[i] += p.running_cost(x[i], m, alpha) * dt;
            next[i] = x[i] + (p.a * (m - x[i]) + alpha) * dt + sig_i * noise.idio[i][k] + sig_c * dw0;
        }
        std::mem::swap(&mut x, &mut next);
        if let Some(ps) = paths.as_mut() {
            for (path, v) in ps.iter_mut().zip(&x) {
                path.push(*v);
            }
        }
    }
    let m = order_free_mean(&x);
    if let Some(mp) = mean_path.as_mut() {
        mp.push(m);
    }
    for i in 0..n {
        costs[i] += p.terminal_cost(x[i], m);
    }
    ScenarioOutcome { costs, mean_path, paths }
}

fn scenario_noise(seed: u64, s: usize, grid: &TimeGrid, n: usize) -> Result<NoiseBundle> {
    make_noise(seed, s as u32, *grid, n, &[1.0])
}

/// Euler-Maruyama paths of the equilibrium dynamics with realized costs.
pub fn simulate_equilibrium(
    p: &LqParams,
    grid: &TimeGrid,
    n_scenarios: usize,
    seed: u64,
    x0: &[f64],
) -> Result<ScenarioBatch> {
    simulate_equilibrium_with(p, grid, n_scenarios, seed, x0, Record::default())
}

pub fn simulate_equilibrium_with(
    p: &LqParams,
    grid: &TimeGrid,
    n_scenarios: usize,
    seed: u64,
    x0: &[f64],
    record: Record,
) -> Result<ScenarioBatch> {
    let curves = prepare(p, grid, x0)?;
    let ones = vec![1.0; x0.len()];
    let scenarios = (0..n_scenarios)
        .into_par_iter()
        .map(|s| {
            let noise = scenario_noise(seed, s, grid, x0.len())?;
            Ok(run_scenario(p, &curves, &noise, x0, &ones, record))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioBatch { params: *p, grid: *grid, seed, x0: x0.to_vec(), scenarios })
}

/// Explicit value `eta_0 (m_0 - x_0^i)^2 / 2 + chi_0` of player `i`.
pub fn player_value(p: &LqParams, x0: &[f64], player: usize) -> Result<f64> {
    let m = x0.iter().sum::<f64>() / x0.len() as f64;
    let eta = eta_closed(0.0, p)?;
    let chi = chi_closed(0.0, p)?;
    Ok(0.5 * eta * (m - x0[player]).powi(2) + chi)
}

/// Mean realized cost of one player against the explicit value function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostCheck {
    pub value: f64,
    pub fine: MeanSe,
    pub coarse: MeanSe,
    /// `|fine - coarse|`: estimate of the discretization bias at the fine step.
    pub bias_bound: f64,
}

impl CostCheck {
    pub fn gap(&self) -> f64 {
        (self.fine.mean - self.value).abs()
    }

    pub fn tolerance(&self) -> f64 {
        3.0 * self.fine.se + self.bias_bound
    }

    pub fn passes(&self) -> bool {
        self.gap() <= self.tolerance()
    }
}

/// Runs the equilibrium at `grid` and at twice the step on the same
/// Brownian paths and compares player `player` with its value.
pub fn cost_vs_value(
    p: &LqParams,
    grid: &TimeGrid,
    n_scenarios: usize,
    seed: u64,
    x0: &[f64],
    player: usize,
) -> Result<CostCheck> {
    let fine_curves = prepare(p, grid, x0)?;
    let coarse_grid = grid.coarsen(2)?;
    let coarse_curves = prepare(p, &coarse_grid, x0)?;
    let ones = vec![1.0; x0.len()];
    let pairs = (0..n_scenarios)
        .into_par_iter()
        .map(|s| {
            let noise = scenario_noise(seed, s, grid, x0.len())?;
            let fine = run_scenario(p, &fine_curves, &noise, x0, &ones, Record::default());
            let coarse = run_scenario(p, &coarse_curves, &noise.coarsen(2)?, x0, &ones, Record::default());
            Ok((fine.costs[player], coarse.costs[player]))
        })
        .collect::<Result<Vec<_>>>()?;
    let (fine, coarse): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let fine = mean_se(&fine);
    let coarse = mean_se(&coarse);
    Ok(CostCheck {
        value: player_value(p, x0, player)?,
        fine,
        coarse,
        bias_bound: (fine.mean - coarse.mean).abs(),
    })
}

/// One row of the deviation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NashRow {
    pub lambda: f64,
    pub mean_cost: f64,
    pub std_err: f64,
    /// Mean of `cost(lambda) - cost(1)` over scenarios and its standard error.
    pub excess: f64,
    pub excess_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashTable {
    pub rows: Vec<NashRow>,
    /// Player 1 costs under `lambda = 1`, per scenario.
    pub baseline: Vec<f64>,
}

impl NashTable {
    /// True when no deviation beats the equilibrium by more than three
    /// standard errors of the paired difference.
    pub fn baseline_is_minimal(&self) -> bool {
        self.rows.iter().all(|r| r.excess >= -3.0 * r.excess_se)
    }
}

/// Player 1 scales its equilibrium gain by each `lambda`; everybody else
/// keeps the equilibrium feedback. All `lambda` share the same noise.
pub fn nash_gap(
    p: &LqParams,
    grid: &TimeGrid,
    n_scenarios: usize,
    seed: u64,
    x0: &[f64],
    lambdas: &[f64],
) -> Result<NashTable> {
    let base = lambdas
        .iter()
        .position(|&l| l == 1.0)
        .ok_or_else(|| Error::invalid("the gain multipliers must include 1"))?;
    if lambdas.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("gain multipliers must be finite"));
    }
    let curves = prepare(p, grid, x0)?;
    let n = x0.len();
    let per_scenario = (0..n_scenarios)
        .into_par_iter()
        .map(|s| {
            let noise = scenario_noise(seed, s, grid, n)?;
            let mut scale = vec![1.0; n];
            Ok(lambdas
                .iter()
                .map(|&l| {
                    scale[0] = l;
                    run_scenario(p, &curves, &noise, x0, &scale, Record::default()).costs[0]
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let baseline: Vec<f64> = per_scenario.iter().map(|c| c[base]).collect();
    let rows = lambdas
        .iter()
        .enumerate()
        .map(|(j, &lambda)| {
            let costs: Vec<f64> = per_scenario.iter().map(|c| c[j]).collect();
            let diffs: Vec<f64> = per_scenario.iter().map(|c| c[j] - c[base]).collect();
            let c = mean_se(&costs);
            let d = mean_se(&diffs);
            NashRow { lambda, mean_cost: c.mean, std_err: c.se, excess: d.mean, excess_se: d.se }
        })
        .collect();
    Ok(NashTable { rows, baseline })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: u32) -> LqParams {
        LqParams {
            a: 0.1,
            q: 0.2,
            eps: 0.5,
            c: 0.3,
            sigma: 1.0,
            rho: 0.5,
            horizon: 1.0,
            players: Players::Finite(n),
        }
    }

    #[test]
    fn deterministic_symmetric_start_stays_put() {
        let p = LqParams { sigma: 0.0, ..params(4) };
        let g = TimeGrid::on(1.0, 20).unwrap();
        let b = simulate_equilibrium_with(&p, &g, 2, 1, &[0.7; 4], Record { paths: true, mean: true }).unwrap();
        for s in &b.scenarios {
            assert!(s.costs.iter().all(|c| *c == 0.0));
            assert!(s.paths.as_ref().unwrap().iter().flatten().all(|x| *x == 0.7));
        }
    }

    #[test]
    fn single_deterministic_step_is_euler() {
        let p = LqParams { sigma: 0.0, players: Players::Finite(2), ..params(2) };
        let g = TimeGrid::on(1.0, 1).unwrap();
        let x0 = [0.0, 1.0];
        let b = simulate_equilibrium_with(&p, &g, 1, 1, &x0, Record { paths: true, mean: false }).unwrap();
        let eta0 = eta_closed(0.0, &p).unwrap();
        let paths = b.scenarios[0].paths.as_ref().unwrap();
        for i in 0..2 {
            let expect = x0[i] + (p.a + p.q + 0.5 * eta0) * (0.5 - x0[i]) * 1.0;
            assert!((paths[i][1] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_limit_regime_and_large_steps() {
        let g = TimeGrid::on(1.0, 10).unwrap();
        let lim = LqParams { players: Players::Limit, ..params(2) };
        assert!(simulate_equilibrium(&lim, &g, 1, 1, &[0.0, 0.0]).is_err());
        let stiff = LqParams { a: 20.0, ..params(2) };
        assert!(matches!(simulate_equilibrium(&stiff, &g, 1, 1, &[0.0, 1.0]), Err(Error::Stability(_))));
    }

    #[test]
    fn nash_requires_baseline() {
        let g = TimeGrid::on(1.0, 10).unwrap();
        assert!(nash_gap(&params(2), &g, 1, 1, &[0.0, 1.0], &[0.5, 1.5]).is_err());
    }

    #[test]
    fn nash_baseline_matches_equilibrium_bitwise() {
        let p = params(3);
        let g = TimeGrid::on(1.0, 50).unwrap();
        let x0 = [-1.0, 0.0, 2.0];
        let t = nash_gap(&p, &g, 8, 5, &x0, &[0.5, 1.0, 1.5]).unwrap();
        let b = simulate_equilibrium(&p, &g, 8, 5, &x0).unwrap();
        assert_eq!(t.baseline, b.player_costs(0));
    }

    #[test]
    fn deterministic_symmetric_start_has_no_gap() {
        let p = LqParams { sigma: 0.0, ..params(3) };
        let g = TimeGrid::on(1.0, 50).unwrap();
        let t = nash_gap(&p, &g, 2, 5, &[1.0; 3], &[0.5, 1.0, 1.5]).unwrap();
        assert!(t.rows.iter().all(|r| r.mean_cost == 0.0));
    }
}
