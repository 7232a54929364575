use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::TimeGrid;
use crate::error::{Error, Result};

/// Identifies one Brownian path inside a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKey {
    /// Common-noise mode `j`.
    Common(u32),
    /// Idiosyncratic path of player or particle `i`.
    Idio(u32),
    /// Extra paths (initial-law draws, auxiliary processes).
    Aux(u32),
}

impl PathKey {
    fn code(self) -> u64 {
        match self {
            PathKey::Common(j) => 0x8000_0000 | u64::from(j),
            PathKey::Aux(i) => 0x4000_0000 | u64::from(i),
            PathKey::Idio(i) => u64::from(i),
        }
    }
}

/// Independent generator for `(seed, scenario, path)`.
///
/// ChaCha is counter based: the stream id selects a disjoint keystream, so
/// draws never depend on which worker produced them or in which order.
pub fn path_rng(seed: u64, scenario_id: u32, key: PathKey) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(scenario_id) << 32) | key.code());
    rng
}

fn draw_path(seed: u64, scenario_id: u32, key: PathKey, steps: usize, scale: f64) -> Vec<f64> {
    let mut rng = path_rng(seed, scenario_id, key);
    (0..steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect()
}

/// Brownian increments of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub seed: u64,
    pub scenario_id: u32,
    pub grid: TimeGrid,
    pub mode_weights: Vec<f64>,
    /// `common[j][k]` has variance `nu_j dt`.
    pub common: Vec<Vec<f64>>,
    /// `idio[i][k]` has variance `dt`.
    pub idio: Vec<Vec<f64>>,
}

impl NoiseBundle {
    pub fn n_idio(&self) -> usize {
        self.idio.len()
    }

    /// Same paths on a grid with `factor` times fewer steps (increments summed
    /// in consecutive blocks), for paired step-size comparisons.
    pub fn coarsen(&self, factor: usize) -> Result<NoiseBundle> {
        let grid = self.grid.coarsen(factor)?;
        let sum_blocks =
            |path: &Vec<f64>| path.chunks(factor).map(|c| c.iter().sum::<f64>()).collect::<Vec<_>>();
        Ok(NoiseBundle {
            grid,
            common: self.common.iter().map(sum_blocks).collect(),
            idio: self.idio.iter().map(sum_blocks).collect(),
            mode_weights: self.mode_weights.clone(),
            ..*self
        })
    }

    /// Cumulative common path of mode `j`: `W0_{t_k}` for `k = 0..=steps`.
    pub fn common_path(&self, j: usize) -> Vec<f64> {
        cumulative(&self.common[j])
    }
}

pub(crate) fn cumulative(increments: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for d in increments {
        acc += d;
        out.push(acc);
    }
    out
}

/// Generates the common and idiosyncratic increments of one scenario.
pub fn make_noise(
    seed: u64,
    scenario_id: u32,
    grid: TimeGrid,
    n_idio: usize,
    mode_weights: &[f64],
) -> Result<NoiseBundle> {
    if let Some(w) = mode_weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::invalid(format!("mode weight {w} must be finite and nonnegative")));
    }
    let steps = grid.steps();
    let sdt = grid.dt().sqrt();
    let common = mode_weights
        .iter()
        .enumerate()
        .map(|(j, w)| draw_path(seed, scenario_id, PathKey::Common(j as u32), steps, w.sqrt() * sdt))
        .collect();
    let idio = (0..n_idio)
        .map(|i| draw_path(seed, scenario_id, PathKey::Idio(i as u32), steps, sdt))
        .collect();
    Ok(NoiseBundle {
        seed,
        scenario_id,
        grid,
        mode_weights: mode_weights.to_vec(),
        common,
        idio,
    })
}

/// One generator per path, drawn step by step. Produces exactly the
/// increments `make_noise` would store, without materialising them.
pub struct PathStreams {
    rngs: Vec<ChaCha8Rng>,
    scale: f64,
}

impl PathStreams {
    pub fn idiosyncratic(seed: u64, scenario_id: u32, n: usize, grid: &TimeGrid) -> Self {
        let rngs = (0..n).map(|i| path_rng(seed, scenario_id, PathKey::Idio(i as u32))).collect();
        PathStreams { rngs, scale: grid.dt().sqrt() }
    }

    /// Next increment of path `i`.
    pub fn next(&mut self, i: usize) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rngs[i]);
        self.scale * z
    }
}
