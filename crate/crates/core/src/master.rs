//! Explicit finite-difference solver for the LQ master equation on an
//! `(x, m)` lattice, plus residual, restriction and decoupling checks against
//! the exact field `v(t, x, m) = eta_t (x - m)^2 / 2 + chi_t`.
//!
//! The equation solved backward from `V_T = c (m - x)^2 / 2` is
//!
//! ```text
//! V_t + (a+q)(m-x) V_x + (eps-q^2)(m-x)^2/2 - V_x^2/2
//!     + sigma^2/2 V_xx + sigma^2 rho^2/2 V_mm + sigma^2 rho^2 V_xm = 0.
//! ```

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mkv::{self, CloudOptions, Environment};
use crate::model::{make_noise, path_rng, InitialLaw, LqParams, PathKey, Players, TimeGrid};
use crate::riccati::{closed_curves, RiccatiCurves};
use crate::stats::{mean_se, MeanSe};

/// Uniform lattice on `[min, max]` with `n` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) || n < 5 {
            return Err(Error::invalid(format!("axis [{min}, {max}] with {n} points")));
        }
        Ok(Axis { min, max, n })
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.max
        } else {
            self.min + i as f64 * self.step()
        }
    }

    pub fn refine(&self) -> Axis {
        Axis { n: 2 * self.n - 1, ..*self }
    }
}

/// Lattice and time stepping of one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterSpec {
    pub x: Axis,
    pub m: Axis,
    pub steps: usize,
    /// Keep every `store_every`-th time slice (the slices at `t = 0` and
    /// `t = T` are always kept).
    pub store_every: usize,
}

/// Stored slices of the backward solution.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterGrid {
    pub params: LqParams,
    pub x_axis: Axis,
    pub m_axis: Axis,
    pub t_axis: TimeGrid,
    /// Time indices of the stored slices, increasing.
    pub stored: Vec<usize>,
    /// `slices[s][i * n_m + j]` is `V(t_{stored[s]}, x_i, m_j)`.
    pub slices: Vec<Vec<f64>>,
    curves: RiccatiCurves,
}

fn limit_params(p: &LqParams) -> Result<LqParams> {
    if p.players != Players::Limit {
        return Err(Error::invalid("the master equation is solved in the limit regime"));
    }
    p.validated()
}

/// Left side of the explicit stability condition; must not exceed 1/2.
pub fn cfl_number(p: &LqParams, spec: &MasterSpec) -> f64 {
    let (dx, dm) = (spec.x.step(), spec.m.step());
    let s2 = p.sigma * p.sigma;
    let r2 = p.rho * p.rho;
    let reach = (spec.x.max - spec.m.min).abs().max((spec.m.max - spec.x.min).abs());
    let max_b = (p.a + p.q).abs() * reach;
    let dt = p.horizon / spec.steps as f64;
    dt * (s2 / (dx * dx) + s2 * r2 / (dm * dm) + s2 * r2 / (dx * dm) + max_b / dx)
}

/// Exact field with separately supplied coefficients.
fn quadratic(eta: f64, chi: f64, x: f64, m: f64) -> f64 {
    0.5 * eta * (x - m) * (x - m) + chi
}

/// Backward explicit time stepping with the exact field clamped on the boundary.
pub fn solve_master(p: &LqParams, spec: &MasterSpec) -> Result<MasterGrid> {
    let p = limit_params(p)?;
    if spec.steps == 0 || spec.store_every == 0 {
        return Err(Error::invalid("need at least one time step and a positive store interval"));
    }
    let cfl = cfl_number(&p, spec);
    if cfl > 0.5 {
        return Err(Error::Stability(format!("CFL number {cfl} exceeds 1/2")));
    }
    let t_axis = TimeGrid::on(p.horizon, spec.steps)?;
    let curves = closed_curves(&p, &t_axis)?;
    let (nx, nm) = (spec.x.n, spec.m.n);
    let (dx, dm) = (spec.x.step(), spec.m.step());
    let dt = t_axis.dt();
    let xs: Vec<f64> = (0..nx).map(|i| spec.x.point(i)).collect();
    let ms: Vec<f64> = (0..nm).map(|j| spec.m.point(j)).collect();
    let aq = p.a + p.q;
    let d = p.eps - p.q * p.q;
    let s2 = p.sigma * p.sigma;
    let r2 = p.rho * p.rho;

    let mut v: Vec<f64> = (0..nx * nm).map(|idx| p.terminal_cost(xs[idx / nm], ms[idx % nm])).collect();
    let mut stored = vec![spec.steps];
    let mut slices = vec![v.clone()];
    let mut next = v.clone();
    for k in (0..spec.steps).rev() {
        let (eta_k, chi_k) = (curves.eta[k], curves.chi[k]);
        let old = &v;
        next.par_chunks_mut(nm).enumerate().for_each(|(i, row)| {
            let x = xs[i];
            for (j, out) in row.iter_mut().enumerate() {
                let m = ms[j];
                if i == 0 || j == 0 || i + 1 == nx || j + 1 == nm {
                    *out = quadratic(eta_k, chi_k, x, m);
                    continue;
                }
                let at = |a: usize, b: usize| old[a * nm + b];
                let c = at(i, j);
                let vx = (at(i + 1, j) - at(i - 1, j)) / (2.0 * dx);
                let vxx = (at(i + 1, j) - 2.0 * c + at(i - 1, j)) / (dx * dx);
                let vmm = (at(i, j + 1) - 2.0 * c + at(i, j - 1)) / (dm * dm);
                let vxm = (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1)) / (4.0 * dx * dm);
                let b = aq * (m - x);
                // Second-order upwind for the transport term, central on the
                // first interior ring where the wide stencil does not fit.
                let adv = if b > 0.0 && i + 2 < nx {
                    (-3.0 * c + 4.0 * at(i + 1, j) - at(i + 2, j)) / (2.0 * dx)
                } else if b < 0.0 && i >= 2 {
                    (3.0 * c - 4.0 * at(i - 1, j) + at(i - 2, j)) / (2.0 * dx)
                } else {
                    vx
                };
                let gap = m - x;
                let l = b * adv + 0.5 * d * gap * gap - 0.5 * vx * vx
                    + 0.5 * s2 * vxx
                    + 0.5 * s2 * r2 * vmm
                    + s2 * r2 * vxm;
                *out = c + dt * l;
            }
        });
        std::mem::swap(&mut v, &mut next);
        if let Some(idx) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value at t = {}, x = {}, m = {}",
                t_axis.time(k),
                xs[idx / nm],
                ms[idx % nm]
            )));
        }
        if k == 0 || k % spec.store_every == 0 {
            stored.push(k);
            slices.push(v.clone());
        }
    }
    stored.reverse();
    slices.reverse();
    Ok(MasterGrid { params: p, x_axis: spec.x, m_axis: spec.m, t_axis, stored, slices, curves })
}

impl MasterGrid {
    pub fn n_m(&self) -> usize {
        self.m_axis.n
    }

    /// Exact field at time node `k`.
    pub fn exact(&self, k: usize, x: f64, m: f64) -> f64 {
        quadratic(self.curves.eta[k], self.curves.chi[k], x, m)
    }

    /// Max `|V - v|` over interior lattice points of stored slice `s`.
    pub fn interior_error(&self, s: usize) -> f64 {
        let k = self.stored[s];
        let nm = self.n_m();
        let mut worst: f64 = 0.0;
        for i in 1..self.x_axis.n - 1 {
            for j in 1..nm - 1 {
                let (x, m) = (self.x_axis.point(i), self.m_axis.point(j));
                worst = worst.max((self.slices[s][i * nm + j] - self.exact(k, x, m)).abs());
            }
        }
        worst
    }

    /// Max interior error over all stored slices.
    pub fn max_interior_error(&self) -> f64 {
        (0..self.slices.len()).map(|s| self.interior_error(s)).fold(0.0, f64::max)
    }

    /// Largest spread of the stored slice `s` along lattice diagonals
    /// (constant `x - m`), which vanishes for a translation-invariant field.
    /// Requires equal spacing on both axes.
    pub fn diagonal_spread(&self, s: usize) -> f64 {
        let nm = self.n_m();
        let nx = self.x_axis.n;
        let offset = ((self.m_axis.min - self.x_axis.min) / self.x_axis.step()).round() as i64;
        let mut worst: f64 = 0.0;
        for shift in -(nx as i64) + 1..nm as i64 {
            let cells: Vec<f64> = (0..nx as i64)
                .filter_map(|i| {
                    let j = i + shift - offset;
                    (0..nm as i64).contains(&j).then(|| self.slices[s][i as usize * nm + j as usize])
                })
                .collect();
            if let (Some(lo), Some(hi)) = (
                cells.iter().cloned().reduce(f64::min),
                cells.iter().cloned().reduce(f64::max),
            ) {
                worst = worst.max(hi - lo);
            }
        }
        worst
    }

    /// Bicubic (Keys, `a = -1/2`) interpolation of stored slice `s`.
    /// Reproduces quadratics exactly away from the outer cell ring.
    pub fn interpolate(&self, s: usize, x: f64, m: f64) -> f64 {
        let (wx, ix) = keys_weights(&self.x_axis, x);
        let (wm, im) = keys_weights(&self.m_axis, m);
        let nm = self.n_m();
        let mut acc = 0.0;
        for (a, wa) in wx.iter().enumerate() {
            for (b, wb) in wm.iter().enumerate() {
                acc += wa * wb * self.slices[s][(ix + a) * nm + im + b];
            }
        }
        acc
    }
}

/// Four Keys weights and the first stencil index for `x` on `axis`.
fn keys_weights(axis: &Axis, x: f64) -> ([f64; 4], usize) {
    let h = axis.step();
    let cell = (((x - axis.min) / h).floor() as i64).clamp(1, axis.n as i64 - 3) as usize;
    let u = (x - axis.point(cell)) / h;
    let kern = |s: f64| {
        let s = s.abs();
        if s <= 1.0 {
            1.5 * s * s * s - 2.5 * s * s + 1.0
        } else if s < 2.0 {
            -0.5 * s * s * s + 2.5 * s * s - 4.0 * s + 2.0
        } else {
            0.0
        }
    };
    ([kern(u + 1.0), kern(u), kern(1.0 - u), kern(2.0 - u)], cell - 1)
}

/// Probe points for residual evaluation with finite-difference spacing `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ms: Vec<f64>,
    pub h: f64,
}

fn d1(f: &dyn Fn(f64) -> f64, z: f64, h: f64) -> f64 {
    (-f(z + 2.0 * h) + 8.0 * f(z + h) - 8.0 * f(z - h) + f(z - 2.0 * h)) / (12.0 * h)
}

fn d2(f: &dyn Fn(f64) -> f64, z: f64, h: f64) -> f64 {
    (-f(z + 2.0 * h) + 16.0 * f(z + h) - 30.0 * f(z) + 16.0 * f(z - h) - f(z - 2.0 * h)) / (12.0 * h * h)
}

/// Max absolute value of the master-equation operator applied to `field` on
/// the probe lattice, every derivative by fourth-order central differences.
pub fn residual_of_field<F: Fn(f64, f64, f64) -> f64>(field: F, p: &LqParams, probe: &Probe) -> f64 {
    let h = probe.h;
    let aq = p.a + p.q;
    let d = p.eps - p.q * p.q;
    let s2 = p.sigma * p.sigma;
    let r2 = p.rho * p.rho;
    let mut worst: f64 = 0.0;
    for &t in &probe.times {
        for &x in &probe.xs {
            for &m in &probe.ms {
                let vt = d1(&|s| field(s, x, m), t, h);
                let vx = d1(&|y| field(t, y, m), x, h);
                let vxx = d2(&|y| field(t, y, m), x, h);
                let vmm = d2(&|n| field(t, x, n), m, h);
                let vxm = d1(&|n| d1(&|y| field(t, y, n), x, h), m, h);
                let gap = m - x;
                let r = vt + aq * gap * vx + 0.5 * d * gap * gap - 0.5 * vx * vx
                    + 0.5 * s2 * vxx
                    + 0.5 * s2 * r2 * vmm
                    + s2 * r2 * vxm;
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

/// Discrete probability measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if atoms.len() != weights.len() || atoms.is_empty() {
            return Err(Error::invalid("atoms and weights must be nonempty and of equal length"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights must be nonnegative and sum to 1 (sum {total})")));
        }
        Ok(DiscreteMeasure { atoms, weights })
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    /// Random measure: `n_atoms` atoms uniform on `[-spread, spread]` with
    /// random weights, recentred at a mean uniform on `[-mean_spread, mean_spread]`.
    pub fn random(seed: u64, id: u32, n_atoms: usize, spread: f64, mean_spread: f64) -> Result<Self> {
        if n_atoms == 0 || !(spread > 0.0) || !(mean_spread >= 0.0) {
            return Err(Error::invalid("random measure needs atoms and positive spreads"));
        }
        let mut rng = path_rng(seed, id, PathKey::Aux(7));
        let atoms: Vec<f64> = (0..n_atoms).map(|_| rng.random_range(-spread..spread)).collect();
        let raw: Vec<f64> = (0..n_atoms).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let rest: f64 = weights[1..].iter().sum();
        weights[0] = 1.0 - rest;
        let m = if mean_spread > 0.0 { rng.random_range(-mean_spread..mean_spread) } else { 0.0 };
        Ok(DiscreteMeasure::new(atoms, weights)?.recentred(m))
    }

    /// The same weights with atoms shifted so that the mean is `m`.
    pub fn recentred(&self, m: f64) -> DiscreteMeasure {
        let shift = m - self.mean();
        DiscreteMeasure { atoms: self.atoms.iter().map(|a| a + shift).collect(), weights: self.weights.clone() }
    }
}

/// `int d_x V(t, x, m) mu(dx)` with `m` the mean of `mu`, by central
/// differences of step `h`.
pub fn restriction_check<F: Fn(f64, f64, f64) -> f64>(field: F, mu: &DiscreteMeasure, t: f64, h: f64) -> f64 {
    let m = mu.mean();
    mu.atoms
        .iter()
        .zip(&mu.weights)
        .map(|(&x, &w)| w * (field(t, x + h, m) - field(t, x - h, m)) / (2.0 * h))
        .sum()
}

/// Drift of `S_t = v(t, X_t, m_t) + int_0^t f ds` along the limit dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct DecouplingReport {
    /// Times of the coarse mesh.
    pub times: Vec<f64>,
    /// `E[S_t - S_0]` at each mesh time.
    pub drift: Vec<MeanSe>,
    /// The same at twice the step, on the same Brownian paths.
    pub drift_coarse: Vec<MeanSe>,
}

impl DecouplingReport {
    /// `max_t |E[S_t - S_0]|`.
    pub fn statistic(&self) -> f64 {
        self.drift.iter().map(|d| d.mean.abs()).fold(0.0, f64::max)
    }

    /// `max_t |drift(dt) - drift(2 dt)|`.
    pub fn bias_bound(&self) -> f64 {
        self.drift
            .iter()
            .zip(&self.drift_coarse)
            .map(|(a, b)| (a.mean - b.mean).abs())
            .fold(0.0, f64::max)
    }

    /// Every mesh time is within three standard errors plus the bias bound.
    pub fn is_martingale(&self) -> bool {
        let bias = self.bias_bound();
        self.drift.iter().all(|d| d.mean.abs() <= 3.0 * d.se + bias)
    }

    /// Some mesh time is more than five standard errors plus the bias bound
    /// away from zero.
    pub fn detects_drift(&self) -> bool {
        let bias = self.bias_bound();
        self.drift.iter().any(|d| d.mean.abs() > 5.0 * d.se + bias)
    }
}

/// Monte Carlo martingale test of the exact decoupling field. The field's
/// quadratic coefficient is multiplied by `eta_scale` (1 for the real test,
/// e.g. 1.1 for a negative control) while the dynamics keep the equilibrium
/// feedback. Each scenario evolves one particle in the exact environment
/// `m_t = m_0 + sigma rho W0_t`.
pub fn decoupling_consistency(
    p: &LqParams,
    grid: &TimeGrid,
    n_scenarios: usize,
    seed: u64,
    law: &InitialLaw,
    mesh: usize,
    eta_scale: f64,
) -> Result<DecouplingReport> {
    let p = limit_params(p)?;
    if mesh == 0 || grid.steps() % (2 * mesh) != 0 {
        return Err(Error::invalid("the step count must be a multiple of twice the mesh size"));
    }
    let coarse_grid = grid.coarsen(2)?;
    let fine_curves = mkv::prepare(&p, grid, law)?;
    let coarse_curves = mkv::prepare(&p, &coarse_grid, law)?;
    let opts = CloudOptions { environment: Environment::Exact, record_states: true };
    let increments = |curves: &RiccatiCurves, noise: &crate::model::NoiseBundle, x0: f64| -> Result<Vec<f64>> {
        let cloud = mkv::run_cloud_on(&p, curves, noise, vec![x0], law, opts)?;
        let xs = &cloud.states.as_ref().expect("states recorded")[0];
        let env = &cloud.environment_mean;
        let g = curves.grid;
        let n = g.steps();
        let stride = n / mesh;
        let s_at = |k: usize, running: f64| {
            quadratic(eta_scale * curves.eta[k], curves.chi[k], xs[k], env[k]) + running
        };
        let mut running = 0.0;
        let s0 = s_at(0, 0.0);
        let mut out = Vec::with_capacity(mesh);
        for k in 0..n {
            let alpha = curves.gain(&p, k) * (env[k] - xs[k]);
            running += p.running_cost(xs[k], env[k], alpha) * g.dt();
            if (k + 1) % stride == 0 {
                out.push(s_at(k + 1, running) - s0);
            }
        }
        Ok(out)
    };
    let per = (0..n_scenarios)
        .into_par_iter()
        .map(|s| {
            let noise = make_noise(seed, s as u32, *grid, 1, &[1.0])?;
            let x0 = law.sample(seed, s as u32, 1)[0];
            let fine = increments(&fine_curves, &noise, x0)?;
            let coarse = increments(&coarse_curves, &noise.coarsen(2)?, x0)?;
            Ok((fine, coarse))
        })
        .collect::<Result<Vec<_>>>()?;
    let column = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> f64| mean_se(&per.iter().map(pick).collect::<Vec<_>>());
    let drift = (0..mesh).map(|j| column(&|r| r.0[j])).collect();
    let drift_coarse = (0..mesh).map(|j| column(&|r| r.1[j])).collect();
    let times = (1..=mesh).map(|j| grid.time(j * grid.steps() / mesh)).collect();
    Ok(DecouplingReport { times, drift, drift_coarse })
}
