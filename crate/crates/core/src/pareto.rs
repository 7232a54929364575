//! Growth model with Pareto-distributed states.
//!
//! States follow `dX = gamma' X dt + sigma X dW0`; with the equilibrium rate
//! `gamma` every state is a fixed multiple of the left endpoint
//! `q_t = exp((gamma - sigma^2/2) t + sigma W0_t)`, so a Pareto(1, k) initial
//! law stays Pareto(q_t, k) given the common noise.
//!
//! The running term `f` is a reward (production minus effort). Martingale
//! checks report drifts of the cost process `-(e^{-rt} V + int e^{-rs} f)`,
//! which is a martingale along the equilibrium and a submartingale along
//! deviations.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{make_noise, path_rng, PathKey, TimeGrid};
use crate::stats::{ks_critical_1pct, ks_statistic, mean_se, MeanSe};

/// Model inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoParams {
    /// Pareto decay exponent `k`.
    pub tail_exp: f64,
    /// Production exponent `a`.
    pub production_exp: f64,
    /// Density exponent `b`.
    pub density_exp: f64,
    /// Production weight `c`.
    pub production_weight: f64,
    /// Effort cost weight `E`.
    pub effort_weight: f64,
    /// Effort exponent `p > 1`.
    pub effort_exp: f64,
    pub sigma: f64,
    /// Discount rate; zero for a plain finite horizon.
    pub discount: f64,
    pub horizon: f64,
}

impl ParetoParams {
    pub fn validated(self) -> Result<Self> {
        let ParetoParams { tail_exp: k, production_exp: a, density_exp: b, production_weight: c, effort_weight: e, effort_exp: p, sigma, discount: r, horizon } = self;
        let finite = [k, a, b, c, e, p, sigma, r, horizon].iter().all(|v| v.is_finite());
        if !finite || k <= 0.0 || b <= 0.0 || c < 0.0 || e <= 0.0 || p <= 1.0 || sigma < 0.0 || r < 0.0 || horizon <= 0.0 {
            return Err(Error::invalid("pareto parameters out of range"));
        }
        if (a + b - p).abs() > 1e-12 * p {
            return Err(Error::invalid("production and density exponents must add up to the effort exponent"));
        }
        if p * (p - 1.0) >= b * k {
            return Err(Error::invalid("need p(p-1) < b k"));
        }
        Ok(self)
    }

    /// Exponent of the value in the state, `p + b k`.
    pub fn value_exp(&self) -> f64 {
        self.effort_exp + self.density_exp * self.tail_exp
    }

    /// Exponent of the endpoint in the value, `b k`.
    pub fn endpoint_exp(&self) -> f64 {
        self.density_exp * self.tail_exp
    }

    /// Left side of the equation for the value coefficient.
    pub fn root_function(&self, b: f64) -> f64 {
        let p = self.effort_exp;
        let lead = self.value_exp().powf(1.0 / (p - 1.0))
            * self.effort_weight.powf(-1.0 / (p - 1.0))
            * (p - 1.0 - self.endpoint_exp() / p);
        lead * b.powf(p / (p - 1.0))
            + (0.5 * self.sigma * self.sigma * p * (p - 1.0) - self.discount) * b
            + self.production_weight / self.tail_exp.powf(self.density_exp)
    }

    /// Running reward `f(x, mu^(q), alpha)`.
    pub fn running_reward(&self, x: f64, q: f64, alpha: f64) -> f64 {
        let m = self.endpoint_exp();
        let qm = q.powf(m);
        let production = if x >= q {
            self.production_weight / (self.tail_exp.powf(self.density_exp) * qm) * x.powf(self.value_exp())
        } else {
            0.0
        };
        production - self.effort_weight / (self.effort_exp * qm) * alpha.powf(self.effort_exp) * x.powf(m).max(qm)
    }
}

/// Solved model: value coefficient and equilibrium growth rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub params: ParetoParams,
    pub value_coef: f64,
    pub growth_rate: f64,
    /// Set when the running reward vanishes, so zero is also a root.
    pub degenerate: bool,
}

impl Equilibrium {
    /// `V(x, q) = B x^p max((x/q)^{bk}, 1)`: the power solution above the
    /// endpoint, extended by `B x^p` below it.
    pub fn value(&self, x: f64, q: f64) -> f64 {
        let p = &self.params;
        self.value_coef * x.powf(p.effort_exp) * (x / q).max(1.0).powf(p.endpoint_exp())
    }

    /// Optimal feedback given the slope of the value in the state.
    pub fn feedback_from_slope(&self, x: f64, q: f64, slope: f64) -> f64 {
        let p = &self.params;
        let crowd = (q / x).powf(p.endpoint_exp()).min(1.0);
        (slope / p.effort_weight * crowd).powf(1.0 / (p.effort_exp - 1.0))
    }

    /// Same model with a different value coefficient and unchanged rate.
    pub fn with_value_coef(mut self, b: f64) -> Self {
        self.value_coef = b;
        self
    }
}

/// Value coefficient with its degeneracy flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub value: f64,
    pub degenerate: bool,
}

/// Positive root of the value-coefficient equation by bisection.
pub fn solve_value_coef(params: &ParetoParams) -> Result<Root> {
    let p = params.validated()?;
    let f = |b: f64| p.root_function(b);
    let degenerate = p.production_weight == 0.0;
    if degenerate && 0.5 * p.sigma * p.sigma * p.effort_exp * (p.effort_exp - 1.0) - p.discount <= 0.0 {
        // No positive root: only the trivial value survives.
        return Ok(Root { value: 0.0, degenerate });
    }
    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numerical("no sign change for the value coefficient".into()));
        }
    }
    let mut lo = 0.0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let value = if f(lo).abs() <= f(hi).abs() && lo > 0.0 { lo } else { hi };
    Ok(Root { value, degenerate })
}

/// `gamma = (B (p + bk) / E)^{1/(p-1)}`.
pub fn growth_rate(params: &ParetoParams, value_coef: f64) -> Result<f64> {
    if !(value_coef >= 0.0) {
        return Err(Error::Domain(format!("value coefficient {value_coef} must be nonnegative")));
    }
    Ok((value_coef * params.value_exp() / params.effort_weight).powf(1.0 / (params.effort_exp - 1.0)))
}

pub fn solve(params: &ParetoParams) -> Result<Equilibrium> {
    let root = solve_value_coef(params)?;
    Ok(Equilibrium {
        params: *params,
        value_coef: root.value,
        growth_rate: growth_rate(params, root.value)?,
        degenerate: root.degenerate,
    })
}

/// Inverse-CDF draws from Pareto(q, k).
pub fn sample_pareto(q: f64, k: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    sample_pareto_scenario(q, k, n, seed, 0)
}

fn sample_pareto_scenario(q: f64, k: f64, n: usize, seed: u64, scenario: u32) -> Result<Vec<f64>> {
    if !(q > 0.0 && k > 0.0) {
        return Err(Error::invalid("pareto sampling needs q > 0 and k > 0"));
    }
    let mut rng = path_rng(seed, scenario, PathKey::Aux(2));
    Ok((0..n)
        .map(|_| {
            let u = 1.0 - rng.random::<f64>();
            q * u.powf(-1.0 / k)
        })
        .collect())
}

/// Mass of `[x, inf)` under Pareto(q, k).
pub fn pareto_tail(q: f64, k: f64, x: f64) -> f64 {
    (q / x).powf(k).min(1.0)
}

/// One scenario of the growth model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoState {
    pub grid: TimeGrid,
    pub common: Vec<f64>,
    pub endpoint: Vec<f64>,
    pub initial: Vec<f64>,
}

impl ParetoState {
    /// States at node `k`: `X_0 q_t`.
    pub fn states(&self, k: usize) -> Vec<f64> {
        self.initial.iter().map(|x| x * self.endpoint[k]).collect()
    }

    /// KS distance of the normalised states at node `k` to Pareto(1, k).
    pub fn ks_at(&self, node: usize, tail_exp: f64) -> f64 {
        let q = self.endpoint[node];
        let scaled: Vec<f64> = self.states(node).iter().map(|x| x / q).collect();
        ks_statistic(&scaled, |x| 1.0 - pareto_tail(1.0, tail_exp, x))
    }
}

/// `exp((rate - sigma^2/2) t + sigma W)` along the grid.
fn growth_factor(rate: f64, sigma: f64, grid: &TimeGrid, common: &[f64]) -> Vec<f64> {
    grid.times().iter().zip(common).map(|(t, w)| ((rate - 0.5 * sigma * sigma) * t + sigma * w).exp()).collect()
}

fn common_path(seed: u64, scenario: u32, grid: TimeGrid) -> Result<Vec<f64>> {
    Ok(make_noise(seed, scenario, grid, 0, &[1.0])?.common_path(0))
}

/// Exact simulation of the equilibrium from Pareto(1, k).
pub fn simulate_growth(
    eq: &Equilibrium,
    grid: TimeGrid,
    n_particles: usize,
    n_scenarios: usize,
    seed: u64,
) -> Result<Vec<ParetoState>> {
    (0..n_scenarios as u32)
        .into_par_iter()
        .map(|s| {
            let common = common_path(seed, s, grid)?;
            let endpoint = growth_factor(eq.growth_rate, eq.params.sigma, &grid, &common);
            let initial = sample_pareto_scenario(1.0, eq.params.tail_exp, n_particles, seed, s)?;
            Ok(ParetoState { grid, common, endpoint, initial })
        })
        .collect()
}

/// KS distances at the given nodes with the 1% critical value.
#[derive(Debug, Clone, PartialEq)]
pub struct KsReport {
    pub times: Vec<f64>,
    pub stats: Vec<f64>,
    pub critical: f64,
}

impl KsReport {
    pub fn passes(&self) -> bool {
        self.stats.iter().all(|s| *s < self.critical)
    }
}

pub fn ks_checks(state: &ParetoState, tail_exp: f64, nodes: &[usize]) -> KsReport {
    KsReport {
        times: nodes.iter().map(|k| state.grid.time(*k)).collect(),
        stats: nodes.iter().map(|k| state.ks_at(*k, tail_exp)).collect(),
        critical: ks_critical_1pct(state.initial.len()),
    }
}

/// Probe lattice for the parameterized master equation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoProbe {
    pub xs: Vec<f64>,
    pub qs: Vec<f64>,
    /// Difference stencils reach `h` in each variable, so points with
    /// `|x - q| <= 2h` are skipped.
    pub h: f64,
}

impl ParetoProbe {
    fn validate(&self) -> Result<()> {
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if self.h <= 0.0 || !self.xs.iter().all(positive) || !self.qs.iter().all(positive) {
            return Err(Error::invalid("probe needs positive states, endpoints and spacing"));
        }
        if self.qs.iter().any(|q| *q <= self.h) || self.xs.iter().any(|x| *x <= self.h) {
            return Err(Error::invalid("probe stencil leaves the positive quadrant"));
        }
        Ok(())
    }
}

/// Residual of the stationary parameterized master equation at `(x, q)`,
/// derivatives by fourth-order differences with half-spacing `h/2`.
pub fn residual_at(eq: &Equilibrium, x: f64, q: f64, h: f64) -> f64 {
    let p = &eq.params;
    let s = 0.5 * h;
    let v = |x: f64, q: f64| eq.value(x, q);
    let d1 = |f: &dyn Fn(f64) -> f64, z: f64| (f(z - 2.0 * s) - 8.0 * f(z - s) + 8.0 * f(z + s) - f(z + 2.0 * s)) / (12.0 * s);
    let d2 = |f: &dyn Fn(f64) -> f64, z: f64| {
        (-f(z - 2.0 * s) + 16.0 * f(z - s) - 30.0 * f(z) + 16.0 * f(z + s) - f(z + 2.0 * s)) / (12.0 * s * s)
    };
    let vx = d1(&|z| v(z, q), x);
    let vq = d1(&|z| v(x, z), q);
    let vxx = d2(&|z| v(z, q), x);
    let vqq = d2(&|z| v(x, z), q);
    let vxq = d1(&|z| d1(&|w| v(w, z), x), q);
    let pe = p.effort_exp;
    let crowd = (q / x).powf(p.endpoint_exp() / (pe - 1.0)).min(1.0);
    let hamiltonian = (pe - 1.0) / pe * p.effort_weight.powf(-1.0 / (pe - 1.0)) * vx.max(0.0).powf(pe / (pe - 1.0)) * crowd;
    let production = if x >= q {
        p.production_weight * x.powf(p.value_exp()) / (p.tail_exp.powf(p.density_exp) * q.powf(p.endpoint_exp()))
    } else {
        0.0
    };
    let sig2 = p.sigma * p.sigma;
    hamiltonian + production + eq.growth_rate * q * vq + 0.5 * sig2 * (x * x * vxx + q * q * vqq + 2.0 * x * q * vxq)
        - p.discount * v(x, q)
}

/// Max |residual| over probe points with `x > q + 2h`.
pub fn pareto_master_residual(eq: &Equilibrium, probe: &ParetoProbe) -> Result<f64> {
    probe.validate()?;
    let mut worst: Option<f64> = None;
    for &x in &probe.xs {
        for &q in &probe.qs {
            if x > q + 2.0 * probe.h {
                let r = residual_at(eq, x, q, probe.h).abs();
                worst = Some(worst.map_or(r, |w: f64| w.max(r)));
            }
        }
    }
    worst.ok_or_else(|| Error::invalid("probe has no point above the diagonal band"))
}

/// Smallest residual over probe points with `x < q - 2h`, where the extended
/// value is a subsolution.
pub fn subsolution_margin(eq: &Equilibrium, probe: &ParetoProbe) -> Result<f64> {
    probe.validate()?;
    let mut worst: Option<f64> = None;
    for &x in &probe.xs {
        for &q in &probe.qs {
            if x < q - 2.0 * probe.h {
                let r = residual_at(eq, x, q, probe.h);
                worst = Some(worst.map_or(r, |w: f64| w.min(r)));
            }
        }
    }
    worst.ok_or_else(|| Error::invalid("probe has no point below the diagonal band"))
}

/// Drift of the cost process along states driven by `rate * X`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub rate: f64,
    pub times: Vec<f64>,
    /// Scenario mean of `M_t - M_0` at each node.
    pub path: Vec<f64>,
    /// `M_T - M_0` over scenarios.
    pub drift: MeanSe,
    /// Same estimate from every other node of the same paths.
    pub drift_coarse: f64,
    /// `e^{-rT} E[V(X_T, q_T)]`.
    pub tail: f64,
}

impl DriftReport {
    pub fn bias_bound(&self) -> f64 {
        (self.drift.mean - self.drift_coarse).abs()
    }

    pub fn is_martingale(&self) -> bool {
        self.drift.mean.abs() <= 3.0 * self.drift.se + self.bias_bound()
    }

    pub fn is_submartingale(&self) -> bool {
        self.drift.mean >= -3.0 * self.drift.se
    }
}

/// Cost-process drift along the linear feedback `rate * x`, against the
/// equilibrium endpoint path.
pub fn martingale_checks(
    eq: &Equilibrium,
    grid: TimeGrid,
    n_scenarios: usize,
    n_particles: usize,
    seed: u64,
    rate: f64,
) -> Result<DriftReport> {
    if !(rate >= 0.0) || n_scenarios < 2 || n_particles == 0 {
        return Err(Error::invalid("need a nonnegative rate, two scenarios and one particle"));
    }
    if grid.steps() % 2 != 0 {
        return Err(Error::invalid("step count must be even for the halving estimate"));
    }
    let p = eq.params;
    let times = grid.times();
    let dt = grid.dt();
    let per_scenario: Vec<(Vec<f64>, f64, f64)> = (0..n_scenarios as u32)
        .into_par_iter()
        .map(|s| {
            let common = common_path(seed, s, grid)?;
            let endpoint = growth_factor(eq.growth_rate, p.sigma, &grid, &common);
            let factor = growth_factor(rate, p.sigma, &grid, &common);
            let initial = sample_pareto_scenario(1.0, p.tail_exp, n_particles, seed, s)?;
            let nodes = times.len();
            let mut path = vec![0.0; nodes];
            let mut coarse = 0.0;
            let mut tail = 0.0;
            let mut reward = vec![0.0; nodes];
            for x0 in &initial {
                for k in 0..nodes {
                    let x = x0 * factor[k];
                    reward[k] = (-p.discount * times[k]).exp() * p.running_reward(x, endpoint[k], rate * x);
                }
                let discounted_value =
                    |k: usize| (-p.discount * times[k]).exp() * eq.value(x0 * factor[k], endpoint[k]);
                let v0 = discounted_value(0);
                let mut integral = 0.0;
                for k in 1..nodes {
                    integral += 0.5 * dt * (reward[k - 1] + reward[k]);
                    path[k] -= discounted_value(k) + integral - v0;
                }
                let mut coarse_integral = 0.0;
                for k in (2..nodes).step_by(2) {
                    coarse_integral += dt * (reward[k - 2] + reward[k]);
                }
                let last = nodes - 1;
                coarse -= discounted_value(last) + coarse_integral - v0;
                tail += discounted_value(last);
            }
            let n = n_particles as f64;
            path.iter_mut().for_each(|v| *v /= n);
            Ok((path, coarse / n, tail / n))
        })
        .collect::<Result<_>>()?;
    let n = n_scenarios as f64;
    let nodes = times.len();
    let path: Vec<f64> = (0..nodes).map(|k| per_scenario.iter().map(|r| r.0[k]).sum::<f64>() / n).collect();
    let finals: Vec<f64> = per_scenario.iter().map(|r| r.0[nodes - 1]).collect();
    Ok(DriftReport {
        rate,
        times,
        path,
        drift: mean_se(&finals),
        drift_coarse: per_scenario.iter().map(|r| r.1).sum::<f64>() / n,
        tail: per_scenario.iter().map(|r| r.2).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_case(c: f64) -> ParetoParams {
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

    #[test]
    fn rejects_invalid_exponents() {
        let mut p = quadratic_case(1.0);
        p.production_exp = 1.5;
        assert!(solve(&p).is_err());
        let mut p = quadratic_case(1.0);
        p.tail_exp = 1.5;
        assert!(solve(&p).is_err());
    }

    #[test]
    fn pareto_boundary_and_tail() {
        assert_eq!(pareto_tail(2.0, 3.0, 1.0), 1.0);
        assert_eq!(pareto_tail(2.0, 3.0, 2.0), 1.0);
        assert!((pareto_tail(1.0, 3.0, 2.0) - 0.125).abs() < 1e-15);
        assert!(sample_pareto(1.5, 2.0, 1000, 3).unwrap().iter().all(|x| *x >= 1.5));
        assert!(sample_pareto(0.0, 2.0, 1, 3).is_err());
    }

    #[test]
    fn feedback_matches_linear_rule_above_the_endpoint() {
        let eq = solve(&quadratic_case(1.0)).unwrap();
        let n = eq.params.value_exp();
        let m = eq.params.endpoint_exp();
        for (x, q) in [(1.0, 1.0), (2.0, 1.0), (3.5, 1.7)] {
            let slope = eq.value_coef * n * f64::powf(x, n - 1.0) / f64::powf(q, m);
            let a = eq.feedback_from_slope(x, q, slope);
            assert!((a - eq.growth_rate * x).abs() < 1e-12 * x, "{a}");
        }
    }
}
