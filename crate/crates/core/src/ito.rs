//! Ito's formula along flows of empirical conditional measures, for
//! cylindrical functionals `H(mu) = phi(<psi_1, mu>, ..., <psi_K, mu>)`.
//!
//! A cloud of particles `dX = beta(X) dt + s(X) dW + sum_j s0_j(X) dW0_j`
//! shares common modes `W0_j` with `Var(dW0_j) = nu_j dt`. Along the cloud the
//! increment of `H(mu_t)` is compared with the sum of
//!
//! * the drift term `sum_k d_k phi E[psi_k' beta]`,
//! * the common stochastic integral `sum_j sum_k d_k phi E[psi_k' s0_j] dW0_j`,
//! * the idiosyncratic second-order term `1/2 sum_k d_k phi E[psi_k'' s^2]`
//!   (the auxiliary Gaussian of the lifted formula has vanishing mixed
//!   moments, so the Hessian part drops out),
//! * the common second-order term `1/2 sum_j nu_j D^2 H[s0_j, s0_j]`.
//!
//! The joint version adds a tagged state `x` and the terms of classical Ito
//! in `x`, plus the bracket between `x` and the measure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{make_noise, path_rng, InitialLaw, PathKey, PathStreams, TimeGrid};
use crate::stats::{mean_se, MeanSe};

/// Scalar test map with two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestMap {
    Identity,
    Power(i32),
    Sin(f64),
    Cos(f64),
    Exp(f64),
}

impl TestMap {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            TestMap::Identity => x,
            TestMap::Power(n) => x.powi(n),
            TestMap::Sin(w) => (w * x).sin(),
            TestMap::Cos(w) => (w * x).cos(),
            TestMap::Exp(r) => (r * x).exp(),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            TestMap::Identity => 1.0,
            TestMap::Power(0) => 0.0,
            TestMap::Power(n) => n as f64 * x.powi(n - 1),
            TestMap::Sin(w) => w * (w * x).cos(),
            TestMap::Cos(w) => -w * (w * x).sin(),
            TestMap::Exp(r) => r * (r * x).exp(),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            TestMap::Identity => 0.0,
            TestMap::Power(n) if n < 2 => 0.0,
            TestMap::Power(n) => (n * (n - 1)) as f64 * x.powi(n - 2),
            TestMap::Sin(w) => -w * w * (w * x).sin(),
            TestMap::Cos(w) => -w * w * (w * x).cos(),
            TestMap::Exp(r) => r * r * (r * x).exp(),
        }
    }
}

/// Outer function `phi` with explicit gradient and Hessian.
#[derive(Debug, Clone, PartialEq)]
pub enum Outer {
    /// `c0 + lin . y + y^T quad y / 2`; `quad` must be symmetric.
    Quadratic { c0: f64, lin: Vec<f64>, quad: Vec<Vec<f64>> },
    /// `exp(w . y)`.
    Exp(Vec<f64>),
    /// `sin(w . y)`.
    Sin(Vec<f64>),
}

impl Outer {
    pub fn dim(&self) -> usize {
        match self {
            Outer::Quadratic { lin, .. } => lin.len(),
            Outer::Exp(w) | Outer::Sin(w) => w.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Outer::Quadratic { lin, quad, .. } = self {
            let n = lin.len();
            if quad.len() != n || quad.iter().any(|r| r.len() != n) {
                return Err(Error::invalid("quadratic outer function has mismatched sizes"));
            }
            for i in 0..n {
                for j in 0..n {
                    if quad[i][j] != quad[j][i] {
                        return Err(Error::invalid("quadratic outer function must be symmetric"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        match self {
            Outer::Quadratic { c0, lin, quad } => {
                let mut v = *c0;
                for (i, yi) in y.iter().enumerate() {
                    v += lin[i] * yi;
                    for (j, yj) in y.iter().enumerate() {
                        v += 0.5 * quad[i][j] * yi * yj;
                    }
                }
                v
            }
            Outer::Exp(w) => dot(w, y).exp(),
            Outer::Sin(w) => dot(w, y).sin(),
        }
    }

    pub fn grad(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Outer::Quadratic { lin, quad, .. } => {
                (0..y.len()).map(|i| lin[i] + dot(&quad[i], y)).collect()
            }
            Outer::Exp(w) => {
                let e = dot(w, y).exp();
                w.iter().map(|wi| wi * e).collect()
            }
            Outer::Sin(w) => {
                let c = dot(w, y).cos();
                w.iter().map(|wi| wi * c).collect()
            }
        }
    }

    pub fn hess(&self, y: &[f64]) -> Vec<Vec<f64>> {
        match self {
            Outer::Quadratic { quad, .. } => quad.clone(),
            Outer::Exp(w) => {
                let e = dot(w, y).exp();
                w.iter().map(|a| w.iter().map(|b| a * b * e).collect()).collect()
            }
            Outer::Sin(w) => {
                let s = -dot(w, y).sin();
                w.iter().map(|a| w.iter().map(|b| a * b * s).collect()).collect()
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `H(mu) = phi(<psi_1, mu>, ..., <psi_K, mu>)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CylindricalFunctional {
    pub inner: Vec<TestMap>,
    pub outer: Outer,
}

impl CylindricalFunctional {
    pub fn new(inner: Vec<TestMap>, outer: Outer) -> Result<Self> {
        outer.validate()?;
        if inner.is_empty() || inner.len() != outer.dim() {
            return Err(Error::invalid("outer dimension must equal the number of test maps"));
        }
        Ok(CylindricalFunctional { inner, outer })
    }

    /// `int x dmu`.
    pub fn mean() -> Self {
        Self::new(vec![TestMap::Identity], Outer::Quadratic { c0: 0.0, lin: vec![1.0], quad: vec![vec![0.0]] })
            .expect("valid")
    }

    /// `(int x dmu)^2`.
    pub fn mean_squared() -> Self {
        Self::new(vec![TestMap::Identity], Outer::Quadratic { c0: 0.0, lin: vec![0.0], quad: vec![vec![2.0]] })
            .expect("valid")
    }

    /// `int x^2 dmu - (int x dmu)^2`.
    pub fn variance() -> Self {
        Self::new(
            vec![TestMap::Identity, TestMap::Power(2)],
            Outer::Quadratic { c0: 0.0, lin: vec![0.0, 1.0], quad: vec![vec![-2.0, 0.0], vec![0.0, 0.0]] },
        )
        .expect("valid")
    }

    /// Empirical moments `<psi_k, mu>`.
    pub fn moments(&self, sample: &[f64]) -> Vec<f64> {
        let n = sample.len() as f64;
        self.inner.iter().map(|psi| sample.iter().map(|x| psi.value(*x)).sum::<f64>() / n).collect()
    }

    pub fn value(&self, sample: &[f64]) -> f64 {
        self.outer.value(&self.moments(sample))
    }

    /// Second derivative of the lift along directions `y`, `z`, with
    /// expectations taken over the empirical sample.
    pub fn lift_second(&self, sample: &[f64], y: &[f64], z: &[f64]) -> f64 {
        let m = self.moments(sample);
        let g = self.outer.grad(&m);
        let h = self.outer.hess(&m);
        let n = sample.len() as f64;
        let ey: Vec<f64> =
            self.inner.iter().map(|p| sample.iter().zip(y).map(|(x, a)| p.d1(*x) * a).sum::<f64>() / n).collect();
        let ez: Vec<f64> =
            self.inner.iter().map(|p| sample.iter().zip(z).map(|(x, b)| p.d1(*x) * b).sum::<f64>() / n).collect();
        let mut v = 0.0;
        for k in 0..self.inner.len() {
            for l in 0..self.inner.len() {
                v += h[k][l] * ey[k] * ez[l];
            }
            let e2 = sample.iter().zip(y).zip(z).map(|((x, a), b)| self.inner[k].d2(*x) * a * b).sum::<f64>() / n;
            v += g[k] * e2;
        }
        v
    }
}

/// `d_mu H(mu)(x) = sum_k d_k phi(<psi, mu>) psi_k'(x)` at the empirical measure.
pub fn lions_derivative(h: &CylindricalFunctional, sample: &[f64], x: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::invalid("empty sample"));
    }
    let g = h.outer.grad(&h.moments(sample));
    Ok(h.inner.iter().zip(&g).map(|(p, gk)| gk * p.d1(x)).sum())
}

/// `H(x, mu) = phi(x, <psi_1, mu>, ..., <psi_K, mu>)`; coordinate 0 of the
/// outer function is the state.
#[derive(Debug, Clone, PartialEq)]
pub struct JointFunctional {
    pub inner: Vec<TestMap>,
    pub outer: Outer,
}

impl JointFunctional {
    pub fn new(inner: Vec<TestMap>, outer: Outer) -> Result<Self> {
        outer.validate()?;
        if outer.dim() != inner.len() + 1 {
            return Err(Error::invalid("outer dimension must be one more than the number of test maps"));
        }
        Ok(JointFunctional { inner, outer })
    }

    /// `x <x', mu>`.
    pub fn state_times_mean() -> Self {
        Self::new(
            vec![TestMap::Identity],
            Outer::Quadratic { c0: 0.0, lin: vec![0.0, 0.0], quad: vec![vec![0.0, 1.0], vec![1.0, 0.0]] },
        )
        .expect("valid")
    }

    /// Embeds a functional of the measure alone (no dependence on `x`).
    pub fn from_measure(h: &CylindricalFunctional) -> Self {
        let k = h.inner.len();
        let outer = match &h.outer {
            Outer::Quadratic { c0, lin, quad } => {
                let mut l = vec![0.0];
                l.extend(lin);
                let mut q = vec![vec![0.0; k + 1]];
                q.extend(quad.iter().map(|r| {
                    let mut row = vec![0.0];
                    row.extend(r);
                    row
                }));
                Outer::Quadratic { c0: *c0, lin: l, quad: q }
            }
            Outer::Exp(w) => Outer::Exp(std::iter::once(0.0).chain(w.iter().cloned()).collect()),
            Outer::Sin(w) => Outer::Sin(std::iter::once(0.0).chain(w.iter().cloned()).collect()),
        };
        JointFunctional { inner: h.inner.clone(), outer }
    }

    /// A function of the state alone: `phi(x) = c0 + l x + q x^2 / 2`.
    pub fn state_only(c0: f64, l: f64, q: f64) -> Self {
        Self::new(
            vec![TestMap::Identity],
            Outer::Quadratic { c0, lin: vec![l, 0.0], quad: vec![vec![q, 0.0], vec![0.0, 0.0]] },
        )
        .expect("valid")
    }
}

/// Coefficient rule of a state: bounded or affine in `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coef {
    Const(f64),
    /// `c0 + c1 x`.
    Affine(f64, f64),
    /// `amp sin(freq x + phase) + offset`.
    Sine { amp: f64, freq: f64, phase: f64, offset: f64 },
}

impl Coef {
    pub fn at(&self, x: f64) -> f64 {
        match *self {
            Coef::Const(c) => c,
            Coef::Affine(c0, c1) => c0 + c1 * x,
            Coef::Sine { amp, freq, phase, offset } => amp * (freq * x + phase).sin() + offset,
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Coef::Const(c) if *c == 0.0)
    }
}

/// Coefficients of the particle cloud and its common modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoProcessSpec {
    pub drift: Coef,
    pub idio_vol: Coef,
    /// One volatility rule per common mode.
    pub common_vols: Vec<Coef>,
    /// Intensity `nu_j` of each mode.
    pub mode_weights: Vec<f64>,
    pub initial: InitialLaw,
}

/// Coefficients of the tagged state in the joint formula. The state sees the
/// same common modes as the cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpec {
    pub drift: Coef,
    pub idio_vol: Coef,
    pub common_vols: Vec<Coef>,
    pub x0: f64,
}

/// Sizes and seed of a verification run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItoRun {
    /// Simulation grid.
    pub grid: TimeGrid,
    /// Simulation steps per right-hand-side step.
    pub substeps: usize,
    pub n_particles: usize,
    pub n_scenarios: usize,
    pub seed: u64,
}

/// Accumulated right-hand-side pieces at the final time.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Terms {
    pub drift: f64,
    pub common_integral: f64,
    pub idio_second: f64,
    pub common_second: f64,
    pub state_drift: f64,
    pub state_noise: f64,
    pub state_second: f64,
    pub cross: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        self.drift
            + self.common_integral
            + self.idio_second
            + self.common_second
            + self.state_drift
            + self.state_noise
            + self.state_second
            + self.cross
    }
}

/// One scenario: `H_t - H_0` and the accumulated right-hand side at every
/// right-hand-side node.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub terms: Terms,
}

impl Trace {
    pub fn max_abs_gap(&self) -> f64 {
        self.lhs.iter().zip(&self.rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Scenario statistics of a verification run.
#[derive(Debug, Clone, PartialEq)]
pub struct ItoReport {
    pub times: Vec<f64>,
    pub n_particles: usize,
    /// Right-hand-side step.
    pub dt: f64,
    pub lhs_mean: Vec<f64>,
    pub rhs_mean: Vec<f64>,
    /// Scenario mean of `max_t |LHS_t - RHS_t|`.
    pub max_abs_gap: MeanSe,
    /// `LHS_T - RHS_T` over scenarios.
    pub final_gap: MeanSe,
    pub lhs_final: MeanSe,
    pub traces: Vec<Trace>,
}

impl ItoReport {
    /// Scenario mean of each right-hand-side term at the final time.
    pub fn mean_terms(&self) -> Terms {
        let n = self.traces.len() as f64;
        let mut t = Terms::default();
        for tr in &self.traces {
            let s = &tr.terms;
            t.drift += s.drift / n;
            t.common_integral += s.common_integral / n;
            t.idio_second += s.idio_second / n;
            t.common_second += s.common_second / n;
            t.state_drift += s.state_drift / n;
            t.state_noise += s.state_noise / n;
            t.state_second += s.state_second / n;
            t.cross += s.cross / n;
        }
        t
    }
}

fn check_spec(spec: &ItoProcessSpec, state: Option<&StateSpec>, run: &ItoRun) -> Result<()> {
    spec.initial.validate()?;
    if spec.common_vols.len() != spec.mode_weights.len() {
        return Err(Error::invalid("one volatility rule per common mode is required"));
    }
    if let Some(s) = state {
        if s.common_vols.len() != spec.mode_weights.len() || !s.x0.is_finite() {
            return Err(Error::invalid("state spec must match the common modes"));
        }
    }
    if run.n_particles == 0 || run.substeps == 0 || run.grid.steps() % run.substeps != 0 {
        return Err(Error::invalid("need particles and a substep count dividing the step count"));
    }
    Ok(())
}

/// Measure-flow formula: `ito_verify_joint` without a state.
pub fn ito_verify(h: &CylindricalFunctional, spec: &ItoProcessSpec, run: &ItoRun) -> Result<ItoReport> {
    ito_verify_joint(&JointFunctional::from_measure(h), spec, None, run)
}

/// Joint formula for `H(X_t, mu_t)`. Without a state spec the state is held
/// at zero and contributes nothing.
pub fn ito_verify_joint(
    h: &JointFunctional,
    spec: &ItoProcessSpec,
    state: Option<&StateSpec>,
    run: &ItoRun,
) -> Result<ItoReport> {
    check_spec(spec, state, run)?;
    let traces = (0..run.n_scenarios)
        .into_par_iter()
        .map(|s| scenario(h, spec, state, run, s as u32))
        .collect::<Result<Vec<_>>>()?;
    let nodes = run.grid.steps() / run.substeps + 1;
    let n = traces.len() as f64;
    let col_mean = |f: &dyn Fn(&Trace) -> f64| traces.iter().map(f).sum::<f64>() / n;
    let lhs_mean = (0..nodes).map(|k| col_mean(&|t| t.lhs[k])).collect();
    let rhs_mean = (0..nodes).map(|k| col_mean(&|t| t.rhs[k])).collect();
    let gaps: Vec<f64> = traces.iter().map(Trace::max_abs_gap).collect();
    let finals: Vec<f64> = traces.iter().map(|t| t.lhs[nodes - 1] - t.rhs[nodes - 1]).collect();
    let lhs_final: Vec<f64> = traces.iter().map(|t| t.lhs[nodes - 1]).collect();
    let coarse = run.grid.coarsen(run.substeps)?;
    Ok(ItoReport {
        times: coarse.times(),
        n_particles: run.n_particles,
        dt: coarse.dt(),
        lhs_mean,
        rhs_mean,
        max_abs_gap: mean_se(&gaps),
        final_gap: mean_se(&finals),
        lhs_final: mean_se(&lhs_final),
        traces,
    })
}

fn scenario(
    h: &JointFunctional,
    spec: &ItoProcessSpec,
    state: Option<&StateSpec>,
    run: &ItoRun,
    s: u32,
) -> Result<Trace> {
    let grid = run.grid;
    let n = run.n_particles;
    let nf = n as f64;
    let k_dim = h.inner.len();
    let modes = spec.mode_weights.len();
    let dt = grid.dt();
    let big_dt = dt * run.substeps as f64;
    let common = make_noise(run.seed, s, grid, 0, &spec.mode_weights)?.common;
    let mut xs = spec.initial.sample(run.seed, s, n);
    let mut streams = PathStreams::idiosyncratic(run.seed, s, n, &grid);
    let mut state_rng: ChaCha8Rng = path_rng(run.seed, s, PathKey::Aux(1));
    let sdt = dt.sqrt();
    let mut x = state.map_or(0.0, |st| st.x0);

    let evaluate = |xs: &[f64], x: f64| {
        let mut y = Vec::with_capacity(k_dim + 1);
        y.push(x);
        y.extend(h.inner.iter().map(|p| xs.iter().map(|v| p.value(*v)).sum::<f64>() / nf));
        y
    };
    let y0 = evaluate(&xs, x);
    let h0 = h.outer.value(&y0);
    let mut lhs = vec![0.0];
    let mut rhs = vec![0.0];
    let mut terms = Terms::default();
    let idio_active = !spec.idio_vol.is_zero();

    for c in 0..grid.steps() / run.substeps {
        let y = evaluate(&xs, x);
        let g = h.outer.grad(&y);
        let hs = h.outer.hess(&y);
        // Empirical expectations at the left point of the step.
        let mut e_beta = vec![0.0; k_dim];
        let mut e_idio2 = vec![0.0; k_dim];
        let mut e_c1 = vec![vec![0.0; k_dim]; modes];
        let mut e_c2 = vec![vec![0.0; k_dim]; modes];
        for &v in &xs {
            let beta = spec.drift.at(v);
            let sig = spec.idio_vol.at(v);
            for (k, p) in h.inner.iter().enumerate() {
                let (p1, p2) = (p.d1(v), p.d2(v));
                e_beta[k] += p1 * beta;
                e_idio2[k] += p2 * sig * sig;
                for j in 0..modes {
                    let s0 = spec.common_vols[j].at(v);
                    e_c1[j][k] += p1 * s0;
                    e_c2[j][k] += p2 * s0 * s0;
                }
            }
        }
        for k in 0..k_dim {
            e_beta[k] /= nf;
            e_idio2[k] /= nf;
            for j in 0..modes {
                e_c1[j][k] /= nf;
                e_c2[j][k] /= nf;
            }
        }
        let gm = &g[1..];
        let drift: f64 = (0..k_dim).map(|k| gm[k] * e_beta[k]).sum::<f64>() * big_dt;
        let idio_second: f64 = 0.5 * (0..k_dim).map(|k| gm[k] * e_idio2[k]).sum::<f64>() * big_dt;
        let mut common_second = 0.0;
        let mut loadings = vec![0.0; modes];
        for j in 0..modes {
            let mut d2 = 0.0;
            for k in 0..k_dim {
                for l in 0..k_dim {
                    d2 += hs[k + 1][l + 1] * e_c1[j][k] * e_c1[j][l];
                }
                d2 += gm[k] * e_c2[j][k];
            }
            common_second += 0.5 * spec.mode_weights[j] * d2 * big_dt;
            loadings[j] = (0..k_dim).map(|k| gm[k] * e_c1[j][k]).sum();
        }
        let (mut st_drift, mut st_second, mut cross) = (0.0, 0.0, 0.0);
        let mut st_vol = 0.0;
        let mut st_common = vec![0.0; modes];
        if let Some(st) = state {
            let b = st.drift.at(x);
            st_vol = st.idio_vol.at(x);
            st_drift = g[0] * b * big_dt;
            let mut qv = st_vol * st_vol;
            for j in 0..modes {
                st_common[j] = st.common_vols[j].at(x);
                qv += spec.mode_weights[j] * st_common[j] * st_common[j];
                let mixed: f64 = (0..k_dim).map(|k| hs[0][k + 1] * e_c1[j][k]).sum();
                cross += spec.mode_weights[j] * mixed * st_common[j] * big_dt;
            }
            st_second = 0.5 * hs[0][0] * qv * big_dt;
        }

        // Advance the cloud and the state over the substeps.
        let mut dw0 = vec![0.0; modes];
        let mut db = 0.0;
        for f in 0..run.substeps {
            let k = c * run.substeps + f;
            let inc: Vec<f64> = (0..modes).map(|j| common[j][k]).collect();
            for (i, v) in xs.iter_mut().enumerate() {
                let mut d = spec.drift.at(*v) * dt;
                if idio_active {
                    d += spec.idio_vol.at(*v) * streams.next(i);
                }
                for j in 0..modes {
                    d += spec.common_vols[j].at(*v) * inc[j];
                }
                *v += d;
            }
            if let Some(st) = state {
                let z: f64 = StandardNormal.sample(&mut state_rng);
                let dbk = sdt * z;
                let mut d = st.drift.at(x) * dt + st.idio_vol.at(x) * dbk;
                for j in 0..modes {
                    d += st.common_vols[j].at(x) * inc[j];
                }
                x += d;
                db += dbk;
            }
            for j in 0..modes {
                dw0[j] += inc[j];
            }
        }
        let common_integral: f64 = (0..modes).map(|j| loadings[j] * dw0[j]).sum();
        let st_noise = if state.is_some() {
            g[0] * (st_vol * db + (0..modes).map(|j| st_common[j] * dw0[j]).sum::<f64>())
        } else {
            0.0
        };

        terms.drift += drift;
        terms.common_integral += common_integral;
        terms.idio_second += idio_second;
        terms.common_second += common_second;
        terms.state_drift += st_drift;
        terms.state_noise += st_noise;
        terms.state_second += st_second;
        terms.cross += cross;
        lhs.push(h.outer.value(&evaluate(&xs, x)) - h0);
        rhs.push(terms.total());
    }
    Ok(Trace { lhs, rhs, terms })
}

/// Seeded generator for building random functionals in tests and demos.
pub fn functional_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
