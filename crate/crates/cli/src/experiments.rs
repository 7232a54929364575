//! One runner per experiment. Each returns its tables and the checks it
//! evaluated; nothing here touches the file system.

use master_eq::ito::{self, Coef, CylindricalFunctional, ItoProcessSpec, ItoRun, JointFunctional, StateSpec};
use master_eq::master::{self, Axis, DiscreteMeasure, MasterSpec};
use master_eq::mkv::{self, CloudOptions};
use master_eq::nplayer;
use master_eq::pareto::{self, ParetoProbe};
use master_eq::riccati::{self, RiccatiCurves};
use master_eq::{InitialLaw, LqParams, Players, TimeGrid};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::CliError;

/// CSV-ready table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: &str, header: &[&str]) -> Self {
        Table { file: file.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Outcome of one acceptance check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub experiment: String,
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(exp: Experiment, name: &str, value: f64, limit: f64) -> Self {
        Check { experiment: exp.name().into(), name: name.into(), value, limit, passed: value <= limit }
    }

    fn at_least(exp: Experiment, name: &str, value: f64, limit: f64) -> Self {
        Check { experiment: exp.name().into(), name: name.into(), value, limit, passed: value >= limit }
    }

    fn holds(exp: Experiment, name: &str, value: f64, limit: f64, passed: bool) -> Self {
        Check { experiment: exp.name().into(), name: name.into(), value, limit, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
}

fn grid(horizon: f64, steps: usize) -> Result<TimeGrid, CliError> {
    Ok(TimeGrid::on(horizon, steps)?)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn finite_players(p: &LqParams) -> Result<usize, CliError> {
    p.players.count().ok_or_else(|| CliError::Precondition("this experiment needs a finite number of players".into()))
}

fn limit(p: &LqParams) -> LqParams {
    p.with_players(Players::Limit)
}

fn master_spec(cfg: &ExperimentConfig) -> Result<MasterSpec, CliError> {
    let n = &cfg.numerics.master;
    let axis = Axis::new(n.lo, n.hi, n.points)?;
    Ok(MasterSpec { x: axis, m: axis, steps: n.steps, store_every: n.store_every })
}

fn ito_cloud(cfg: &ExperimentConfig) -> ItoProcessSpec {
    let n = &cfg.numerics.ito;
    ItoProcessSpec {
        drift: Coef::Sine { amp: 0.3, freq: 1.0, phase: 0.0, offset: -0.1 },
        idio_vol: Coef::Sine { amp: 0.3 * n.idio_vol, freq: 1.3, phase: 0.5, offset: n.idio_vol },
        common_vols: vec![Coef::Sine { amp: 0.5 * n.common_vol, freq: 0.8, phase: 0.3, offset: n.common_vol }],
        mode_weights: vec![1.0],
        initial: InitialLaw::Normal { mean: 0.3, std: 0.8 },
    }
}

fn ito_state(cfg: &ExperimentConfig) -> StateSpec {
    let n = &cfg.numerics.ito;
    StateSpec {
        drift: Coef::Sine { amp: 0.2, freq: 1.0, phase: 0.1, offset: 0.0 },
        idio_vol: Coef::Const(n.idio_vol),
        common_vols: vec![Coef::Sine { amp: 0.2, freq: 0.9, phase: 0.0, offset: 0.5 }],
        x0: 0.7,
    }
}

/// Rejects configurations that would fail part-way: every parameter used by
/// the selected experiments is checked before any simulation starts.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    for exp in cfg.experiment.expand() {
        match exp {
            Experiment::Riccati => {
                cfg.lq.params().validated()?;
                grid(cfg.lq.horizon, cfg.numerics.riccati.steps)?;
            }
            Experiment::Nplayer | Experiment::Nash => {
                let p = cfg.lq.params().validated()?;
                let n = finite_players(&p)?;
                let (steps, scen) = if exp == Experiment::Nplayer {
                    (cfg.numerics.nplayer.steps, cfg.numerics.nplayer.scenarios)
                } else {
                    (cfg.numerics.nash.steps, cfg.numerics.nash.scenarios)
                };
                let g = grid(p.horizon, steps)?;
                if scen < 2 {
                    return Err(CliError::Precondition("need at least two scenarios".into()));
                }
                let x0 = linspace(cfg.numerics.nplayer.x0_low, cfg.numerics.nplayer.x0_high, n);
                nplayer::prepare(&p, &g, &x0)?;
                if exp == Experiment::Nplayer {
                    if cfg.numerics.nplayer.player >= n {
                        return Err(CliError::Precondition("player index out of range".into()));
                    }
                    nplayer::prepare(&p, &g.coarsen(2)?, &x0)?;
                } else if !cfg.numerics.nash.lambdas.contains(&1.0) {
                    return Err(CliError::Precondition("gain multipliers must include 1".into()));
                }
            }
            Experiment::Mkv => {
                let n = &cfg.numerics.mkv;
                let p = limit(&cfg.lq.params()).validated()?;
                let law = InitialLaw::Normal { mean: n.law_mean, std: n.law_std };
                mkv::prepare(&p, &grid(p.horizon, n.steps)?, &law)?;
                if n.particles.is_empty() || n.particles.contains(&0) || n.scenarios < 2 {
                    return Err(CliError::Precondition("need particle counts and two scenarios".into()));
                }
            }
            Experiment::Master => {
                let p = limit(&cfg.lq.params()).validated()?;
                let spec = master_spec(cfg)?;
                let cfl = master::cfl_number(&p, &spec);
                if cfl > 0.5 {
                    return Err(CliError::Numerical(format!("explicit master scheme unstable: CFL number {cfl} > 0.5")));
                }
                if cfg.numerics.master.store_every == 0 {
                    return Err(CliError::Precondition("store_every must be positive".into()));
                }
            }
            Experiment::Ito => {
                let n = &cfg.numerics.ito;
                let g = grid(1.0, n.steps)?;
                if n.substeps.len() < 2 || n.particles == 0 || n.scenarios < 2 {
                    return Err(CliError::Precondition("need two substep counts, particles and scenarios".into()));
                }
                for s in &n.substeps {
                    if *s == 0 || n.steps % s != 0 {
                        return Err(CliError::Precondition(format!("substeps {s} must divide the step count")));
                    }
                }
                g.coarsen(n.substeps[0])?;
            }
            Experiment::Pareto => {
                let n = &cfg.numerics.pareto;
                let p = cfg.pareto.params().validated()?;
                grid(p.horizon, n.steps)?;
                if n.steps % 2 != 0 || n.scenarios < 2 || n.particles == 0 || n.ks_particles == 0 {
                    return Err(CliError::Precondition("pareto sizes: even steps, two scenarios, particles".into()));
                }
                if n.ks_checkpoints < 2 || n.probe_spacings.len() < 2 || n.deviations.iter().any(|d| !(*d >= 0.0)) {
                    return Err(CliError::Precondition("pareto checks need checkpoints, spacings and nonnegative deviations".into()));
                }
            }
            Experiment::All => unreachable!(),
        }
    }
    Ok(())
}

pub fn run(exp: Experiment, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match exp {
        Experiment::Riccati => run_riccati(cfg),
        Experiment::Nplayer => run_nplayer(cfg),
        Experiment::Nash => run_nash(cfg),
        Experiment::Mkv => run_mkv(cfg),
        Experiment::Master => run_master(cfg),
        Experiment::Ito => run_ito(cfg),
        Experiment::Pareto => run_pareto(cfg),
        Experiment::All => Err(CliError::Config("`all` is not a single experiment".into())),
    }
}

fn riccati_rows(table: &mut Table, curves: &RiccatiCurves) {
    let (regime, n) = match curves.players {
        Players::Limit => ("limit", "inf".to_string()),
        Players::Finite(n) => ("finite", n.to_string()),
    };
    for (k, t) in curves.grid.times().iter().enumerate() {
        table.push(vec![num(*t), num(curves.eta[k]), num(curves.chi[k]), regime.into(), n.clone()]);
    }
}

fn run_riccati(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let exp = Experiment::Riccati;
    let p = cfg.lq.params().validated()?;
    let g = grid(p.horizon, cfg.numerics.riccati.steps)?;
    let mut out = Outcome::default();
    let mut table = Table::new("riccati.csv", &["t", "eta", "chi", "regime", "N"]);
    let mut regimes = vec![limit(&p)];
    if p.players != Players::Limit {
        regimes.push(p);
    }
    for q in regimes {
        let closed = riccati::closed_curves(&q, &g)?;
        let ode = riccati::integrate_riccati(&q, &g)?;
        let (de, dc) = closed.max_gap(&ode);
        let tag = format!("{}", q.players);
        out.checks.push(Check::at_most(exp, &format!("eta_gap_N={tag}"), de, cfg.tolerances.riccati_gap));
        out.checks.push(Check::at_most(exp, &format!("chi_gap_N={tag}"), dc, cfg.tolerances.riccati_gap));
        let last = g.steps();
        let anchor = [closed.eta[last] - q.c, ode.eta[last] - q.c, closed.chi[last], ode.chi[last]]
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        out.checks.push(Check::at_most(exp, &format!("terminal_anchor_N={tag}"), anchor, 0.0));
        riccati_rows(&mut table, &closed);
    }
    out.tables.push(table);
    Ok(out)
}

fn run_nplayer(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let exp = Experiment::Nplayer;
    let n = &cfg.numerics.nplayer;
    let p = cfg.lq.params().validated()?;
    let players = finite_players(&p)?;
    let g = grid(p.horizon, n.steps)?;
    let x0 = linspace(n.x0_low, n.x0_high, players);
    let check = nplayer::cost_vs_value(&p, &g, n.scenarios, cfg.seed, &x0, n.player)?;
    let batch = nplayer::simulate_equilibrium(&p, &g, n.scenarios, cfg.seed, &x0)?;
    let mut table = Table::new("nplayer_costs.csv", &["scenario", "player", "cost"]);
    for (s, sc) in batch.scenarios.iter().enumerate() {
        for (i, c) in sc.costs.iter().enumerate() {
            table.push(vec![s.to_string(), i.to_string(), num(*c)]);
        }
    }
    let k = cfg.tolerances.mc_sigmas;
    Ok(Outcome {
        tables: vec![table],
        checks: vec![Check::at_most(exp, "cost_vs_value_gap", check.gap(), k * check.fine.se + check.bias_bound)],
    })
}

fn run_nash(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let exp = Experiment::Nash;
    let n = &cfg.numerics.nash;
    let p = cfg.lq.params().validated()?;
    let players = finite_players(&p)?;
    let g = grid(p.horizon, n.steps)?;
    let x0 = linspace(cfg.numerics.nplayer.x0_low, cfg.numerics.nplayer.x0_high, players);
    let table_data = nplayer::nash_gap(&p, &g, n.scenarios, cfg.seed, &x0, &n.lambdas)?;
    let mut table = Table::new("nash.csv", &["lambda", "mean_cost", "std_err"]);
    let k = cfg.tolerances.mc_sigmas;
    let mut checks = Vec::new();
    for r in &table_data.rows {
        table.push(vec![num(r.lambda), num(r.mean_cost), num(r.std_err)]);
        checks.push(Check::at_least(exp, &format!("excess_lambda={}", r.lambda), r.excess, -k * r.excess_se));
    }
    Ok(Outcome { tables: vec![table], checks })
}

fn run_mkv(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let exp = Experiment::Mkv;
    let n = &cfg.numerics.mkv;
    let p = limit(&cfg.lq.params()).validated()?;
    let g = grid(p.horizon, n.steps)?;
    let law = InitialLaw::Normal { mean: n.law_mean, std: n.law_std };
    let errs = mkv::moment_errors(&p, &g, cfg.seed, n.scenarios, &law, &n.particles)?;
    let mut checks = Vec::new();
    let slack = cfg.tolerances.rate_slack;
    for w in errs.windows(2) {
        let predicted = (w[1].n_particles as f64 / w[0].n_particles as f64).sqrt();
        for (what, hi, lo) in [("mean", w[0].mean_err, w[1].mean_err), ("variance", w[0].var_err, w[1].var_err)] {
            let ratio = hi / lo;
            let ok = (ratio / predicted - 1.0).abs() <= slack;
            checks.push(Check::holds(exp, &format!("{what}_error_ratio_{}_{}", w[0].n_particles, w[1].n_particles), ratio, predicted, ok));
        }
    }
    let curves = mkv::prepare(&p, &g, &law)?;
    let largest = *n.particles.iter().max().expect("validated");
    let mut table = Table::new("mkv.csv", &["scenario", "t", "cond_mean", "cond_var", "exact_mean"]);
    for s in 0..n.csv_scenarios.min(n.scenarios) {
        let cloud = mkv::run_cloud(&p, &curves, largest, cfg.seed, s as u32, &law, CloudOptions::default())?;
        let exact = cloud.exact_mean();
        for (k, t) in g.times().iter().enumerate() {
            table.push(vec![s.to_string(), num(*t), num(cloud.cond_mean[k]), num(cloud.cond_var[k]), num(exact[k])]);
        }
    }
    Ok(Outcome { tables: vec![table], checks })
}

fn run_master(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let exp = Experiment::Master;
    let n = &cfg.numerics.master;
    let p = limit(&cfg.lq.params()).validated()?;
    let spec = master_spec(cfg)?;
    let solved = master::solve_master(&p, &spec)?;
    let mut table = Table::new("master.csv", &["t", "x", "m", "V", "V_exact", "abs_err"]);
    for (s, &k) in solved.stored.iter().enumerate() {
        let t = solved.t_axis.time(k);
        for i in 0..spec.x.n {
            for j in 0..spec.m.n {
                let (x, m) = (spec.x.point(i), spec.m.point(j));
                let v = solved.slices[s][i * spec.m.n + j];
                let e = solved.exact(k, x, m);
                table.push(vec![num(t), num(x), num(m), num(v), num(e), num((v - e).abs())]);
            }
        }
    }
    let mut worst = 0.0f64;
    let field = |t: f64, x: f64, m: f64| riccati::value_v(t, x, m, &p).unwrap_or(f64::NAN);
    for id in 0..n.measures {
        let mu = DiscreteMeasure::random(cfg.seed, id, 100, 1.5, 0.5)?;
        let r = master::restriction_check(field, &mu, 0.5 * p.horizon, 1e-4).abs();
        worst = if r.is_nan() { f64::INFINITY } else { worst.max(r) };
    }
    Ok(Outcome {
        tables: vec![table],
        checks: vec![
            Check::at_most(exp, "interior_error", solved.max_interior_error(), cfg.tolerances.master_error),
            Check::at_most(exp, "restriction", worst, cfg.tolerances.restriction),
        ],
    })
}

fn run_ito(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let exp = Experiment::Ito;
    let n = &cfg.numerics.ito;
    let cloud = ito_cloud(cfg);
    let state = ito_state(cfg);
    let cases: Vec<(&str, JointFunctional, Option<&StateSpec>)> = vec![
        ("mean", JointFunctional::from_measure(&CylindricalFunctional::mean()), None),
        ("mean_squared", JointFunctional::from_measure(&CylindricalFunctional::mean_squared()), None),
        ("variance", JointFunctional::from_measure(&CylindricalFunctional::variance()), None),
        ("state_times_mean", JointFunctional::state_times_mean(), Some(&state)),
    ];
    let mut table = Table::new("ito.csv", &["functional", "substeps", "t", "lhs_mean", "rhs_mean", "max_abs_gap", "n_particles", "dt"]);
    let mut checks = Vec::new();
    for (name, h, st) in &cases {
        let mut gaps = Vec::new();
        for &sub in &n.substeps {
            let run = ItoRun { grid: grid(1.0, n.steps)?, substeps: sub, n_particles: n.particles, n_scenarios: n.scenarios, seed: cfg.seed };
            let r = ito::ito_verify_joint(h, &cloud, *st, &run)?;
            let nodes = r.times.len();
            let scen = r.traces.len() as f64;
            let mut running = vec![0.0; r.traces.len()];
            for k in 0..nodes {
                let mut gap = 0.0;
                for (s, tr) in r.traces.iter().enumerate() {
                    running[s] = f64::max(running[s], (tr.lhs[k] - tr.rhs[k]).abs());
                    gap += running[s];
                }
                table.push(vec![
                    name.to_string(),
                    sub.to_string(),
                    num(r.times[k]),
                    num(r.lhs_mean[k]),
                    num(r.rhs_mean[k]),
                    num(gap / scen),
                    r.n_particles.to_string(),
                    num(r.dt),
                ]);
            }
            gaps.push((sub, r.max_abs_gap.mean));
        }
        for w in gaps.windows(2) {
            let ratio = w[0].1 / w[1].1;
            checks.push(Check::at_least(exp, &format!("{name}_decay_{}_{}", w[0].0, w[1].0), ratio, cfg.tolerances.ito_decay));
        }
    }
    Ok(Outcome { tables: vec![table], checks })
}

fn run_pareto(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let exp = Experiment::Pareto;
    let n = &cfg.numerics.pareto;
    let p = cfg.pareto.params().validated()?;
    let eq = pareto::solve(&p)?;
    let g = grid(p.horizon, n.steps)?;
    let k = cfg.tolerances.mc_sigmas;
    let mut checks = vec![Check::at_most(exp, "root_residual", p.root_function(eq.value_coef).abs(), cfg.tolerances.root)];

    let state = &pareto::simulate_growth(&eq, g, n.ks_particles, 1, cfg.seed)?[0];
    let critical = master_eq::stats::ks_critical_1pct(n.ks_particles);
    let ks: Vec<f64> = (0..=g.steps()).map(|node| state.ks_at(node, p.tail_exp)).collect();
    for c in 0..n.ks_checkpoints {
        let node = c * g.steps() / (n.ks_checkpoints - 1);
        checks.push(Check::at_most(exp, &format!("ks_t={}", g.time(node)), ks[node], critical));
    }

    let base = pareto::martingale_checks(&eq, g, n.scenarios, n.particles, cfg.seed, eq.growth_rate)?;
    checks.push(Check::at_most(exp, "equilibrium_drift", base.drift.mean.abs(), k * base.drift.se + base.bias_bound()));
    let mut deviated = Vec::new();
    for f in &n.deviations {
        let d = pareto::martingale_checks(&eq, g, n.scenarios, n.particles, cfg.seed, f * eq.growth_rate)?;
        checks.push(Check::at_least(exp, &format!("deviation_drift_{f}"), d.drift.mean, -k * d.drift.se));
        deviated.push(d);
    }
    if p.discount > 0.0 {
        checks.push(Check::holds(exp, "discounted_tail", base.tail, 0.0, base.tail.is_finite()));
    }

    let lin = |a: f64, b: f64, m: usize| linspace(a, b, m);
    let residuals = n
        .probe_spacings
        .iter()
        .map(|&h| pareto::pareto_master_residual(&eq, &ParetoProbe { xs: lin(1.8, 2.6, 9), qs: lin(0.6, 1.2, 7), h }))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, w) in residuals.windows(2).enumerate() {
        let order = (w[0] / w[1]).ln() / (n.probe_spacings[i] / n.probe_spacings[i + 1]).ln();
        checks.push(Check::at_least(exp, &format!("residual_order_h={}", n.probe_spacings[i + 1]), order, cfg.tolerances.residual_order));
    }
    let below = ParetoProbe { xs: lin(0.3, 1.0, 8), qs: lin(1.3, 2.0, 8), h: *n.probe_spacings.last().expect("validated") };
    checks.push(Check::at_least(exp, "subsolution_margin", pareto::subsolution_margin(&eq, &below)?, -1e-8));

    let mut header = vec!["t".to_string(), "q_t".into(), "ks_stat".into(), "mart_drift".into()];
    header.extend(n.deviations.iter().map(|f| format!("submart_drift_{f}")));
    let mut table = Table { file: "pareto.csv".into(), header, rows: Vec::new() };
    for node in 0..=g.steps() {
        let mut row = vec![num(g.time(node)), num(state.endpoint[node]), num(ks[node]), num(base.path[node])];
        row.extend(deviated.iter().map(|d| num(d.path[node])));
        table.push(row);
    }
    Ok(Outcome { tables: vec![table], checks })
}
