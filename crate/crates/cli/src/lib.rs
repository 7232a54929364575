//! Configuration-driven experiment harness: runs the numerical experiments
//! of `master-eq`, writes plot-ready CSV tables and a manifest, and maps
//! failures to distinct exit codes.

pub mod config;
pub mod error;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{Experiment, ExperimentConfig};
pub use error::CliError;
pub use experiments::{Check, Outcome, Table};

/// Result of a full run, written or not.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub outcomes: Vec<(Experiment, Outcome)>,
    pub files: Vec<String>,
}

impl RunReport {
    pub fn checks(&self) -> impl Iterator<Item = &Check> {
        self.outcomes.iter().flat_map(|(_, o)| o.checks.iter())
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks().filter(|c| !c.passed).map(|c| format!("{}/{}", c.experiment, c.name)).collect()
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// SHA-256 of the effective configuration. The output location is left out
/// so that the same experiment hashes equally wherever it is written.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output.dir.clear();
    hex(&Sha256::digest(c.to_toml().as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn csv_bytes(table: &Table) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    config_sha256: String,
    seed: u64,
    experiments: Vec<&'a str>,
    tolerances: &'a config::Tolerances,
    checks: Vec<ManifestCheck<'a>>,
    files: Vec<ManifestFile>,
}

#[derive(Serialize)]
struct ManifestCheck<'a> {
    experiment: &'a str,
    name: &'a str,
    value: f64,
    limit: f64,
    passed: bool,
}

#[derive(Serialize)]
struct ManifestFile {
    name: String,
    sha256: String,
}

/// Validates, runs every selected experiment and writes CSVs plus
/// `manifest.toml` into `out_dir`. Tolerance failures are reported through
/// [`RunReport::failures`] after all outputs are written.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, CliError> {
    experiments::validate(cfg)?;
    let selected = cfg.experiment.expand();
    let mut outcomes = Vec::new();
    for exp in &selected {
        outcomes.push((*exp, experiments::run(*exp, cfg)?));
    }
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let mut manifest_files = Vec::new();
    if cfg.output.csv {
        for (_, o) in &outcomes {
            for t in &o.tables {
                let bytes = csv_bytes(t)?;
                fs::write(out_dir.join(&t.file), &bytes)?;
                manifest_files.push(ManifestFile { name: t.file.clone(), sha256: hex(&Sha256::digest(&bytes)) });
                files.push(t.file.clone());
            }
        }
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: config_hash(cfg),
        seed: cfg.seed,
        experiments: selected.iter().map(|e| e.name()).collect(),
        tolerances: &cfg.tolerances,
        checks: outcomes
            .iter()
            .flat_map(|(_, o)| o.checks.iter())
            .map(|c| ManifestCheck { experiment: &c.experiment, name: &c.name, value: c.value, limit: c.limit, passed: c.passed })
            .collect(),
        files: manifest_files,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(out_dir.join("manifest.toml"), text)?;
    files.push("manifest.toml".into());
    Ok(RunReport { out_dir: out_dir.to_path_buf(), outcomes, files })
}

/// Plain-language summary of what an experiment checks.
pub fn describe(name: &str) -> Result<&'static str, CliError> {
    let exp = Experiment::parse(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown experiment `{name}`; expected one of riccati, nplayer, nash, mkv, master, ito, pareto, all"
        ))
    })?;
    Ok(match exp {
        Experiment::Riccati => {
            "riccati: backward Riccati equation for the quadratic coefficient eta and the offset chi of the \
             value function, finite-N and limit regimes. Closed forms are checked against RK4 and the \
             terminal anchors eta_T = c, chi_T = 0. Writes riccati.csv (t, eta, chi, regime, N)."
        }
        Experiment::Nplayer => {
            "nplayer: Euler simulation of the N-player Nash equilibrium with common noise. The mean realized \
             cost of one player is compared with its explicit value function within the Monte Carlo band \
             plus a step-halving bias bound. Writes nplayer_costs.csv (scenario, player, cost)."
        }
        Experiment::Nash => {
            "nash: one player scales its equilibrium feedback gain by lambda while the others keep theirs; \
             with common random numbers, lambda = 1 must attain the minimal mean cost within the Monte \
             Carlo band. Writes nash.csv (lambda, mean_cost, std_err)."
        }
        Experiment::Mkv => {
            "mkv: conditional McKean-Vlasov particle system of the limit game. The conditional mean must \
             track m_0 + sigma rho W0_t and the conditional variance its ODE, with errors halving when the \
             particle count quadruples. Writes mkv.csv (scenario, t, cond_mean, cond_var, exact_mean)."
        }
        Experiment::Master => {
            "master: explicit finite-difference solver for the master equation on an (x, m) lattice, run \
             backward from the terminal condition V_T = c (m - x)^2 / 2, compared with the exact solution; \
             also checks that the x-derivative of the exact field integrates to zero against recentred \
             measures. Writes master.csv (t, x, m, V, V_exact, abs_err)."
        }
        Experiment::Ito => {
            "ito: Monte Carlo check of the Ito formula for simple processes along flows of empirical \
             conditional measures, for cylindrical functionals (mean, mean squared, variance) and the \
             joint state-times-mean case; the left/right gap must shrink with the step. \
             Writes ito.csv (functional, substeps, t, lhs_mean, rhs_mean, max_abs_gap, n_particles, dt)."
        }
        Experiment::Pareto => {
            "pareto: growth model with Pareto-distributed states. Solves for the value coefficient and \
             growth rate, checks that normalised states stay Pareto (KS), that the parameterized master \
             equation residual decays at fourth order, and that the cost process is a martingale at \
             equilibrium and a submartingale for deviating rates. \
             Writes pareto.csv (t, q_t, ks_stat, mart_drift, submart_drift_<factor>...)."
        }
        Experiment::All => "all: runs riccati, nplayer, nash, mkv, master, ito and pareto in that order.",
    })
}
