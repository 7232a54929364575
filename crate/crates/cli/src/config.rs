//! Experiment configuration, read from TOML.
//!
//! Every section and key is optional; missing values take the defaults
//! below. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use master_eq::pareto::ParetoParams;
use master_eq::{LqParams, Players};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Riccati,
    Nplayer,
    Mkv,
    Master,
    Ito,
    Pareto,
    Nash,
    All,
}

impl Experiment {
    pub const EACH: [Experiment; 7] = [
        Experiment::Riccati,
        Experiment::Nplayer,
        Experiment::Nash,
        Experiment::Mkv,
        Experiment::Master,
        Experiment::Ito,
        Experiment::Pareto,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Riccati => "riccati",
            Experiment::Nplayer => "nplayer",
            Experiment::Mkv => "mkv",
            Experiment::Master => "master",
            Experiment::Ito => "ito",
            Experiment::Pareto => "pareto",
            Experiment::Nash => "nash",
            Experiment::All => "all",
        }
    }

    pub fn parse(name: &str) -> Option<Experiment> {
        Experiment::EACH.into_iter().chain([Experiment::All]).find(|e| e.name() == name)
    }

    /// The concrete experiments this selection runs, in a fixed order.
    pub fn expand(self) -> Vec<Experiment> {
        match self {
            Experiment::All => Experiment::EACH.to_vec(),
            e => vec![e],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub lq: LqSection,
    pub pareto: ParetoSection,
    pub numerics: Numerics,
    pub tolerances: Tolerances,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::Riccati,
            seed: 2024,
            lq: LqSection::default(),
            pareto: ParetoSection::default(),
            numerics: Numerics::default(),
            tolerances: Tolerances::default(),
            output: OutputSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Interbank model. `players = 0` selects the limit regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqSection {
    pub a: f64,
    pub q: f64,
    pub eps: f64,
    pub c: f64,
    pub sigma: f64,
    pub rho: f64,
    pub horizon: f64,
    pub players: u32,
}

impl Default for LqSection {
    fn default() -> Self {
        LqSection { a: 0.1, q: 0.2, eps: 0.5, c: 0.3, sigma: 1.0, rho: 0.5, horizon: 1.0, players: 10 }
    }
}

impl LqSection {
    pub fn params(&self) -> LqParams {
        LqParams {
            a: self.a,
            q: self.q,
            eps: self.eps,
            c: self.c,
            sigma: self.sigma,
            rho: self.rho,
            horizon: self.horizon,
            players: if self.players == 0 { Players::Limit } else { Players::Finite(self.players) },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoSection {
    pub tail_exp: f64,
    pub production_exp: f64,
    pub density_exp: f64,
    pub production_weight: f64,
    pub effort_weight: f64,
    pub effort_exp: f64,
    pub sigma: f64,
    pub discount: f64,
    pub horizon: f64,
}

impl Default for ParetoSection {
    fn default() -> Self {
        ParetoSection {
            tail_exp: 20.0,
            production_exp: 1.35,
            density_exp: 0.15,
            production_weight: 1.0,
            effort_weight: 1.0,
            effort_exp: 1.5,
            sigma: 0.3,
            discount: 0.0,
            horizon: 1.0,
        }
    }
}

impl ParetoSection {
    pub fn params(&self) -> ParetoParams {
        ParetoParams {
            tail_exp: self.tail_exp,
            production_exp: self.production_exp,
            density_exp: self.density_exp,
            production_weight: self.production_weight,
            effort_weight: self.effort_weight,
            effort_exp: self.effort_exp,
            sigma: self.sigma,
            discount: self.discount,
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub riccati: RiccatiNumerics,
    pub nplayer: NplayerNumerics,
    pub nash: NashNumerics,
    pub mkv: MkvNumerics,
    pub master: MasterNumerics,
    pub ito: ItoNumerics,
    pub pareto: ParetoNumerics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiccatiNumerics {
    pub steps: usize,
}

impl Default for RiccatiNumerics {
    fn default() -> Self {
        RiccatiNumerics { steps: 1000 }
    }
}

/// Initial states are spread evenly on `[x0_low, x0_high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NplayerNumerics {
    pub steps: usize,
    pub scenarios: usize,
    pub x0_low: f64,
    pub x0_high: f64,
    /// Index of the player whose cost is compared with its value.
    pub player: usize,
}

impl Default for NplayerNumerics {
    fn default() -> Self {
        NplayerNumerics { steps: 200, scenarios: 2000, x0_low: -1.0, x0_high: 1.0, player: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NashNumerics {
    pub steps: usize,
    pub scenarios: usize,
    pub lambdas: Vec<f64>,
}

impl Default for NashNumerics {
    fn default() -> Self {
        NashNumerics { steps: 200, scenarios: 2000, lambdas: vec![0.5, 0.75, 1.0, 1.25, 1.5] }
    }
}

/// Particle counts should grow by a factor four from one entry to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MkvNumerics {
    pub steps: usize,
    pub particles: Vec<usize>,
    pub scenarios: usize,
    pub law_mean: f64,
    pub law_std: f64,
    /// Scenarios written to the CSV, at the largest particle count.
    pub csv_scenarios: usize,
}

impl Default for MkvNumerics {
    fn default() -> Self {
        MkvNumerics { steps: 200, particles: vec![1000, 4000], scenarios: 40, law_mean: 0.5, law_std: 1.0, csv_scenarios: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MasterNumerics {
    /// Lattice points per axis; both axes span `[lo, hi]`.
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
    pub store_every: usize,
    /// Random measures for the restriction check.
    pub measures: u32,
}

impl Default for MasterNumerics {
    fn default() -> Self {
        MasterNumerics { points: 31, lo: -3.0, hi: 3.0, steps: 100, store_every: 25, measures: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ItoNumerics {
    pub steps: usize,
    /// Simulation steps per right-hand-side step, one run per entry.
    pub substeps: Vec<usize>,
    pub particles: usize,
    pub scenarios: usize,
    pub idio_vol: f64,
    pub common_vol: f64,
}

impl Default for ItoNumerics {
    fn default() -> Self {
        ItoNumerics { steps: 256, substeps: vec![16, 4, 1], particles: 500, scenarios: 20, idio_vol: 0.02, common_vol: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoNumerics {
    pub steps: usize,
    pub scenarios: usize,
    pub particles: usize,
    pub ks_particles: usize,
    pub ks_checkpoints: usize,
    /// Deviating rates as multiples of the equilibrium rate.
    pub deviations: Vec<f64>,
    pub probe_spacings: Vec<f64>,
}

impl Default for ParetoNumerics {
    fn default() -> Self {
        ParetoNumerics {
            steps: 100,
            scenarios: 400,
            particles: 200,
            ks_particles: 10_000,
            ks_checkpoints: 5,
            deviations: vec![0.5, 1.5],
            probe_spacings: vec![0.1, 0.05, 0.025],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub riccati_gap: f64,
    pub root: f64,
    pub restriction: f64,
    pub master_error: f64,
    /// Allowed relative deviation of an error ratio from its predicted value.
    pub rate_slack: f64,
    /// Minimum factor by which an Ito gap must shrink per refinement.
    pub ito_decay: f64,
    /// Minimum observed order of the growth-model residual.
    pub residual_order: f64,
    /// Width of Monte Carlo acceptance bands in standard errors.
    pub mc_sigmas: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            riccati_gap: 1e-5,
            root: 1e-12,
            restriction: 1e-8,
            master_error: 5e-3,
            rate_slack: 0.3,
            ito_decay: 1.3,
            residual_order: 3.5,
            mc_sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub csv: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into(), csv: true }
    }
}
