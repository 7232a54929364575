use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mfglab::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mfglab", version, about = "Numerical experiments for mean field games with common noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment(s) named in a config file.
    Run {
        /// TOML config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides MFGLAB_OUT and the config.
        #[arg(long, env = "MFGLAB_OUT")]
        out: Option<PathBuf>,
        /// Worker threads. Changes speed only, never results.
        #[arg(long)]
        threads: Option<usize>,
        /// Run this experiment instead of the configured one.
        #[arg(long)]
        experiment: Option<String>,
    },
    /// Explain what an experiment checks.
    Describe { name: String },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Describe { name } => {
            println!("{}", mfglab::describe(&name)?);
            Ok(())
        }
        Command::Run { config, seed, out, threads, experiment } => {
            let mut cfg = match &config {
                Some(path) => mfglab::load_config(path)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(name) = experiment {
                cfg.experiment = mfglab::Experiment::parse(&name)
                    .ok_or_else(|| CliError::Config(format!("unknown experiment `{name}`")))?;
            }
            let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            let work = || mfglab::run(&cfg, &out_dir);
            let report = match threads {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
                    .install(work)?,
                None => work()?,
            };
            for c in report.checks() {
                let status = if c.passed { "ok  " } else { "FAIL" };
                println!("{status} {}/{} value={:?} limit={:?}", c.experiment, c.name, c.value, c.limit);
            }
            println!("wrote {} files to {}", report.files.len(), report.out_dir.display());
            let failed = report.failures();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Tolerance(failed))
            }
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mfglab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
