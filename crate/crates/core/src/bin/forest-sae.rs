use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use forest_sae::cli::{self, load_sim_config, Overrides, RunConfig};
use forest_sae::sim::SimConfig;
use forest_sae::{Error, Result};

#[derive(Parser)]
#[command(name = "forest-sae", version, about = "Bayesian small-area estimation of forest stand structure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (all cores when absent).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write its posterior samples and fit report.
    Fit(Common),
    /// Predict stand-level outcomes from a samples directory.
    Predict(Common),
    /// Compare models with spatially blocked cross-validation.
    Cv(Common),
    /// Generate a synthetic plot and unit dataset.
    Simulate(Common),
    /// Rebuild the fit report from a samples directory.
    Report(Common),
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            threads: self.threads,
            out: self.out.clone(),
        }
    }

    fn run_config(&self) -> Result<RunConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config is required".into()))?;
        RunConfig::load(path, &self.overrides())
    }
}

fn init_threads(n: Option<usize>) -> Result<()> {
    match n {
        Some(0) => Err(Error::Config("threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}"))),
        None => Ok(()),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(c) => {
            init_threads(c.threads)?;
            let (cfg, file_out) = match &c.config {
                Some(p) => load_sim_config(p, c.seed)?,
                None => {
                    let seed = c.seed.ok_or_else(|| Error::Config("simulate needs --config or --seed".into()))?;
                    (SimConfig::brixen_like(seed), None)
                }
            };
            let out = c.out.or(file_out).unwrap_or_else(|| PathBuf::from("sim"));
            let sim = cli::cmd_simulate(&cfg, &out)?;
            println!(
                "wrote {} plots and {} units to {}",
                sim.dataset.n_plots(),
                sim.dataset.units.len(),
                out.display()
            );
        }
        Command::Fit(c) => {
            let cfg = c.run_config()?;
            init_threads(cfg.threads)?;
            let (_, report) = cli::cmd_fit(&cfg)?;
            print!("{}", report.to_table());
        }
        Command::Report(c) => {
            let cfg = c.run_config()?;
            init_threads(cfg.threads)?;
            print!("{}", cli::cmd_report(&cfg)?.to_table());
        }
        Command::Predict(c) => {
            let cfg = c.run_config()?;
            init_threads(cfg.threads)?;
            let res = cli::cmd_predict(&cfg)?;
            for (stand, blocks) in &res.split {
                eprintln!(
                    "warning: stand {stand} split into {blocks} blocks; cross-block dependence is ignored"
                );
            }
            println!("predicted {} stands into {}", res.stands.len(), cfg.out.display());
        }
        Command::Cv(c) => {
            let cfg = c.run_config()?;
            init_threads(cfg.threads)?;
            let run = cli::cmd_cv(&cfg)?;
            for m in run.models.iter().filter(|m| !m.complete()) {
                let failed = m.folds.iter().filter(|f| f.error.is_some()).count();
                eprintln!("warning: {} {} has {failed} failed fold(s)", m.model.family, m.model.variant);
            }
            println!("cross-validated {} models into {}", run.models.len(), cfg.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error code={} {msg}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
