use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmafl_cli::config::ExperimentConfig;
use pmafl_cli::experiment::{run_experiment, run_sweep, write_experiment, write_sweep, SweepAxis};
use pmafl_cli::output::{check_bounds, write_devices};
use pmafl_cli::{CliError, Policy};

#[derive(Parser)]
#[command(name = "pmafl", version, about = "Wireless federated learning with partial model aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replaces `run.seeds`; repeat for several seeds.
    #[arg(long)]
    seed: Vec<u64>,
    /// Replaces `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces `run.threads`; 1 gives bitwise-reproducible output.
    #[arg(long)]
    threads: Option<usize>,
    /// Replaces `scheduler.policy`.
    #[arg(long, value_enum)]
    policy: Option<Policy>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if !self.seed.is_empty() {
            cfg.run.seeds = self.seed.clone();
        }
        if let Some(o) = &self.out {
            cfg.run.out = o.clone();
        }
        if let Some(t) = self.threads {
            cfg.run.threads = t;
        }
        if let Some(p) = self.policy {
            cfg.scheduler.policy = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment once per seed.
    Run(Common),
    /// Run the experiment for each value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Recompute the contraction and bound columns of a metrics CSV from
    /// the `[bounds]` table of the config.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Parse and check a config, then print it with every default filled in.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the seeded device population as CSV.
    GenDevices(Common),
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run(common) => {
            let cfg = common.resolve()?;
            let runs = run_experiment(&cfg, cfg.run.threads)?;
            for r in &runs {
                for (t, why) in &r.skipped {
                    eprintln!("seed {} round {t} skipped: {why}", r.seed);
                }
            }
            write_experiment(&cfg.run.out, &cfg, cfg.run.threads, &runs)?;
            eprintln!("wrote {} run(s) to {}", runs.len(), cfg.run.out.display());
        }
        Command::Sweep { common, axis, values } => {
            let cfg = common.resolve()?;
            let results = run_sweep(&cfg, axis, &values, cfg.run.threads)?;
            write_sweep(&cfg.run.out, axis, cfg.run.threads, &results)?;
            eprintln!("wrote {}", cfg.run.out.join("sweep.csv").display());
        }
        Command::Bounds { common, metrics } => {
            let cfg = common.resolve()?;
            let b = cfg.bounds.as_ref().ok_or_else(|| CliError::Config("the bounds command needs a [bounds] table".into()))?;
            let out = common.out.unwrap_or_else(|| metrics.with_file_name("metrics_bounds.csv"));
            let n = check_bounds(&metrics, &out, &b.constants(cfg.learning.eta_u), b.initial_gap)?;
            eprintln!("wrote {n} rows to {}", out.display());
        }
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print!("{}", cfg.to_toml());
        }
        Command::GenDevices(common) => {
            let cfg = common.resolve()?;
            let out = common.out.unwrap_or_else(|| "devices.csv".into());
            let seed = cfg.run.seeds[0];
            let profiles = cfg.devices.population().generate::<f64>(seed)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            write_devices(&out, &profiles)?;
            eprintln!("wrote {} devices to {}", profiles.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
