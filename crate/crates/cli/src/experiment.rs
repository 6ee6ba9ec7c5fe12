//! Multi-seed runs and parameter sweeps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{num, seed_dir, write_csv, write_run, METRICS_HEADER};
use crate::sim::{simulate, RunResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    V,
    SplitDepth,
    EnergyBudget,
    TMax,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::V => "v",
            SweepAxis::SplitDepth => "split_depth",
            SweepAxis::EnergyBudget => "energy_budget",
            SweepAxis::TMax => "t_max",
        }
    }

    /// Copy of `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, CliError> {
        let mut c = cfg.clone();
        match self {
            SweepAxis::V => c.scheduler.v = value,
            SweepAxis::SplitDepth => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(CliError::Config(format!("split_depth value {value} is not a layer count")));
                }
                c.learning.split_depth = value as usize;
            }
            SweepAxis::EnergyBudget => {
                if c.devices.file.is_some() {
                    return Err(CliError::Config("energy_budget sweeps need generated devices, not devices.file".into()));
                }
                c.devices.energy_budget = value;
            }
            SweepAxis::TMax => c.system.t_max = value,
        }
        c.validate()?;
        Ok(c)
    }
}

fn with_pool<R: Send>(threads: usize, job: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    if threads <= 1 {
        return Ok(job());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(job))
}

/// One run per configured seed, in seed order.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<RunResult>, CliError> {
    with_pool(threads, || cfg.run.seeds.iter().map(|&s| simulate(cfg, s, threads > 1)).collect())?
}

/// Runs every seed for every axis value, in value-major order.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    threads: usize,
) -> Result<Vec<(f64, ExperimentConfig, Vec<RunResult>)>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| {
            let c = axis.apply(cfg, v)?;
            let runs = run_experiment(&c, threads)?;
            Ok((v, c, runs))
        })
        .collect()
}

/// `<out>/seed-<s>/…` for every seed.
pub fn write_experiment(out: &Path, cfg: &ExperimentConfig, threads: usize, runs: &[RunResult]) -> Result<(), CliError> {
    for r in runs {
        write_run(&seed_dir(out, r.seed), cfg, threads, r)?;
    }
    Ok(())
}

/// `<out>/sweep.csv` keyed by `(axis, value, seed, round)`, plus every
/// sub-run under `<out>/<axis>-<value>/seed-<s>/`.
pub fn write_sweep(
    out: &Path,
    axis: SweepAxis,
    threads: usize,
    results: &[(f64, ExperimentConfig, Vec<RunResult>)],
) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let header: Vec<&str> = ["axis", "value", "seed"].into_iter().chain(METRICS_HEADER).collect();
    let records = results.iter().flat_map(|(v, _, runs)| {
        runs.iter().flat_map(move |r| {
            r.rows.iter().map(move |row| {
                [axis.name().to_string(), num(*v), r.seed.to_string()].into_iter().chain(row.record()).collect()
            })
        })
    });
    write_csv(&out.join("sweep.csv"), &header, records)?;
    for (v, c, runs) in results {
        write_experiment(&out.join(format!("{}-{v}", axis.name())), c, threads, runs)?;
    }
    Ok(())
}
