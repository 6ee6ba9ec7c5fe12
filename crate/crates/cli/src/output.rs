//! CSV, JSON and manifest persistence.
//!
//! Floats are written as `{:.16e}` (17 significant digits) so that files
//! round-trip bitwise; absent values are empty fields.

use std::fs;
use std::path::{Path, PathBuf};

use pmafl::bounds::{contraction_factor, t_round_bound, BoundConstants, ScheduleTrace};
use pmafl::DeviceProfile;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::sim::{DeviceRow, MetricsRow, RoundStatus, RunResult};

/// Bumped whenever a column is added, removed or reordered.
pub const FORMAT_VERSION: u32 = 1;

pub const METRICS_HEADER: [&str; 15] = [
    "round",
    "status",
    "scheduled",
    "scheduled_data",
    "total_data",
    "objective",
    "weighted_energy",
    "round_energy",
    "max_queue",
    "mean_queue",
    "mean_accuracy",
    "pooled_accuracy",
    "global_loss",
    "contraction",
    "bound",
];

pub const DEVICE_ROUNDS_HEADER: [&str; 11] = [
    "round",
    "device",
    "scheduled",
    "theta",
    "t_comp",
    "t_comm",
    "power",
    "energy",
    "queue",
    "cumulative_energy",
    "accuracy",
];

pub const DEVICES_HEADER: [&str; 8] =
    ["id", "data_size", "cycles_per_sample", "f_max", "p_max", "energy_budget", "distance", "kappa"];

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

impl MetricsRow {
    pub fn record(&self) -> Vec<String> {
        let status = match self.status {
            RoundStatus::Ok => "ok",
            RoundStatus::Skipped => "skipped",
        };
        vec![
            self.round.to_string(),
            status.to_string(),
            self.scheduled.to_string(),
            self.scheduled_data.to_string(),
            self.total_data.to_string(),
            num(self.objective),
            num(self.weighted_energy),
            num(self.round_energy),
            num(self.max_queue),
            num(self.mean_queue),
            opt(self.mean_accuracy),
            opt(self.pooled_accuracy),
            opt(self.global_loss),
            opt(self.contraction),
            opt(self.bound),
        ]
    }
}

impl DeviceRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.round.to_string(),
            self.device.to_string(),
            u8::from(self.scheduled).to_string(),
            num(self.theta),
            num(self.t_comp),
            num(self.t_comm),
            num(self.power),
            num(self.energy),
            num(self.queue),
            num(self.cumulative_energy),
            opt(self.accuracy),
        ]
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes `header` then `records` to `path`.
pub fn write_csv<I>(path: &Path, header: &[&str], records: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    w.write_record(header).map_err(|e| CliError::csv(path, e))?;
    for r in records {
        w.write_record(&r).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn write_devices(path: &Path, profiles: &[DeviceProfile<f64>]) -> Result<(), CliError> {
    write_csv(
        path,
        &DEVICES_HEADER,
        profiles.iter().map(|p| {
            vec![
                p.id.to_string(),
                p.data_size.to_string(),
                num(p.cycles_per_sample),
                num(p.f_max),
                num(p.p_max),
                num(p.energy_budget),
                num(p.distance),
                num(p.kappa),
            ]
        }),
    )
}

pub fn read_devices(path: &Path) -> Result<Vec<DeviceProfile<f64>>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let p: DeviceProfile<f64> = row.map_err(|e| match e.kind() {
            csv::ErrorKind::Deserialize { .. } => CliError::Config(format!("{}: {e}", path.display())),
            _ => CliError::csv(path, e),
        })?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    package: &'static str,
    version: &'static str,
    seed: u64,
    threads: usize,
    metrics_header: &'a [&'a str],
    skipped_rounds: Vec<SkippedRound<'a>>,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct SkippedRound<'a> {
    round: usize,
    reason: &'a str,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Writes `metrics.csv`, `device_rounds.csv`, `devices.csv`,
/// `manifest.json` and, for training runs, `model.json` into `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, threads: usize, run: &RunResult) -> Result<(), CliError> {
    create_dir(dir)?;
    write_csv(&dir.join("metrics.csv"), &METRICS_HEADER, run.rows.iter().map(MetricsRow::record))?;
    write_csv(&dir.join("device_rounds.csv"), &DEVICE_ROUNDS_HEADER, run.device_rows.iter().map(DeviceRow::record))?;
    write_devices(&dir.join("devices.csv"), &run.profiles)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: run.seed,
        threads,
        metrics_header: &METRICS_HEADER,
        skipped_rounds: run.skipped.iter().map(|(round, reason)| SkippedRound { round: *round, reason }).collect(),
        config: cfg,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| CliError::io(&dir.join("config.toml"), e))?;
    if let Some(model) = &run.checkpoint {
        write_json(&dir.join("model.json"), model)?;
    }
    Ok(())
}

/// Recomputes the `contraction` and `bound` columns of a metrics CSV from
/// its `scheduled_data` and `total_data` columns. Existing bound columns
/// are replaced; other columns pass through unchanged.
pub fn check_bounds(input: &Path, output: &Path, c: &BoundConstants<f64>, initial_gap: f64) -> Result<usize, CliError> {
    let mut r = csv::Reader::from_path(input).map_err(|e| CliError::csv(input, e))?;
    let header = r.headers().map_err(|e| CliError::csv(input, e))?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Runtime(format!("{}: missing column `{name}`", input.display())))
    };
    let (si, di) = (column("scheduled_data")?, column("total_data")?);
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !matches!(&header[i], "contraction" | "bound")).collect();

    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| CliError::csv(input, e))?);
    }
    let parse = |row: &csv::StringRecord, i: usize, line: usize| -> Result<f64, CliError> {
        row[i].parse::<f64>().map_err(|e| CliError::Runtime(format!("{}: row {line}: {e}", input.display())))
    };
    let mut sched = Vec::with_capacity(rows.len());
    let mut total = None;
    for (line, row) in rows.iter().enumerate() {
        sched.push(parse(row, si, line + 2)?);
        let d = parse(row, di, line + 2)?;
        if total.is_some_and(|t| t != d) {
            return Err(CliError::Runtime(format!("{}: total_data changes at row {}", input.display(), line + 2)));
        }
        total = Some(d);
    }

    let out_header: Vec<&str> = keep.iter().map(|&i| &header[i]).chain(["contraction", "bound"]).collect();
    let records: Vec<Vec<String>> = match total {
        None => Vec::new(),
        Some(d) => {
            let bound = t_round_bound(initial_gap, &ScheduleTrace { scheduled_data: sched.clone(), total_data: d }, c)?;
            rows.iter()
                .zip(sched.iter().zip(bound))
                .map(|(row, (&s, b))| {
                    keep.iter()
                        .map(|&i| row[i].to_string())
                        .chain([num(contraction_factor(s, d, c)), num(b)])
                        .collect()
                })
                .collect()
        }
    };
    let n = records.len();
    write_csv(output, &out_header, records)?;
    Ok(n)
}
