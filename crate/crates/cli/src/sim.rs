//! Seeded end-to-end simulation of one experiment.

use std::fs::File;
use std::io::BufReader;

use pmafl::bounds::{contraction_factor, t_round_bound, ScheduleTrace};
use pmafl::learning::{
    aggregate, evaluate, idx_samples, local_update, partition_non_iid, personalized_test_shards, Dense, DeviceLearner,
    Evaluation, LocalUpdate, Samples, SplitModel,
};
use pmafl::rng::{stream, StreamDomain};
use pmafl::scheduler::{all_feasible_round, random_expansion_round, schedule_round, RoundDecision};
use pmafl::sysmodel::validate_profiles;
use pmafl::{Allocation, ChannelRealization, DeviceProfile, SystemConfig, VirtualQueueState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, Policy};
use crate::error::CliError;
use crate::output::read_devices;

/// Per-device model state of a training run.
pub struct Training {
    pub extractor: Vec<Dense<f64>>,
    pub learners: Vec<DeviceLearner<f64>>,
    pub test: Vec<Samples<f64>>,
    pub split_depth: usize,
}

/// Everything a run needs before its first round.
pub struct Workload {
    pub profiles: Vec<DeviceProfile<f64>>,
    pub system: SystemConfig<f64>,
    pub training: Option<Training>,
}

/// Final model: the shared extractor and every device's predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub split_depth: usize,
    pub extractor: Vec<Dense<f64>>,
    pub predictors: Vec<Vec<Dense<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundStatus {
    Ok,
    /// The scheduler failed; nothing was trained and every device was
    /// treated as unscheduled.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub status: RoundStatus,
    pub scheduled: usize,
    pub scheduled_data: usize,
    pub total_data: usize,
    pub objective: f64,
    pub weighted_energy: f64,
    pub round_energy: f64,
    pub max_queue: f64,
    pub mean_queue: f64,
    pub mean_accuracy: Option<f64>,
    pub pooled_accuracy: Option<f64>,
    pub global_loss: Option<f64>,
    pub contraction: Option<f64>,
    pub bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceRow {
    pub round: usize,
    pub device: usize,
    pub scheduled: bool,
    pub theta: f64,
    pub t_comp: f64,
    pub t_comm: f64,
    pub power: f64,
    pub energy: f64,
    pub queue: f64,
    pub cumulative_energy: f64,
    pub accuracy: Option<f64>,
}

pub struct RunResult {
    pub seed: u64,
    pub profiles: Vec<DeviceProfile<f64>>,
    pub rows: Vec<MetricsRow>,
    pub device_rows: Vec<DeviceRow>,
    pub checkpoint: Option<Checkpoint>,
    /// `(round, reason)` for every skipped round.
    pub skipped: Vec<(usize, String)>,
    pub queues: VirtualQueueState<f64>,
}

fn input_shape(cfg: &ExperimentConfig) -> (usize, usize) {
    match cfg.data.source {
        DataSource::Synthetic => (cfg.data.synthetic.dim, cfg.data.synthetic.classes),
        DataSource::Mnist => (784, 10),
    }
}

/// Extractor parameters times bits per parameter, unless overridden.
pub fn model_bits(cfg: &ExperimentConfig) -> Result<f64, CliError> {
    if let Some(q) = cfg.system.model_bits {
        return Ok(q);
    }
    let (input, classes) = input_shape(cfg);
    let sizes = cfg.learning.layer_sizes(input, classes);
    let params: usize = sizes.windows(2).take(cfg.learning.split_depth).map(|w| w[0] * w[1] + w[1]).sum();
    if params == 0 {
        return Err(CliError::Config("learning.split_depth = 0 uploads nothing; set system.model_bits".into()));
    }
    Ok((params * cfg.system.bits_per_param) as f64)
}

fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Samples<f64>, Samples<f64>, usize), CliError> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let s = &cfg.data.synthetic;
            let mix = s.mixture();
            let means = mix.means(&mut stream(seed, StreamDomain::Data, 0, 0));
            let train = mix.sample(&means, s.train_per_class, &mut stream(seed, StreamDomain::Data, 1, 0));
            let test = mix.sample(&means, s.test_per_class, &mut stream(seed, StreamDomain::Data, 2, 0));
            Ok((train, test, s.classes))
        }
        DataSource::Mnist => {
            let m = &cfg.data.mnist;
            let open = |p: &std::path::Path| File::open(p).map(BufReader::new).map_err(|e| CliError::io(p, e));
            let train = idx_samples(open(&m.train_images)?, open(&m.train_labels)?)?;
            let test = idx_samples(open(&m.test_images)?, open(&m.test_labels)?)?;
            Ok((train, test, 10))
        }
    }
}

/// Device population, physical constants and (when training) data and
/// initial models for one seed.
pub fn build_workload(cfg: &ExperimentConfig, seed: u64) -> Result<Workload, CliError> {
    let mut profiles: Vec<DeviceProfile<f64>> = match &cfg.devices.file {
        Some(path) => read_devices(path)?,
        None => cfg.devices.population().generate(seed)?,
    };
    if profiles.iter().enumerate().any(|(i, p)| p.id != i) {
        return Err(CliError::Config("device ids must be 0..count in order".into()));
    }
    validate_profiles(&profiles)?;
    let system = cfg.system_config(model_bits(cfg)?);
    system.validate()?;

    if !cfg.learning.enabled {
        return Ok(Workload { profiles, system, training: None });
    }
    let (train, test, classes) = load_data(cfg, seed)?;
    let shards = partition_non_iid(
        &train,
        classes,
        profiles.len(),
        cfg.data.shards_per_device,
        &mut stream(seed, StreamDomain::Data, 3, 0),
    )?;
    let test = personalized_test_shards(&test, &shards, cfg.data.test_ratio, &mut stream(seed, StreamDomain::Data, 4, 0))?;
    let sizes = cfg.learning.layer_sizes(train.dim, classes);
    let model = SplitModel::<f64>::new(&sizes, cfg.learning.split_depth, &mut stream(seed, StreamDomain::Init, 0, 0))?;
    let mut learners = Vec::with_capacity(profiles.len());
    for (p, shard) in profiles.iter_mut().zip(shards.devices) {
        if shard.is_empty() {
            return Err(CliError::Config(format!("device {} received no training data", p.id)));
        }
        p.data_size = shard.len();
        learners.push(DeviceLearner::new(p.id, model.predictor().to_vec(), shard, cfg.learning.train_config())?);
    }
    Ok(Workload {
        profiles,
        system,
        training: Some(Training {
            extractor: model.extractor().to_vec(),
            learners,
            test,
            split_depth: cfg.learning.split_depth,
        }),
    })
}

fn decide(
    cfg: &ExperimentConfig,
    policy: Policy,
    state: &VirtualQueueState<f64>,
    gains: &ChannelRealization<f64>,
    w: &Workload,
    seed: u64,
) -> pmafl::Result<RoundDecision<f64>> {
    let (v, sys, profiles, opts) = (cfg.scheduler.v, &w.system, &w.profiles[..], cfg.solver_options());
    match policy {
        Policy::Lyapunov => schedule_round(state, gains, v, sys, profiles, &opts).map(|o| o.decision),
        Policy::RandomExpansion => {
            let mut rng = stream(seed, StreamDomain::Scheduling, state.round as u64, 0);
            random_expansion_round(state, gains, v, sys, profiles, &mut rng, &opts)
        }
        Policy::AllFeasible => all_feasible_round(state, gains, v, sys, profiles, &opts),
    }
}

fn train_round(
    training: &mut Training,
    selected: &[usize],
    seed: u64,
    round: usize,
    parallel: bool,
) -> Result<(), CliError> {
    let u = &training.extractor;
    let mut picked: Vec<&mut DeviceLearner<f64>> =
        training.learners.iter_mut().filter(|l| selected.binary_search(&l.id).is_ok()).collect();
    let step = |l: &mut DeviceLearner<f64>| {
        let mut rng = stream(seed, StreamDomain::Batch, round as u64, l.id as u64);
        local_update(u, l, &mut rng)
    };
    let updates: pmafl::Result<Vec<LocalUpdate<f64>>> = if parallel {
        picked.par_iter_mut().map(|l| step(l)).collect()
    } else {
        picked.iter_mut().map(|l| step(l)).collect()
    };
    if let Some(next) = aggregate(&updates?)? {
        training.extractor = next;
    }
    Ok(())
}

/// Runs `cfg.run.rounds` rounds for one seed. With `parallel`, local
/// updates of a round run on the current rayon pool; results are reduced in
/// device order either way.
pub fn simulate(cfg: &ExperimentConfig, seed: u64, parallel: bool) -> Result<RunResult, CliError> {
    let mut w = build_workload(cfg, seed)?;
    let policy = cfg.scheduler.policy;
    let k = w.profiles.len();
    let total_data: usize = w.profiles.iter().map(|p| p.data_size).sum();
    let mut state = VirtualQueueState::new(&w.profiles, &w.system);
    let mut rows = Vec::with_capacity(cfg.run.rounds);
    let mut device_rows = Vec::with_capacity(cfg.run.rounds * k);
    let mut skipped = Vec::new();

    for t in 0..cfg.run.rounds {
        let gains = ChannelRealization::sample(&w.profiles, &w.system, seed, t);
        let (status, decision) = match decide(cfg, policy, &state, &gains, &w, seed) {
            Ok(d) => (RoundStatus::Ok, d),
            Err(e) => {
                skipped.push((t, e.to_string()));
                (RoundStatus::Skipped, RoundDecision { selected: Vec::new(), allocation: Allocation::empty() })
            }
        };
        let mut selected = decision.selected.clone();
        selected.sort_unstable();

        if let Some(training) = w.training.as_mut() {
            if !selected.is_empty() {
                train_round(training, &selected, seed, t, parallel)?;
            }
        }
        state.apply(&decision.allocation);

        let last = t + 1 == cfg.run.rounds;
        let eval: Option<Evaluation<f64>> = match &w.training {
            Some(tr) if last || (t + 1) % cfg.learning.eval_every == 0 => Some(evaluate(&tr.extractor, &tr.learners, &tr.test)?),
            _ => None,
        };

        let alloc = &decision.allocation;
        for id in 0..k {
            let d = alloc.get(id);
            device_rows.push(DeviceRow {
                round: t,
                device: id,
                scheduled: d.is_some(),
                theta: d.map_or(0.0, |d| d.theta),
                t_comp: d.map_or(0.0, |d| d.t_comp),
                t_comm: d.map_or(0.0, |d| d.t_comm),
                power: d.map_or(0.0, |d| d.power),
                energy: d.map_or(0.0, |d| d.energy),
                queue: state.queues[id],
                cumulative_energy: state.cumulative_energy[id],
                accuracy: eval.as_ref().map(|e| e.per_device_accuracy[id]),
            });
        }
        rows.push(MetricsRow {
            round: t,
            status,
            scheduled: selected.len(),
            scheduled_data: selected.iter().map(|&i| w.profiles[i].data_size).sum(),
            total_data,
            objective: alloc.objective,
            weighted_energy: alloc.weighted_energy,
            round_energy: alloc.devices.iter().map(|d| d.energy).sum(),
            max_queue: state.max_queue(),
            mean_queue: state.mean_queue(),
            mean_accuracy: eval.as_ref().map(|e| e.mean_accuracy),
            pooled_accuracy: eval.as_ref().map(|e| e.pooled_accuracy),
            global_loss: eval.as_ref().map(|e| e.global_loss),
            contraction: None,
            bound: None,
        });
    }

    if let Some(b) = &cfg.bounds {
        fill_bounds(&mut rows, &b.constants(cfg.learning.eta_u), b.initial_gap)?;
    }

    let checkpoint = w.training.map(|tr| Checkpoint {
        split_depth: tr.split_depth,
        extractor: tr.extractor,
        predictors: tr.learners.into_iter().map(|l| l.predictor).collect(),
    });
    Ok(RunResult { seed, profiles: w.profiles, rows, device_rows, checkpoint, skipped, queues: state })
}

/// Sets the contraction factor and cumulative gap bound of every row.
pub fn fill_bounds(rows: &mut [MetricsRow], c: &pmafl::BoundConstants<f64>, initial_gap: f64) -> Result<(), CliError> {
    let Some(first) = rows.first() else {
        return Ok(());
    };
    let total = first.total_data as f64;
    let trace = ScheduleTrace { scheduled_data: rows.iter().map(|r| r.scheduled_data as f64).collect(), total_data: total };
    let bound = t_round_bound(initial_gap, &trace, c)?;
    for (r, b) in rows.iter_mut().zip(bound) {
        r.contraction = Some(contraction_factor(r.scheduled_data as f64, total, c));
        r.bound = Some(b);
    }
    Ok(())
}
