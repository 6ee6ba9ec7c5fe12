//! Experiment configuration: a TOML file with one table per concern.
//!
//! Every key is optional; missing keys take the defaults listed on each
//! field. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use pmafl::bounds::BoundConstants;
use pmafl::learning::{GaussianMixture, TrainConfig};
use pmafl::sysmodel::{db_to_linear, dbm_per_hz_to_watts};
use pmafl::{PopulationSpec, SolverOptions, SystemConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub devices: DevicesSection,
    pub learning: LearningSection,
    pub scheduler: SchedulerSection,
    pub data: DataSection,
    pub run: RunSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    /// Total uplink bandwidth, Hz. Default 10 MHz.
    pub bandwidth_hz: f64,
    /// Noise power spectral density, dBm/Hz. Default −174.
    pub noise_psd_dbm_hz: f64,
    /// Round deadline, s. Default 2.
    pub t_max: f64,
    /// Path loss at the reference distance, dB. Default −30.
    pub path_loss_db: f64,
    /// Path-loss exponent. Default 2.
    pub path_loss_exp: f64,
    /// Reference distance, m. Default 1.
    pub ref_distance: f64,
    /// Bits per uploaded parameter. Default 16.
    pub bits_per_param: usize,
    /// Uplink payload in bits; when absent, extractor parameters times
    /// `bits_per_param`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_bits: Option<f64>,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            bandwidth_hz: 10e6,
            noise_psd_dbm_hz: -174.0,
            t_max: 2.0,
            path_loss_db: -30.0,
            path_loss_exp: 2.0,
            ref_distance: 1.0,
            bits_per_param: 16,
            model_bits: None,
        }
    }
}

/// Generated population (the default) or a CSV written by `gen-devices`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DevicesSection {
    /// Device CSV; overrides every generator key below.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Default 100.
    pub count: usize,
    /// Square cell side, m. Default 500.
    pub cell_side: f64,
    /// Default 1 m.
    pub min_distance: f64,
    /// Local sample count range when training is off. Default 600..=600.
    pub data_min: usize,
    pub data_max: usize,
    /// Default 550346.
    pub cycles_per_sample: f64,
    /// Default 1 GHz.
    pub f_max: f64,
    /// Default 1 W.
    pub p_max: f64,
    /// Default 5e-27.
    pub kappa: f64,
    /// Energy budget over the whole run, J. Default 0.1.
    pub energy_budget: f64,
}

impl Default for DevicesSection {
    fn default() -> Self {
        let p = PopulationSpec::default();
        Self {
            file: None,
            count: p.count,
            cell_side: p.cell_side,
            min_distance: p.min_distance,
            data_min: p.data_min,
            data_max: p.data_max,
            cycles_per_sample: p.cycles_per_sample,
            f_max: p.f_max,
            p_max: p.p_max,
            kappa: p.kappa,
            energy_budget: p.energy_budget,
        }
    }
}

impl DevicesSection {
    pub fn population(&self) -> PopulationSpec {
        PopulationSpec {
            count: self.count,
            cell_side: self.cell_side,
            min_distance: self.min_distance,
            data_min: self.data_min,
            data_max: self.data_max,
            cycles_per_sample: self.cycles_per_sample,
            f_max: self.f_max,
            p_max: self.p_max,
            kappa: self.kappa,
            energy_budget: self.energy_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningSection {
    /// When false, rounds only schedule and allocate; no model is trained.
    pub enabled: bool,
    /// Hidden layer widths; input and output widths come from the data.
    /// Default [512, 256, 64].
    pub hidden: Vec<usize>,
    /// Number of leading layers that are aggregated. Default 2.
    pub split_depth: usize,
    /// Default 0.05.
    pub eta_u: f64,
    /// Default 0.05.
    pub eta_v: f64,
    /// Default 0.9.
    pub momentum: f64,
    /// Local SGD steps per round, also the local iteration count of the
    /// energy model. Default 5.
    pub tau: usize,
    /// Default 32.
    pub batch: usize,
    /// Evaluate every this many rounds; the last round is always evaluated.
    pub eval_every: usize,
}

impl Default for LearningSection {
    fn default() -> Self {
        let t = TrainConfig::<f64>::default();
        Self {
            enabled: true,
            hidden: vec![512, 256, 64],
            split_depth: 2,
            eta_u: t.eta_u,
            eta_v: t.eta_v,
            momentum: t.momentum,
            tau: t.tau,
            batch: t.batch,
            eval_every: 1,
        }
    }
}

impl LearningSection {
    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig { eta_u: self.eta_u, eta_v: self.eta_v, momentum: self.momentum, tau: self.tau, batch: self.batch }
    }

    pub fn layer_sizes(&self, input: usize, classes: usize) -> Vec<usize> {
        std::iter::once(input).chain(self.hidden.iter().copied()).chain(std::iter::once(classes)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Drift-plus-penalty set expansion.
    Lyapunov,
    /// Random device order, stop at the first bandwidth overflow.
    RandomExpansion,
    /// Every feasible device that fits in the band; ignores energy.
    AllFeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSection {
    /// Default `lyapunov`.
    pub policy: Policy,
    /// Weight on scheduled data. Default 0.01.
    pub v: f64,
    /// Stop tolerance of the alternating allocation. Default 1e-8.
    pub outer_tol: f64,
    /// Default 100.
    pub outer_iters: usize,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        let o = SolverOptions::<f64>::default();
        Self { policy: Policy::Lyapunov, v: 0.01, outer_tol: o.outer_tol, outer_iters: o.outer_iters }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Mnist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Default `synthetic`.
    pub source: DataSource,
    /// Label shards per device. Default 2.
    pub shards_per_device: usize,
    /// Test samples drawn per training sample of each held class. Default 0.2.
    pub test_ratio: f64,
    pub synthetic: SyntheticSection,
    pub mnist: MnistSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            shards_per_device: 2,
            test_ratio: 0.2,
            synthetic: SyntheticSection::default(),
            mnist: MnistSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub classes: usize,
    pub dim: usize,
    pub informative: usize,
    pub separation: f64,
    pub noise_std: f64,
    /// Mixture components per class. Default 1.
    pub modes: usize,
    /// Within-component spread on the informative coordinates. Default 1.
    pub cluster_std: f64,
    /// Training samples per class. Default 600.
    pub train_per_class: usize,
    /// Pooled test samples per class. Default 200.
    pub test_per_class: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let g = GaussianMixture::default();
        Self {
            classes: g.classes,
            dim: g.dim,
            informative: g.informative,
            separation: g.separation,
            noise_std: g.noise_std,
            modes: g.modes,
            cluster_std: g.cluster_std,
            train_per_class: 600,
            test_per_class: 200,
        }
    }
}

impl SyntheticSection {
    pub fn mixture(&self) -> GaussianMixture {
        GaussianMixture {
            classes: self.classes,
            dim: self.dim,
            informative: self.informative,
            separation: self.separation,
            noise_std: self.noise_std,
            modes: self.modes,
            cluster_std: self.cluster_std,
        }
    }
}

/// Paths to the four IDX files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnistSection {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl Default for MnistSection {
    fn default() -> Self {
        Self {
            train_images: "mnist/train-images-idx3-ubyte".into(),
            train_labels: "mnist/train-labels-idx1-ubyte".into(),
            test_images: "mnist/t10k-images-idx3-ubyte".into(),
            test_labels: "mnist/t10k-labels-idx1-ubyte".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Default [0].
    pub seeds: Vec<u64>,
    /// Default 40.
    pub rounds: usize,
    /// Default `runs`.
    pub out: PathBuf,
    /// 1 runs everything on the calling thread. Default 1.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seeds: vec![0], rounds: 40, out: "runs".into(), threads: 1 }
    }
}

/// Constants for the per-round contraction factor and gap bound columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub l_u: f64,
    pub l_v: f64,
    #[serde(default)]
    pub chi: f64,
    pub delta: f64,
    pub rho: f64,
    /// `F(w_0) − F*`.
    pub initial_gap: f64,
}

impl BoundsSection {
    pub fn constants(&self, eta_u: f64) -> BoundConstants<f64> {
        BoundConstants { l_u: self.l_u, l_v: self.l_v, chi: self.chi, delta: self.delta, rho: self.rho, eta_u }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, why: String| Err(CliError::Config(format!("{key}: {why}")));
        let s = &self.system;
        for (key, v) in [
            ("system.bandwidth_hz", s.bandwidth_hz),
            ("system.t_max", s.t_max),
            ("system.path_loss_exp", s.path_loss_exp),
            ("system.ref_distance", s.ref_distance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, format!("must be finite and positive, got {v}"));
            }
        }
        if !s.noise_psd_dbm_hz.is_finite() || !s.path_loss_db.is_finite() {
            return bad("system", "dB values must be finite".into());
        }
        if let Some(q) = s.model_bits {
            if !(q > 0.0 && q.is_finite()) {
                return bad("system.model_bits", format!("must be finite and positive, got {q}"));
            }
        }
        if s.bits_per_param == 0 {
            return bad("system.bits_per_param", "must be positive".into());
        }
        if self.devices.file.is_none() {
            self.devices.population().validate().map_err(|e| CliError::Config(e.to_string()))?;
        }

        let l = &self.learning;
        l.train_config().validate().map_err(|e| CliError::Config(format!("learning: {e}")))?;
        if l.tau == 0 {
            return bad("learning.tau", "must be positive".into());
        }
        if l.hidden.contains(&0) {
            return bad("learning.hidden", "layer widths must be positive".into());
        }
        if l.split_depth > l.hidden.len() + 1 {
            return bad("learning.split_depth", format!("{} exceeds the {} layers", l.split_depth, l.hidden.len() + 1));
        }
        if l.eval_every == 0 {
            return bad("learning.eval_every", "must be positive".into());
        }

        let sc = &self.scheduler;
        if !(sc.v >= 0.0 && sc.v.is_finite()) {
            return bad("scheduler.v", format!("must be finite and non-negative, got {}", sc.v));
        }
        if !(sc.outer_tol > 0.0) || sc.outer_iters == 0 {
            return bad("scheduler", "outer_tol and outer_iters must be positive".into());
        }

        let d = &self.data;
        if d.shards_per_device == 0 {
            return bad("data.shards_per_device", "must be positive".into());
        }
        if !(d.test_ratio > 0.0 && d.test_ratio.is_finite()) {
            return bad("data.test_ratio", format!("must be positive, got {}", d.test_ratio));
        }
        if d.source == DataSource::Synthetic {
            d.synthetic.mixture().validate().map_err(|e| CliError::Config(format!("data.synthetic: {e}")))?;
            if d.synthetic.train_per_class == 0 || d.synthetic.test_per_class == 0 {
                return bad("data.synthetic", "sample counts must be positive".into());
            }
        }

        if self.run.seeds.is_empty() {
            return bad("run.seeds", "at least one seed is required".into());
        }
        if self.run.threads == 0 {
            return bad("run.threads", "must be positive".into());
        }
        if let Some(b) = &self.bounds {
            b.constants(l.eta_u).validate().map_err(|e| CliError::Config(format!("bounds: {e}")))?;
            if !(b.initial_gap >= 0.0 && b.initial_gap.is_finite()) {
                return bad("bounds.initial_gap", format!("must be finite and non-negative, got {}", b.initial_gap));
            }
        }
        Ok(())
    }

    /// Physical constants in linear units, with the given payload.
    pub fn system_config(&self, model_bits: f64) -> SystemConfig<f64> {
        let s = &self.system;
        SystemConfig {
            bandwidth: s.bandwidth_hz,
            noise_psd: dbm_per_hz_to_watts(s.noise_psd_dbm_hz),
            t_max: s.t_max,
            local_iters: self.learning.tau,
            model_bits,
            rounds: self.run.rounds.max(1),
            path_loss_const: db_to_linear(s.path_loss_db),
            path_loss_exp: s.path_loss_exp,
            ref_distance: s.ref_distance,
        }
    }

    pub fn solver_options(&self) -> SolverOptions<f64> {
        SolverOptions { outer_tol: self.scheduler.outer_tol, outer_iters: self.scheduler.outer_iters, ..SolverOptions::default() }
    }
}
