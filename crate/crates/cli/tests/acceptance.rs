//! Acceptance suite. Prints one `PASS`, `FAIL` or `SKIP` line per criterion
//! and exits non-zero if any criterion fails.
//!
//! `cargo test -p pmafl-cli --test acceptance` runs everything; numeric
//! arguments after `--` select criteria, e.g. `-- 5 8`.

use std::path::Path;
use std::time::{Duration, Instant};

use pmafl::bounds::{t_round_bound, BoundConstants, ScheduleTrace};
use pmafl::learning::{batch_cross_entropy, forward, loss_and_grad, Dense, DenseGrad, Samples, SplitModel};
use pmafl::resopt::{
    bandwidth_allocation, lambert_w0, min_bandwidth, optimal_comp_time, weighted_upload_energy, AllocationInput,
    SolverOptions,
};
use pmafl::rng::{stream, StreamDomain};
use pmafl::scheduler::{allocate_set, feasibility_filter, random_expansion_round, schedule_round};
use pmafl::sysmodel::{local_energy, min_comm_time, min_comp_time, uplink_energy};
use pmafl::{ChannelRealization, DeviceProfile, PopulationSpec, SystemConfig, VirtualQueueState};
use pmafl_cli::config::{DataSource, ExperimentConfig, Policy};
use pmafl_cli::output::check_bounds;
use pmafl_cli::{run_experiment, run_sweep, SweepAxis};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

enum Outcome {
    Done(Verdict),
    Skip(String),
}

type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Desk-scale allocation instance with every device at full compute speed
/// and room left in the band.
struct Instance {
    profiles: Vec<DeviceProfile<f64>>,
    gains: ChannelRealization<f64>,
    queues: Vec<f64>,
    cfg: SystemConfig<f64>,
    scheduled: Vec<usize>,
    t_comp: Vec<f64>,
}

impl Instance {
    fn find(seed: u64, n: usize) -> Self {
        let cfg = SystemConfig { rounds: 100, ..SystemConfig::default() };
        for s in seed * 1000.. {
            let profiles: Vec<DeviceProfile<f64>> = PopulationSpec::desk_scale(n, 100).generate(s).unwrap();
            let gains = ChannelRealization::sample(&profiles, &cfg, s, 0);
            let mut rng = stream(s, StreamDomain::Scheduling, 99, 0);
            let queues = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
            let t_comp: Vec<f64> = profiles.iter().map(|p| min_comp_time(p, cfg.local_iters)).collect();
            let inst = Instance { profiles, gains, queues, cfg: cfg.clone(), scheduled: (0..n).collect(), t_comp };
            if let Some(m) = inst.min_shares() {
                if m.iter().sum::<f64>() < 0.9 {
                    return inst;
                }
            }
        }
        unreachable!()
    }

    fn input(&self, v: f64) -> AllocationInput<'_, f64> {
        AllocationInput {
            scheduled: &self.scheduled,
            queues: &self.queues,
            gains: &self.gains,
            profiles: &self.profiles,
            cfg: &self.cfg,
            v,
        }
    }

    fn min_shares(&self) -> Option<Vec<f64>> {
        self.scheduled
            .iter()
            .map(|&k| min_bandwidth(&self.profiles[k], self.gains.gains[k], self.cfg.t_max - self.t_comp[k], &self.cfg).ok())
            .collect()
    }

    fn upload_cost(&self, k: usize, theta: f64) -> f64 {
        let t_comm = self.cfg.t_max - self.t_comp[k];
        self.queues[k] * uplink_energy(theta, t_comm, self.gains.gains[k], &self.cfg).unwrap().energy
    }
}

fn c1_bandwidth_oracle() -> Outcome {
    let step = 1e-3;
    let grid: Vec<f64> = (1..1000).map(|i| i as f64 * step).collect();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..50u64 {
        let n = 2 + (i % 2) as usize;
        let inst = Instance::find(i, n);
        let sol = bandwidth_allocation(&inst.input(0.0), &inst.t_comp, &SolverOptions::default()).unwrap();
        let solver: f64 = (0..n).map(|k| inst.upload_cost(k, sol.theta[k])).sum();
        let mins = inst.min_shares().unwrap();
        let ok = |k: usize, x: f64| x >= mins[k] && x <= 1.0;
        let mut best = f64::INFINITY;
        for &a in &grid {
            if !ok(0, a) {
                continue;
            }
            let ca = inst.upload_cost(0, a);
            if n == 2 {
                let b = 1.0 - a;
                if ok(1, b) {
                    best = best.min(ca + inst.upload_cost(1, b));
                }
                continue;
            }
            for &b in &grid {
                let c = 1.0 - a - b;
                if c < step * 0.5 || !ok(1, b) || !ok(2, c) {
                    continue;
                }
                best = best.min(ca + inst.upload_cost(1, b) + inst.upload_cost(2, c));
            }
        }
        worst = worst.max((solver - best) / best);
    }
    Verdict::new(
        worst <= 1e-12,
        format!("50 instances, worst (solver - grid)/grid = {worst:.3e} (negative: solver below every grid point)"),
    )
    .into()
}

fn c2_kkt_equalization() -> Outcome {
    let mut worst = 0.0f64;
    let mut compared = 0;
    for i in 0..100u64 {
        let n = 2 + (i % 5) as usize;
        let inst = Instance::find(1000 + i, n);
        let sol = bandwidth_allocation(&inst.input(0.01), &inst.t_comp, &SolverOptions::default()).unwrap();
        let marginals: Vec<f64> = (0..n)
            .filter(|&k| !sol.pinned[k])
            .map(|k| {
                let th = sol.theta[k];
                let h = 1e-7 * th;
                let f = |x: f64| {
                    weighted_upload_energy(x, inst.queues[k], inst.gains.gains[k], inst.cfg.t_max - inst.t_comp[k], &inst.cfg)
                        .unwrap()
                };
                (f(th + h) - f(th - h)) / (2.0 * h)
            })
            .collect();
        if marginals.len() < 2 {
            continue;
        }
        compared += 1;
        let mean = marginals.iter().sum::<f64>() / marginals.len() as f64;
        for m in &marginals {
            worst = worst.max((m - mean).abs() / mean.abs());
        }
    }
    Verdict::new(
        worst <= 1e-6 && compared >= 90,
        format!("{compared} instances with >= 2 free devices, worst relative spread {worst:.3e}"),
    )
    .into()
}

fn c3_power_balance() -> Outcome {
    let opts = SolverOptions::default();
    let (mut found, mut worst, mut seed) = (0, 0.0f64, 0u64);
    while found < 100 {
        seed += 1;
        assert!(seed < 100_000, "too few interior instances");
        let inst = Instance::find(5000 + seed, 1);
        let mut rng = stream(seed, StreamDomain::Scheduling, 7, 0);
        let theta: f64 = rng.random_range(0.05..1.0);
        let (p, h, cfg) = (&inst.profiles[0], inst.gains.gains[0], &inst.cfg);
        let Ok(t) = optimal_comp_time(p, theta, h, cfg, &opts) else { continue };
        let lo = min_comp_time(p, cfg.local_iters);
        let Ok(tc) = min_comm_time(theta, h, p, cfg) else { continue };
        let hi = cfg.t_max - tc;
        if !(t > lo + 1e-3 && t < hi - 1e-3) {
            continue;
        }
        let d = 1e-6 * cfg.t_max;
        let el = |x: f64| local_energy(p, cfg.local_iters, x).unwrap();
        let eu = |x: f64| uplink_energy(theta, cfg.t_max - x, h, cfg).unwrap().energy;
        let local_power = -(el(t + d) - el(t - d)) / (2.0 * d);
        let upload_power = (eu(t + d) - eu(t - d)) / (2.0 * d);
        worst = worst.max((local_power - upload_power).abs() / local_power.abs());
        found += 1;
    }
    Verdict::new(worst <= 1e-6, format!("100 interior instances, worst relative mismatch {worst:.3e}")).into()
}

fn c4_lambert() -> Outcome {
    let lo = -(-1.0f64).exp() + 1e-9;
    let (o0, o1) = (1e-9f64, 1e6 - lo);
    let n = 10_000;
    let mut worst = 0.0f64;
    for i in 0..n {
        let off = o0 * (o1 / o0).powf(i as f64 / (n - 1) as f64);
        let x = (lo - 1e-9) + off;
        let x = x.max(lo);
        let w = lambert_w0(x).unwrap();
        worst = worst.max((w * w.exp() - x).abs() / x.abs().max(1.0));
    }
    Verdict::new(worst <= 1e-9, format!("{n} log-spaced points on [-1/e+1e-9, 1e6], worst scaled residual {worst:.3e}"))
        .into()
}

fn c5_set_expansion() -> Outcome {
    let k = 10;
    let opts = SolverOptions::default();
    let cfg = SystemConfig { rounds: 100, ..SystemConfig::default() };
    let v = 0.01;
    let (mut gaps, mut random_gaps) = (Vec::new(), Vec::new());
    for seed in 0..50u64 {
        let profiles: Vec<DeviceProfile<f64>> = PopulationSpec::desk_scale(k, 100).generate(seed).unwrap();
        let gains = ChannelRealization::sample(&profiles, &cfg, seed, 0);
        let mut state = VirtualQueueState::new(&profiles, &cfg);
        let mut rng = stream(seed, StreamDomain::Scheduling, 1, 0);
        for q in &mut state.queues {
            *q = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..2.0) };
        }
        let feasible = feasibility_filter(&profiles, &gains, &cfg);
        let mut best = 0.0f64;
        for mask in 1u32..(1 << feasible.len()) {
            let set: Vec<usize> = feasible.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &d)| d).collect();
            if let Ok(d) = allocate_set(&state, &gains, v, &cfg, &profiles, set, &opts) {
                best = best.min(d.allocation.objective);
            }
        }
        let ours = schedule_round(&state, &gains, v, &cfg, &profiles, &opts).unwrap().objective;
        let mut rrng = stream(seed, StreamDomain::Scheduling, 2, 0);
        let random = random_expansion_round(&state, &gains, v, &cfg, &profiles, &mut rrng, &opts).unwrap().allocation.objective;
        let scale = best.abs().max(1e-12);
        gaps.push((ours - best) / scale);
        random_gaps.push((random - best) / scale);
    }
    let (m, mr) = (median(gaps.clone()), median(random_gaps));
    let exact = gaps.iter().filter(|&&g| g <= 1e-9).count();
    Verdict::new(
        m <= 0.05 && m <= mr,
        format!("K = {k}, 50 instances: median gap {:.3}% ({exact} exact), random-expansion median gap {:.3}%", 100.0 * m, 100.0 * mr),
    )
    .into()
}

/// Scheduling-only desk-scale population with a 1 J per-round allowance.
fn scheduling_config(rounds: usize, seeds: u64) -> ExperimentConfig {
    let spec = PopulationSpec::desk_scale(20, rounds);
    let mut cfg = ExperimentConfig::default();
    cfg.learning.enabled = false;
    cfg.system.model_bits = Some(533_504.0 * 16.0);
    cfg.devices.count = spec.count;
    cfg.devices.data_min = spec.data_min;
    cfg.devices.data_max = spec.data_max;
    cfg.devices.cycles_per_sample = spec.cycles_per_sample;
    cfg.devices.energy_budget = spec.energy_budget;
    cfg.run.rounds = rounds;
    cfg.run.seeds = (0..seeds).collect();
    cfg
}

fn c6_energy_discipline() -> Outcome {
    let cfg = scheduling_config(1000, 20);
    let runs = run_experiment(&cfg, 1).unwrap();
    let (mut telescoped, mut within, mut devices, mut worst_seed) = (true, 0, 0, 1.0f64);
    for r in &runs {
        let q = &r.queues;
        let mut seed_within = 0;
        for (k, p) in r.profiles.iter().enumerate() {
            let spent = q.cumulative_energy[k];
            telescoped &= spent <= p.energy_budget + q.queues[k] + 1e-9 * p.energy_budget;
            if spent <= p.energy_budget {
                seed_within += 1;
            }
        }
        within += seed_within;
        devices += r.profiles.len();
        worst_seed = worst_seed.min(seed_within as f64 / r.profiles.len() as f64);
    }
    let pooled = within as f64 / devices as f64;
    let skipped: usize = runs.iter().map(|r| r.skipped.len()).sum();
    Verdict::new(
        telescoped && worst_seed >= 0.9 && skipped == 0,
        format!(
            "20 seeds x 1000 rounds, K = 20, V = 0.01: telescoped bound {}, within budget pooled {:.3}, worst seed {:.3}, skipped rounds {skipped}",
            if telescoped { "holds" } else { "violated" },
            pooled,
            worst_seed
        ),
    )
    .into()
}

fn c7_v_tradeoff() -> Outcome {
    let cfg = scheduling_config(100, 20);
    let values = [0.001, 0.01, 0.1];
    let results = run_sweep(&cfg, SweepAxis::V, &values, 1).unwrap();
    let medians: Vec<f64> = results
        .iter()
        .map(|(_, _, runs)| median(runs.iter().map(|r| r.rows.iter().map(|x| x.scheduled_data as f64).sum()).collect()))
        .collect();
    Verdict::new(
        medians.windows(2).all(|w| w[1] >= w[0]),
        format!("median total scheduled data over 20 seeds for V = {values:?}: {medians:?}"),
    )
    .into()
}

/// Synthetic 10-class non-IID task: 20 devices, two label shards each,
/// every class a mixture of several Gaussian components.
pub fn split_task() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.system.model_bits = Some(1e5);
    cfg.devices.count = 20;
    cfg.devices.cycles_per_sample = 1e4;
    cfg.devices.energy_budget = 100.0;
    cfg.scheduler.policy = Policy::AllFeasible;
    cfg.learning.hidden = vec![128, 64];
    cfg.learning.tau = 10;
    cfg.learning.eta_u = 0.1;
    cfg.learning.eta_v = 0.1;
    cfg.learning.eval_every = usize::MAX;
    cfg.data.source = DataSource::Synthetic;
    cfg.data.shards_per_device = 2;
    cfg.data.test_ratio = 1.0;
    let s = &mut cfg.data.synthetic;
    s.dim = 20;
    s.informative = 10;
    s.separation = 1.0;
    s.noise_std = 1.0;
    s.modes = 6;
    s.cluster_std = 0.5;
    s.train_per_class = 60;
    s.test_per_class = 300;
    cfg.run.rounds = 60;
    cfg.run.seeds = (0..10).collect();
    cfg
}

fn c8_partial_aggregation() -> Outcome {
    let cfg = split_task();
    let depths = [0.0, 1.0, 2.0, 3.0];
    let results = run_sweep(&cfg, SweepAxis::SplitDepth, &depths, 1).unwrap();
    let acc: Vec<f64> = results
        .iter()
        .map(|(_, _, runs)| {
            runs.iter().map(|r| r.rows.last().and_then(|x| x.mean_accuracy).unwrap()).sum::<f64>() / runs.len() as f64
        })
        .collect();
    let (local, fedavg) = (acc[0], acc[3]);
    let (best_i, best) = acc[1..3].iter().copied().enumerate().fold((0, f64::MIN), |b, (i, a)| if a > b.1 { (i + 1, a) } else { b });
    let pass = best - local >= 0.02 && best - fedavg >= 0.02 && acc.iter().all(|&a| a >= 0.30);
    let shown: Vec<String> = acc.iter().map(|a| format!("{:.2}%", 100.0 * a)).collect();
    Verdict::new(
        pass,
        format!(
            "mean personalized accuracy over 10 seeds by split depth 0..3: [{}]; best intermediate depth {best_i} is {:+.2} pts over local-only and {:+.2} pts over full aggregation",
            shown.join(", "),
            100.0 * (best - local),
            100.0 * (best - fedavg)
        ),
    )
    .into()
}

fn c9_mnist() -> Outcome {
    let Ok(dir) = std::env::var("PMAFL_MNIST_DIR") else {
        return Outcome::Skip("long-running MNIST reproduction; set PMAFL_MNIST_DIR to run it (see README)".into());
    };
    let dir = Path::new(&dir);
    let mut cfg = ExperimentConfig::default();
    cfg.data.source = DataSource::Mnist;
    cfg.data.mnist.train_images = dir.join("train-images-idx3-ubyte");
    cfg.data.mnist.train_labels = dir.join("train-labels-idx1-ubyte");
    cfg.data.mnist.test_images = dir.join("t10k-images-idx3-ubyte");
    cfg.data.mnist.test_labels = dir.join("t10k-labels-idx1-ubyte");
    cfg.data.test_ratio = 1.0 / 6.0;
    cfg.learning.eval_every = usize::MAX;
    cfg.run.rounds = 40;
    cfg.run.seeds = vec![0, 1];
    let results = match run_sweep(&cfg, SweepAxis::SplitDepth, &[2.0, 4.0], 1) {
        Ok(r) => r,
        Err(e) => return Outcome::Done(Verdict::new(false, format!("run failed: {e}"))),
    };
    let acc: Vec<f64> = results
        .iter()
        .map(|(_, _, runs)| runs.iter().map(|r| r.rows.last().and_then(|x| x.mean_accuracy).unwrap_or(0.0)).sum::<f64>() / runs.len() as f64)
        .collect();
    let sched: f64 = results[0].2.iter().flat_map(|r| r.rows.iter().map(|x| x.scheduled as f64)).sum::<f64>()
        / (results[0].2.len() * 40) as f64;
    Verdict::new(
        acc[0] >= acc[1],
        format!("split 2: {:.2}%, full aggregation: {:.2}%, mean devices per round {sched:.1}", 100.0 * acc[0], 100.0 * acc[1]),
    )
    .into()
}

fn unrolled(gap: f64, s: &[f64], d: f64, c: &BoundConstants<f64>) -> f64 {
    let a: Vec<f64> = s.iter().map(|&x| 1.0 + c.eta_u * c.l_u * (4.0 * ((d - x) / d).powi(2) * c.rho * c.rho - 1.0)).collect();
    let add: Vec<f64> = s.iter().map(|&x| 2.0 * c.eta_u * c.delta * c.delta * (d - x).powi(2) / (d * d)).collect();
    let mut total = a.iter().product::<f64>() * gap;
    for t in 0..s.len() {
        total += a[t + 1..].iter().product::<f64>() * add[t];
    }
    total
}

fn c10_bound_evaluator() -> Outcome {
    let mut rng = stream(10, StreamDomain::Scheduling, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let l_u = rng.random_range(0.5..5.0);
        let c = BoundConstants {
            l_u,
            l_v: 1.0,
            chi: 0.0,
            delta: rng.random_range(0.0..2.0),
            rho: rng.random_range(0.0..0.8),
            eta_u: rng.random_range(0.1..1.0) / l_u,
        };
        let d = 1000.0;
        let s: Vec<f64> = (0..5).map(|_| rng.random_range(0..=1000) as f64).collect();
        let gap = rng.random_range(0.1..50.0);
        let b = t_round_bound(gap, &ScheduleTrace { scheduled_data: s.clone(), total_data: d }, &c).unwrap();
        let expect = unrolled(gap, &s, d, &c);
        worst = worst.max((b[4] - expect).abs() / expect.abs());
    }

    let c = BoundConstants::<f64> { l_u: 2.0, l_v: 1.0, chi: 0.0, delta: 0.7, rho: 0.3, eta_u: 0.2 };
    let full = t_round_bound(5.0, &ScheduleTrace { scheduled_data: vec![600.0; 50], total_data: 600.0 }, &c).unwrap();
    let mut geometric = 5.0;
    let mut exact = true;
    for b in &full {
        geometric *= 1.0 - c.eta_u * c.l_u;
        exact &= *b == geometric;
    }
    let powi_gap = (full[49] - 5.0 * (1.0 - c.eta_u * c.l_u).powi(50)).abs() / full[49];

    let csv_ok = bounds_csv_round_trip(&c);
    Verdict::new(
        worst <= 1e-12 && exact && powi_gap <= 1e-12 && csv_ok,
        format!(
            "10 random 5-round traces: worst relative error {worst:.3e}; full participation matches gap*(1-eta*L)^T exactly: {exact}; csv bound column matches: {csv_ok}"
        ),
    )
    .into()
}

/// The `bounds` command's columns on a 5-round metrics file equal the
/// unrolled bound.
fn bounds_csv_round_trip(c: &BoundConstants<f64>) -> bool {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("metrics.csv");
    let s = [100.0, 350.0, 0.0, 600.0, 420.0];
    let mut text = String::from("round,scheduled_data,total_data\n");
    for (t, x) in s.iter().enumerate() {
        text += &format!("{t},{x},600\n");
    }
    std::fs::write(&input, text).unwrap();
    let output = dir.path().join("out.csv");
    check_bounds(&input, &output, c, 3.0).unwrap();
    let mut r = csv::Reader::from_path(&output).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let last: f64 = rows[4][4].parse().unwrap();
    rows.len() == 5 && (last - unrolled(3.0, &s, 600.0, c)).abs() <= 1e-12 * last.abs()
}

fn param_mut(layers: &mut [Dense<f64>], layer: usize, j: usize) -> &mut f64 {
    let l = &mut layers[layer];
    let nw = l.weights.len();
    if j < nw {
        &mut l.weights[j]
    } else {
        &mut l.bias[j - nw]
    }
}

fn grad_at(g: &DenseGrad<f64>, j: usize) -> f64 {
    if j < g.weights.len() {
        g.weights[j]
    } else {
        g.bias[j - g.weights.len()]
    }
}

/// Loss gradient with respect to the inputs.
fn input_grad(layers: &[Dense<f64>], x: &[f64], labels: &[usize]) -> Vec<f64> {
    let cache = forward(layers, x, labels.len());
    let (_, mut g) = batch_cross_entropy(cache.activations.last().unwrap(), labels);
    for (i, l) in layers.iter().enumerate().rev() {
        let mut scratch = DenseGrad::zeros_like(l);
        g = l.backward(&cache.activations[i], &cache.pre[i], &g, &mut scratch);
    }
    g
}

#[derive(Default)]
struct Probes {
    checked: usize,
    kinks: usize,
    failures: usize,
}

impl Probes {
    /// Compares `analytic` with the central difference of `f(delta)`.
    /// Probes whose one-sided slopes disagree straddle a ReLU kink and are
    /// not counted.
    fn check(&mut self, analytic: f64, f: impl Fn(f64) -> f64) {
        let h = 1e-6;
        let (fp, f0, fm) = (f(h), f(0.0), f(-h));
        let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
        if (right - left).abs() > 1e-3 * right.abs().max(left.abs()).max(1e-2) {
            self.kinks += 1;
            return;
        }
        let fd = (fp - fm) / (2.0 * h);
        self.checked += 1;
        self.failures += usize::from((analytic - fd).abs() > 1e-4 * analytic.abs().max(fd.abs()).max(1e-4));
    }
}

fn c11_gradients() -> Outcome {
    let mut probes = Probes::default();
    let mut per_layer = Vec::new();
    for (net, sizes) in [vec![5, 7, 6, 4], vec![8, 10, 3], vec![4, 6, 6, 6, 5]].into_iter().enumerate() {
        let mut rng = stream(net as u64, StreamDomain::Init, 0, 0);
        let model = SplitModel::<f64>::new(&sizes, 1, &mut rng).unwrap();
        let classes = *sizes.last().unwrap();
        let mut data = Samples::new(sizes[0]);
        for i in 0..12 {
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            data.push(&x, i % classes);
        }
        let idx: Vec<usize> = (0..data.len()).collect();
        let (_, grads) = loss_and_grad(&model.layers, &data, &idx);
        for (li, layer) in model.layers.iter().enumerate() {
            let before = probes.checked;
            for j in (0..layer.param_count()).step_by(1 + layer.param_count() / 25) {
                probes.check(grad_at(&grads[li], j), |d| {
                    let mut p = model.layers.clone();
                    *param_mut(&mut p, li, j) += d;
                    loss_and_grad(&p, &data, &idx).0
                });
            }
            per_layer.push(probes.checked - before);
        }
        let labels = &data.labels;
        let gx = input_grad(&model.layers, &data.features, labels);
        for j in (0..data.features.len()).step_by(3) {
            probes.check(gx[j], |d| {
                let mut x = data.features.clone();
                x[j] += d;
                batch_cross_entropy(forward(&model.layers, &x, labels.len()).activations.last().unwrap(), labels).0
            });
        }
    }
    let mut logits_rng = stream(11, StreamDomain::Init, 1, 0);
    for _ in 0..40 {
        let z: Vec<f64> = (0..6).map(|_| logits_rng.random_range(-5.0..5.0)).collect();
        let labels = [logits_rng.random_range(0..6)];
        let (_, g) = batch_cross_entropy(&z, &labels);
        for i in 0..6 {
            probes.check(g[i], |d| {
                let mut p = z.clone();
                p[i] += d;
                batch_cross_entropy(&p, &labels).0
            });
        }
    }
    let Probes { checked, kinks, failures } = probes;
    Verdict::new(
        failures == 0 && checked >= 200 && per_layer.iter().all(|&n| n > 0),
        format!(
            "{checked} central-difference probes over 9 layers, inputs and the loss ({kinks} skipped at ReLU kinks); {failures} outside 1e-4"
        ),
    )
    .into()
}

fn c12_determinism() -> Outcome {
    let mut cfg = split_task();
    cfg.scheduler.policy = Policy::Lyapunov;
    cfg.devices.energy_budget = 2.0;
    cfg.learning.eval_every = 5;
    cfg.learning.split_depth = 2;
    cfg.run.rounds = 15;
    cfg.run.seeds = vec![7];
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str| {
        let out = dir.path().join(name);
        let runs = run_experiment(&cfg, 1).unwrap();
        pmafl_cli::experiment::write_experiment(&out, &cfg, 1, &runs).unwrap();
        let run_dir = out.join("seed-7");
        (std::fs::read(run_dir.join("metrics.csv")).unwrap(), std::fs::read(run_dir.join("device_rounds.csv")).unwrap())
    };
    let (a, b) = (write("a"), write("b"));
    let scheduled = String::from_utf8_lossy(&a.0).lines().skip(1).any(|l| l.split(',').nth(2) != Some("0"));
    Verdict::new(
        a == b && scheduled,
        format!("two single-threaded runs: metrics.csv identical {}, device_rounds.csv identical {}", a.0 == b.0, a.1 == b.1),
    )
    .into()
}

impl From<Verdict> for Outcome {
    fn from(v: Verdict) -> Self {
        Outcome::Done(v)
    }
}

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "bandwidth solver vs grid search", Some(Duration::from_secs(10)), c1_bandwidth_oracle),
        (2, "KKT marginal-cost equalization", None, c2_kkt_equalization),
        (3, "computation/communication power balance", None, c3_power_balance),
        (4, "Lambert W accuracy", None, c4_lambert),
        (5, "set expansion vs exhaustive search", Some(Duration::from_secs(120)), c5_set_expansion),
        (6, "Lyapunov energy discipline", Some(Duration::from_secs(60)), c6_energy_discipline),
        (7, "scheduled data grows with V", None, c7_v_tradeoff),
        (8, "partial aggregation beats both extremes", Some(Duration::from_secs(300)), c8_partial_aggregation),
        (9, "MNIST reproduction", None, c9_mnist),
        (10, "convergence bound evaluator", None, c10_bound_evaluator),
        (11, "gradient correctness", None, c11_gradients),
        (12, "determinism", None, c12_determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        match outcome {
            Outcome::Skip(why) => println!("SKIP {id:>2} {name}: {why}"),
            Outcome::Done(v) => {
                let in_time = budget.is_none_or(|b| elapsed <= b);
                let pass = v.pass && in_time;
                failed += usize::from(!pass);
                let limit = budget.map(|b| format!(" (limit {}s)", b.as_secs())).unwrap_or_default();
                println!(
                    "{} {id:>2} {name}: {} [{:.1}s{limit}]",
                    if pass { "PASS" } else { "FAIL" },
                    v.detail,
                    elapsed.as_secs_f64()
                );
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
