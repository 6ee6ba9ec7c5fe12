//! Online device scheduling: per-device energy-deficit queues and the
//! set-expansion search over candidate sets.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resopt::{alternating_allocate, min_bandwidth, optimal_comp_time, round_energy, Allocation, AllocationInput, SolverOptions};
use crate::scalar::Scalar;
use crate::sysmodel::{min_comm_time, min_comp_time, ChannelRealization, DeviceProfile, SystemConfig};

/// Energy-deficit queues of all devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualQueueState<T> {
    pub queues: Vec<T>,
    pub cumulative_energy: Vec<T>,
    pub round: usize,
    /// `E_k / T` for every device.
    pub per_round_budget: Vec<T>,
}

impl<T: Scalar> VirtualQueueState<T> {
    /// Empty queues; the per-round allowance uses the configured horizon.
    pub fn new(profiles: &[DeviceProfile<T>], cfg: &SystemConfig<T>) -> Self {
        let rounds = T::from_count(cfg.rounds);
        Self {
            queues: vec![T::zero(); profiles.len()],
            cumulative_energy: vec![T::zero(); profiles.len()],
            round: 0,
            per_round_budget: profiles.iter().map(|p| p.energy_budget / rounds).collect(),
        }
    }

    /// `q ← max(q + αE − E_k/T, 0)` for one device.
    pub fn update_queue(&mut self, k: usize, scheduled: bool, energy_spent: T) {
        debug_assert!(energy_spent >= T::zero());
        debug_assert!(scheduled || energy_spent == T::zero());
        let spent = if scheduled { energy_spent } else { T::zero() };
        self.queues[k] = (self.queues[k] + spent - self.per_round_budget[k]).max(T::zero());
        self.cumulative_energy[k] = self.cumulative_energy[k] + spent;
    }

    /// Updates every queue with the round's allocation and advances the round.
    pub fn apply(&mut self, allocation: &Allocation<T>) {
        let mut spent = vec![None; self.queues.len()];
        for d in &allocation.devices {
            spent[d.id] = Some(d.energy);
        }
        for (k, e) in spent.into_iter().enumerate() {
            match e {
                Some(e) => self.update_queue(k, true, e),
                None => self.update_queue(k, false, T::zero()),
            }
        }
        self.round += 1;
    }

    pub fn max_queue(&self) -> T {
        self.queues.iter().copied().fold(T::zero(), T::max)
    }

    pub fn mean_queue(&self) -> T {
        if self.queues.is_empty() {
            return T::zero();
        }
        self.queues.iter().copied().sum::<T>() / T::from_count(self.queues.len())
    }
}

/// Devices that can finish a round alone: `τDC/f_max + Q/r_max(1) ≤ T_max`.
pub fn feasibility_filter<T: Scalar>(profiles: &[DeviceProfile<T>], gains: &ChannelRealization<T>, cfg: &SystemConfig<T>) -> Vec<usize> {
    profiles
        .iter()
        .zip(&gains.gains)
        .filter(|(p, &h)| match min_comm_time(T::one(), h, p, cfg) {
            Ok(t) => min_comp_time(p, cfg.local_iters) + t <= cfg.t_max,
            Err(_) => false,
        })
        .map(|(p, _)| p.id)
        .collect()
}

/// Smallest bandwidth share a device needs, reached when it computes at
/// full frequency.
pub fn min_demand<T: Scalar>(profile: &DeviceProfile<T>, gain: T, cfg: &SystemConfig<T>) -> Result<T> {
    min_bandwidth(profile, gain, cfg.t_max - min_comp_time(profile, cfg.local_iters), cfg)
}

/// Round energy of a device at an equal `1/K` share with its optimal time
/// split; `+∞` when that share cannot meet the deadline.
pub fn estimate_equal_bandwidth_energy<T: Scalar>(
    profile: &DeviceProfile<T>,
    gain: T,
    num_devices: usize,
    cfg: &SystemConfig<T>,
    opts: &SolverOptions<T>,
) -> T {
    let theta = T::one() / T::from_count(num_devices.max(1));
    optimal_comp_time(profile, theta, gain, cfg, opts)
        .and_then(|t| round_energy(profile, theta, t, gain, cfg, opts))
        .map_or(T::infinity(), |e| e.total())
}

/// A scheduled set with its resources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDecision<T> {
    pub selected: Vec<usize>,
    pub allocation: Allocation<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// The last added device's drift-plus-penalty term became positive.
    PositiveMarginal,
    /// The last added device made the set infeasible.
    Infeasible,
    /// Every candidate was added.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOutcome<T> {
    pub decision: RoundDecision<T>,
    pub objective: T,
    /// Number of sets solved with the alternating allocator.
    pub candidates_evaluated: usize,
    pub stop: StopReason,
    /// Zero-queue devices removed because they did not fit together.
    pub dropped_zero_queue: Vec<usize>,
    /// Objective of each set kept as a candidate, smallest set first.
    pub candidate_objectives: Vec<T>,
    pub candidate_sizes: Vec<usize>,
}

/// Removes devices with the largest minimum share until the rest fit in
/// the band. Returns `(kept, dropped)`, both in ascending id order.
pub fn fit_in_band<T: Scalar>(
    ids: &[usize],
    profiles: &[DeviceProfile<T>],
    gains: &ChannelRealization<T>,
    cfg: &SystemConfig<T>,
) -> (Vec<usize>, Vec<usize>) {
    let mut demand: Vec<(usize, T)> = ids
        .iter()
        .map(|&id| (id, min_demand(&profiles[id], gains.gains[id], cfg).unwrap_or(T::infinity())))
        .collect();
    let mut dropped = Vec::new();
    while demand.iter().map(|d| d.1).sum::<T>() > T::one() {
        let worst = demand
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap_or(std::cmp::Ordering::Equal).then(b.1 .0.cmp(&a.1 .0)))
            .map(|(i, _)| i)
            .expect("non-empty while over budget");
        dropped.push(demand.remove(worst).0);
    }
    let mut kept: Vec<usize> = demand.into_iter().map(|d| d.0).collect();
    kept.sort_unstable();
    dropped.sort_unstable();
    (kept, dropped)
}

fn is_infeasibility(e: &Error) -> bool {
    matches!(e, Error::InfeasibleSet(_) | Error::InfeasibleDevice { .. })
}

/// Drift-plus-penalty device scheduling by set expansion.
///
/// Zero-queue devices form the base set. Positive-queue devices are added
/// one at a time in ascending order of `q_k Ē_k` (`Ē_k` from an equal
/// bandwidth split, ties by id); each candidate set is solved with
/// [`alternating_allocate`], and expansion stops when the device just added
/// has `-V D_k + q_k E_k > 0` or no longer fits. The best candidate wins.
pub fn schedule_round<T: Scalar>(
    state: &VirtualQueueState<T>,
    gains: &ChannelRealization<T>,
    v: T,
    cfg: &SystemConfig<T>,
    profiles: &[DeviceProfile<T>],
    opts: &SolverOptions<T>,
) -> Result<ScheduleOutcome<T>> {
    if !(v >= T::zero()) {
        return Err(Error::Domain(format!("V must be non-negative, got {v}")));
    }
    let feasible = feasibility_filter(profiles, gains, cfg);
    let zero: Vec<usize> = feasible.iter().copied().filter(|&k| state.queues[k] == T::zero()).collect();
    let (base, dropped) = fit_in_band(&zero, profiles, gains, cfg);

    let input = |set: &[usize]| -> Result<Allocation<T>> {
        let inp = AllocationInput { scheduled: set, queues: &state.queues, gains, profiles, cfg, v };
        alternating_allocate(&inp, opts)
    };

    let mut evaluated = 1;
    let base_alloc = input(&base)?;
    let mut candidates: Vec<(Vec<usize>, Allocation<T>)> = vec![(base.clone(), base_alloc)];

    let k_total = profiles.len();
    let mut order: Vec<(T, usize)> = feasible
        .iter()
        .copied()
        .filter(|&k| state.queues[k] > T::zero())
        .map(|k| {
            let e = estimate_equal_bandwidth_energy(&profiles[k], gains.gains[k], k_total, cfg, opts);
            (state.queues[k] * e, k)
        })
        .filter(|(c, _)| c.is_finite())
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));

    let mut set = base;
    let mut stop = StopReason::Exhausted;
    for (_, k) in order {
        set.push(k);
        evaluated += 1;
        let alloc = match input(&set) {
            Ok(a) => a,
            Err(e) if is_infeasibility(&e) => {
                stop = StopReason::Infeasible;
                break;
            }
            Err(e) => return Err(e),
        };
        let added = alloc.get(k).expect("added device is allocated");
        if -v * profiles[k].data() + state.queues[k] * added.energy > T::zero() {
            stop = StopReason::PositiveMarginal;
            break;
        }
        candidates.push((set.clone(), alloc));
    }

    let candidate_objectives: Vec<T> = candidates.iter().map(|c| c.1.objective).collect();
    let candidate_sizes = candidates.iter().map(|c| c.0.len()).collect();
    let best = candidate_objectives
        .iter()
        .enumerate()
        .fold(0, |best, (i, &o)| if o < candidate_objectives[best] { i } else { best });
    let (selected, allocation) = candidates.swap_remove(best);
    Ok(ScheduleOutcome {
        objective: allocation.objective,
        decision: RoundDecision { selected, allocation },
        candidates_evaluated: evaluated,
        stop,
        dropped_zero_queue: dropped,
        candidate_objectives,
        candidate_sizes,
    })
}

/// Energy-agnostic baseline: feasible devices are added in random order
/// until the next one would overflow the band; the resulting set is then
/// allocated with the regular solver.
pub fn random_expansion_round<T: Scalar, R: Rng + ?Sized>(
    state: &VirtualQueueState<T>,
    gains: &ChannelRealization<T>,
    v: T,
    cfg: &SystemConfig<T>,
    profiles: &[DeviceProfile<T>],
    rng: &mut R,
    opts: &SolverOptions<T>,
) -> Result<RoundDecision<T>> {
    let mut order = feasibility_filter(profiles, gains, cfg);
    order.shuffle(rng);
    let mut set = Vec::new();
    let mut used = T::zero();
    for k in order {
        let d = min_demand(&profiles[k], gains.gains[k], cfg)?;
        if used + d > T::one() {
            break;
        }
        used = used + d;
        set.push(k);
    }
    set.sort_unstable();
    allocate_set(state, gains, v, cfg, profiles, set, opts)
}

/// Schedules every device that can meet the deadline, dropping the most
/// bandwidth-hungry ones if they do not fit together.
pub fn all_feasible_round<T: Scalar>(
    state: &VirtualQueueState<T>,
    gains: &ChannelRealization<T>,
    v: T,
    cfg: &SystemConfig<T>,
    profiles: &[DeviceProfile<T>],
    opts: &SolverOptions<T>,
) -> Result<RoundDecision<T>> {
    let feasible = feasibility_filter(profiles, gains, cfg);
    let (set, _) = fit_in_band(&feasible, profiles, gains, cfg);
    allocate_set(state, gains, v, cfg, profiles, set, opts)
}

/// Allocates resources to a given set under the current queues.
pub fn allocate_set<T: Scalar>(
    state: &VirtualQueueState<T>,
    gains: &ChannelRealization<T>,
    v: T,
    cfg: &SystemConfig<T>,
    profiles: &[DeviceProfile<T>],
    set: Vec<usize>,
    opts: &SolverOptions<T>,
) -> Result<RoundDecision<T>> {
    let inp = AllocationInput { scheduled: &set, queues: &state.queues, gains, profiles, cfg, v };
    let allocation = alternating_allocate(&inp, opts)?;
    Ok(RoundDecision { selected: set, allocation })
}
