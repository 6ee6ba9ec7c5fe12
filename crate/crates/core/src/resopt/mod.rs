//! Per-round resource allocation for a fixed set of scheduled devices.
//!
//! Three layers, each usable on its own:
//! - [`optimal_comp_time`]: the computation/communication split of one device
//!   at a given bandwidth share;
//! - [`bandwidth_allocation`]: the KKT bandwidth split at given computation
//!   times, via the Lambert-W closed form and bisection on the multiplier;
//! - [`alternating_allocate`]: the two above iterated until the weighted
//!   energy stops decreasing.

mod alternating;
mod bandwidth;
mod lambert;
mod time;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sysmodel::{ChannelRealization, DeviceProfile, SystemConfig};

pub use alternating::alternating_allocate;
pub use bandwidth::{bandwidth_allocation, min_bandwidth, theta_of_lambda, weighted_upload_energy, BandwidthSolution};
pub use lambert::lambert_w0;
pub use time::{optimal_comp_time, power_balance, round_energy, EnergySplit};

/// Tolerances and iteration caps of the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions<T> {
    /// Bisection steps for the interior computation time.
    pub time_iters: usize,
    /// Target `|Σθ - 1|` of the multiplier search.
    pub sum_tol: T,
    pub lambda_iters: usize,
    /// Stop when the weighted energy decreases by at most this much.
    pub outer_tol: T,
    pub outer_iters: usize,
    /// Largest `Q ln2 / (θBT^U)` that is exponentiated.
    pub max_exponent: T,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            time_iters: 60,
            sum_tol: T::resolvable(1e-9, 16.0),
            lambda_iters: 200,
            outer_tol: T::resolvable(1e-8, 16.0),
            outer_iters: 100,
            max_exponent: T::lit(700.0).min(T::max_value().ln() - T::one()),
        }
    }
}

/// Everything the solvers need to allocate resources to a candidate set.
///
/// Devices are addressed by id, and ids coincide with positions in
/// `profiles`, `queues` and `gains.gains`.
#[derive(Debug, Clone, Copy)]
pub struct AllocationInput<'a, T> {
    pub scheduled: &'a [usize],
    pub queues: &'a [T],
    pub gains: &'a ChannelRealization<T>,
    pub profiles: &'a [DeviceProfile<T>],
    pub cfg: &'a SystemConfig<T>,
    /// Weight on scheduled data in the drift-plus-penalty objective.
    pub v: T,
}

impl<T: Scalar> AllocationInput<'_, T> {
    pub fn validate(&self) -> Result<()> {
        let k = self.profiles.len();
        if self.queues.len() != k || self.gains.gains.len() != k {
            return Err(Error::DegenerateInput(format!(
                "{} profiles, {} queues, {} gains",
                k,
                self.queues.len(),
                self.gains.gains.len()
            )));
        }
        for (i, p) in self.profiles.iter().enumerate() {
            if p.id != i {
                return Err(Error::DegenerateInput(format!("profile at position {i} has id {}", p.id)));
            }
        }
        let mut seen = vec![false; k];
        for &id in self.scheduled {
            if id >= k || std::mem::replace(&mut seen[id], true) {
                return Err(Error::DegenerateInput(format!("scheduled id {id} unknown or repeated")));
            }
        }
        if let Some(q) = self.queues.iter().find(|q| !(**q >= T::zero())) {
            return Err(Error::DegenerateInput(format!("negative virtual queue {q}")));
        }
        if !(self.v >= T::zero()) {
            return Err(Error::DegenerateInput(format!("negative weight V = {}", self.v)));
        }
        Ok(())
    }

    pub(crate) fn profile(&self, id: usize) -> &DeviceProfile<T> {
        &self.profiles[id]
    }

    pub(crate) fn gain(&self, id: usize) -> T {
        self.gains.gains[id]
    }
}

/// Resources granted to one scheduled device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceAllocation<T> {
    pub id: usize,
    pub theta: T,
    pub t_comp: T,
    pub t_comm: T,
    pub power: T,
    pub comp_energy: T,
    pub comm_energy: T,
    pub energy: T,
}

/// Solution for a whole scheduled set, in the order of `scheduled`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation<T> {
    pub devices: Vec<DeviceAllocation<T>>,
    /// `Σ q_k E_k` over the set.
    pub weighted_energy: T,
    /// `-V Σ D_k + Σ q_k E_k`.
    pub objective: T,
    /// Weighted energy after each outer iteration.
    pub history: Vec<T>,
}

impl<T: Scalar> Allocation<T> {
    pub fn empty() -> Self {
        Self { devices: Vec::new(), weighted_energy: T::zero(), objective: T::zero(), history: Vec::new() }
    }

    pub fn get(&self, id: usize) -> Option<&DeviceAllocation<T>> {
        self.devices.iter().find(|d| d.id == id)
    }

    pub fn theta_sum(&self) -> T {
        self.devices.iter().map(|d| d.theta).sum()
    }
}

