//! Seeded generation of device populations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamDomain};
use crate::scalar::Scalar;
use crate::sysmodel::DeviceProfile;

/// Devices dropped uniformly in a square cell with the server at its centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationSpec {
    pub count: usize,
    /// Side of the square cell, m.
    pub cell_side: f64,
    /// Distances are clamped below at this value, m.
    pub min_distance: f64,
    /// Inclusive range of local sample counts.
    pub data_min: usize,
    pub data_max: usize,
    pub cycles_per_sample: f64,
    pub f_max: f64,
    pub p_max: f64,
    pub kappa: f64,
    /// Energy budget over the whole horizon, J.
    pub energy_budget: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            count: 100,
            cell_side: 500.0,
            min_distance: 1.0,
            data_min: 600,
            data_max: 600,
            cycles_per_sample: 550_346.0,
            f_max: 1e9,
            p_max: 1.0,
            kappa: 5e-27,
            energy_budget: 0.1,
        }
    }
}

impl PopulationSpec {
    /// Small population for scheduling studies over `rounds` rounds: 50 to
    /// 150 samples of 2e6 cycles each and a 1 J allowance per round, so that
    /// a scheduled round costs about as much as one round of budget.
    pub fn desk_scale(count: usize, rounds: usize) -> Self {
        Self {
            count,
            data_min: 50,
            data_max: 150,
            cycles_per_sample: 2e6,
            energy_budget: rounds as f64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("devices.count must be positive".into()));
        }
        if self.data_min == 0 || self.data_min > self.data_max {
            return Err(Error::Config(format!("invalid data range [{}, {}]", self.data_min, self.data_max)));
        }
        let positive = [
            ("cell_side", self.cell_side),
            ("min_distance", self.min_distance),
            ("cycles_per_sample", self.cycles_per_sample),
            ("f_max", self.f_max),
            ("p_max", self.p_max),
            ("kappa", self.kappa),
            ("energy_budget", self.energy_budget),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("devices.{name} must be finite and positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Profiles with ids `0..count`; device `k` draws from its own stream,
    /// so growing `count` keeps the existing devices unchanged.
    pub fn generate<T: Scalar>(&self, seed: u64) -> Result<Vec<DeviceProfile<T>>> {
        self.validate()?;
        let half = self.cell_side / 2.0;
        Ok((0..self.count)
            .map(|id| {
                let mut rng = stream(seed, StreamDomain::Devices, id as u64, 0);
                let (x, y): (f64, f64) = (rng.random_range(-half..=half), rng.random_range(-half..=half));
                let data_size = rng.random_range(self.data_min..=self.data_max);
                DeviceProfile {
                    id,
                    data_size,
                    cycles_per_sample: T::lit(self.cycles_per_sample),
                    f_max: T::lit(self.f_max),
                    p_max: T::lit(self.p_max),
                    energy_budget: T::lit(self.energy_budget),
                    distance: T::lit(x.hypot(y).max(self.min_distance)),
                    kappa: T::lit(self.kappa),
                }
            })
            .collect())
    }
}
