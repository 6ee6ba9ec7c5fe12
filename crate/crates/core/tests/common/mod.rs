#![allow(dead_code)]

use pmafl::resopt::{min_bandwidth, AllocationInput};
use pmafl::sysmodel::min_comp_time;
use pmafl::{ChannelRealization, DeviceProfile, PopulationSpec, SystemConfig};

/// A feasible allocation instance: all devices compute at full speed and
/// their minimum shares leave room in the band.
pub struct Instance {
    pub profiles: Vec<DeviceProfile<f64>>,
    pub gains: ChannelRealization<f64>,
    pub queues: Vec<f64>,
    pub cfg: SystemConfig<f64>,
    pub scheduled: Vec<usize>,
    pub t_comp: Vec<f64>,
}

impl Instance {
    pub fn input(&self, v: f64) -> AllocationInput<'_, f64> {
        AllocationInput {
            scheduled: &self.scheduled,
            queues: &self.queues,
            gains: &self.gains,
            profiles: &self.profiles,
            cfg: &self.cfg,
            v,
        }
    }

    pub fn min_shares(&self) -> Vec<f64> {
        self.scheduled
            .iter()
            .zip(&self.t_comp)
            .map(|(&k, &t)| min_bandwidth(&self.profiles[k], self.gains.gains[k], self.cfg.t_max - t, &self.cfg).unwrap())
            .collect()
    }
}

/// Searches seeds from `seed` upward until the `n`-device instance is
/// feasible with room to spare.
pub fn instance(seed: u64, n: usize, queues: impl Fn(usize) -> f64) -> Instance {
    for s in seed.. {
        let spec = PopulationSpec { data_min: 50, data_max: 150, cycles_per_sample: 2e6, ..PopulationSpec::desk_scale(n, 100) };
        let profiles: Vec<DeviceProfile<f64>> = spec.generate(s).unwrap();
        let cfg = SystemConfig { rounds: 100, ..SystemConfig::default() };
        let gains = ChannelRealization::sample(&profiles, &cfg, s, 0);
        let t_comp: Vec<f64> = profiles.iter().map(|p| min_comp_time(p, cfg.local_iters)).collect();
        let inst = Instance {
            queues: (0..n).map(&queues).collect(),
            scheduled: (0..n).collect(),
            profiles,
            gains,
            cfg,
            t_comp,
        };
        let ok = inst
            .scheduled
            .iter()
            .zip(&inst.t_comp)
            .all(|(&k, &t)| min_bandwidth(&inst.profiles[k], inst.gains.gains[k], inst.cfg.t_max - t, &inst.cfg).is_ok());
        if ok && inst.min_shares().iter().sum::<f64>() < 0.9 {
            return inst;
        }
    }
    unreachable!()
}
