//! Simulation and optimisation toolkit for wireless federated learning with
//! partial model aggregation.
//!
//! Devices share only the leading layers of a split MLP (the feature
//! extractor) and keep the trailing layers (the predictor) local. Which
//! devices upload in a round, how the band is split among them, and how each
//! divides the deadline between computing and transmitting is decided online
//! by a drift-plus-penalty scheduler over per-device energy queues.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix the precision.

pub mod bounds;
pub mod error;
pub mod learning;
pub mod population;
pub mod resopt;
pub mod rng;
pub mod scalar;
pub mod scheduler;
pub mod sysmodel;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use bounds::{BoundConstants, ScheduleTrace};
pub use learning::{DeviceLearner, ShardedDataset, SplitModel};
pub use population::PopulationSpec;
pub use resopt::{Allocation, AllocationInput, SolverOptions};
pub use scheduler::{ScheduleOutcome, VirtualQueueState};
pub use sysmodel::{ChannelRealization, DeviceProfile, SystemConfig};

pub type DeviceProfileF64 = DeviceProfile<f64>;
pub type SystemConfigF64 = SystemConfig<f64>;
pub type ChannelRealizationF64 = ChannelRealization<f64>;
pub type AllocationF64 = Allocation<f64>;
pub type SolverOptionsF64 = SolverOptions<f64>;
pub type VirtualQueueStateF64 = VirtualQueueState<f64>;
pub type ScheduleOutcomeF64 = ScheduleOutcome<f64>;
pub type BoundConstantsF64 = BoundConstants<f64>;
pub type SplitModelF64 = SplitModel<f64>;
pub type DeviceLearnerF64 = DeviceLearner<f64>;

pub type DeviceProfileF32 = DeviceProfile<f32>;
pub type SystemConfigF32 = SystemConfig<f32>;
pub type SplitModelF32 = SplitModel<f32>;
pub type DeviceLearnerF32 = DeviceLearner<f32>;
