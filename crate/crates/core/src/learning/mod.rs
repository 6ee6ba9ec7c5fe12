//! Split MLP with partial model aggregation: devices train the whole model
//! locally but upload and average only the leading `split_depth` layers.

mod data;
mod learner;
mod loss;
mod model;

pub use data::{
    idx_samples, partition_non_iid, personalized_test_shards, read_idx_images, read_idx_labels, GaussianMixture, Samples,
    ShardedDataset,
};
pub use learner::{
    aggregate, evaluate, local_update, loss_and_grad, DeviceLearner, Evaluation, GradStats, LocalUpdate, TrainConfig,
    DEFAULT_BATCH, FULL_BATCH_LIMIT,
};
pub use loss::{argmax, batch_cross_entropy, cross_entropy_loss};
pub use model::{backward, flatten, forward, momentum_step, Activation, Dense, DenseGrad, ForwardCache, SplitModel};
