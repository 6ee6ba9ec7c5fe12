use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::data::Samples;
use super::loss::{argmax, batch_cross_entropy};
use super::model::{backward, forward, momentum_step, Dense, DenseGrad};

/// Shards up to this size are used whole as the mini-batch.
pub const FULL_BATCH_LIMIT: usize = 64;
pub const DEFAULT_BATCH: usize = 32;

/// Optimiser settings shared by all devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig<T> {
    pub eta_u: T,
    pub eta_v: T,
    pub momentum: T,
    /// SGD steps per round.
    pub tau: usize,
    /// Mini-batch size for shards larger than [`FULL_BATCH_LIMIT`].
    pub batch: usize,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self { eta_u: T::lit(0.05), eta_v: T::lit(0.05), momentum: T::lit(0.9), tau: 5, batch: DEFAULT_BATCH }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_u >= T::zero() && self.eta_v >= T::zero() && self.eta_u.is_finite() && self.eta_v.is_finite()) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if !(self.momentum >= T::zero() && self.momentum < T::one()) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One device: its private predictor, its shard and its optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceLearner<T> {
    pub id: usize,
    pub predictor: Vec<Dense<T>>,
    pub data: Samples<T>,
    pub train: TrainConfig<T>,
    /// Momentum of the predictor; it persists across rounds.
    pub v_momentum: Vec<DenseGrad<T>>,
}

impl<T: Scalar> DeviceLearner<T> {
    pub fn new(id: usize, predictor: Vec<Dense<T>>, data: Samples<T>, train: TrainConfig<T>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Data(format!("device {id} has no training data")));
        }
        train.validate()?;
        let v_momentum = predictor.iter().map(DenseGrad::zeros_like).collect();
        Ok(Self { id, predictor, data, train, v_momentum })
    }

    pub fn data_size(&self) -> usize {
        self.data.len()
    }
}

/// Result of one device's local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate<T> {
    pub id: usize,
    pub extractor: Vec<Dense<T>>,
    pub data_size: usize,
    pub stats: GradStats<T>,
}

/// Gradient norms and losses observed during local training.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradStats<T> {
    /// `‖∇_u‖²` and `‖∇_v‖²` of the first mini-batch.
    pub u_norm_sq: T,
    pub v_norm_sq: T,
    pub first_loss: T,
    pub last_loss: T,
}

fn batch_indices<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<usize> {
    if n <= FULL_BATCH_LIMIT {
        return (0..n).collect();
    }
    let mut idx = index::sample(rng, n, batch.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Loss and gradients of a layer stack on a batch of samples.
pub fn loss_and_grad<T: Scalar>(layers: &[Dense<T>], data: &Samples<T>, idx: &[usize]) -> (T, Vec<DenseGrad<T>>) {
    let mut x = Vec::with_capacity(idx.len() * data.dim);
    let mut y = Vec::with_capacity(idx.len());
    for &i in idx {
        x.extend_from_slice(data.row(i));
        y.push(data.labels[i]);
    }
    let cache = forward(layers, &x, idx.len());
    let (loss, g) = batch_cross_entropy(cache.activations.last().expect("output"), &y);
    (loss, backward(layers, &cache, g))
}

/// `τ` mini-batch SGD-with-momentum steps on `(u_global, v_k)`.
///
/// The extractor momentum starts from zero because `u` has just been
/// replaced by the broadcast; the predictor momentum carries over. The
/// learner's predictor is updated in place and the trained extractor is
/// returned for aggregation.
pub fn local_update<T: Scalar, R: Rng + ?Sized>(
    u_global: &[Dense<T>],
    learner: &mut DeviceLearner<T>,
    rng: &mut R,
) -> Result<LocalUpdate<T>> {
    if learner.data.is_empty() {
        return Err(Error::Data(format!("device {} has an empty batch", learner.id)));
    }
    let depth = u_global.len();
    let mut layers: Vec<Dense<T>> = u_global.iter().cloned().chain(learner.predictor.iter().cloned()).collect();
    let mut u_buf: Vec<DenseGrad<T>> = u_global.iter().map(DenseGrad::zeros_like).collect();
    let cfg = learner.train;
    let mut stats = GradStats::default();

    for step in 0..cfg.tau {
        let idx = batch_indices(learner.data.len(), cfg.batch, rng);
        let (loss, grads) = loss_and_grad(&layers, &learner.data, &idx);
        if step == 0 {
            stats.first_loss = loss;
            stats.u_norm_sq = grads[..depth].iter().map(DenseGrad::norm_sq).sum();
            stats.v_norm_sq = grads[depth..].iter().map(DenseGrad::norm_sq).sum();
        }
        stats.last_loss = loss;
        let (u_layers, v_layers) = layers.split_at_mut(depth);
        momentum_step(u_layers, &grads[..depth], &mut u_buf, cfg.eta_u, cfg.momentum);
        momentum_step(v_layers, &grads[depth..], &mut learner.v_momentum, cfg.eta_v, cfg.momentum);
    }

    learner.predictor = layers.split_off(depth);
    Ok(LocalUpdate { id: learner.id, extractor: layers, data_size: learner.data.len(), stats })
}

/// Data-weighted average of the uploaded extractors, reduced in ascending
/// id order. `None` when nothing was uploaded, meaning `u` stays as is.
///
/// A running mean is used, so identical uploads reproduce their value
/// exactly.
pub fn aggregate<T: Scalar>(updates: &[LocalUpdate<T>]) -> Result<Option<Vec<Dense<T>>>> {
    let mut order: Vec<&LocalUpdate<T>> = updates.iter().collect();
    order.sort_by_key(|u| u.id);
    if order.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(Error::DegenerateInput("duplicate device in aggregation".into()));
    }
    let Some((first, rest)) = order.split_first() else {
        return Ok(None);
    };
    let mut mean = first.extractor.clone();
    let mut weight = T::from_count(first.data_size);
    for up in rest {
        if up.extractor.len() != mean.len()
            || up.extractor.iter().zip(&mean).any(|(a, b)| a.weights.len() != b.weights.len() || a.bias.len() != b.bias.len())
        {
            return Err(Error::DegenerateInput(format!("device {} uploaded an incompatible extractor", up.id)));
        }
        let w = T::from_count(up.data_size);
        weight = weight + w;
        let share = w / weight;
        for (m, l) in mean.iter_mut().zip(&up.extractor) {
            for (a, &b) in m.weights.iter_mut().zip(&l.weights).chain(m.bias.iter_mut().zip(&l.bias)) {
                *a = *a + share * (b - *a);
            }
        }
    }
    Ok(Some(mean))
}

/// Accuracy and loss of the personalised models `[u, v_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation<T> {
    pub per_device_accuracy: Vec<T>,
    /// Unweighted mean of the per-device accuracies.
    pub mean_accuracy: T,
    /// Correct predictions over all test samples.
    pub pooled_accuracy: T,
    /// `(1/D) Σ D_k F_k` on the training shards.
    pub global_loss: T,
}

fn predict_stats<T: Scalar>(layers: &[Dense<T>], data: &Samples<T>) -> (T, usize) {
    if data.is_empty() {
        return (T::zero(), 0);
    }
    let cache = forward(layers, &data.features, data.len());
    let logits = cache.activations.last().expect("output");
    let classes = logits.len() / data.len();
    let (loss, _) = batch_cross_entropy(logits, &data.labels);
    let correct = logits.chunks_exact(classes).zip(&data.labels).filter(|(row, &y)| argmax(row) == y).count();
    (loss, correct)
}

/// Evaluates every device with the shared extractor and its own predictor.
pub fn evaluate<T: Scalar>(u: &[Dense<T>], learners: &[DeviceLearner<T>], test: &[Samples<T>]) -> Result<Evaluation<T>> {
    if learners.len() != test.len() {
        return Err(Error::DegenerateInput(format!("{} learners but {} test shards", learners.len(), test.len())));
    }
    let mut per_device = Vec::with_capacity(learners.len());
    let (mut loss_sum, mut data) = (T::zero(), 0usize);
    let (mut correct, mut seen) = (0usize, 0usize);
    for (l, t) in learners.iter().zip(test) {
        let layers: Vec<Dense<T>> = u.iter().chain(&l.predictor).cloned().collect();
        let (train_loss, _) = predict_stats(&layers, &l.data);
        loss_sum = loss_sum + T::from_count(l.data.len()) * train_loss;
        data += l.data.len();
        let (_, c) = predict_stats(&layers, t);
        correct += c;
        seen += t.len();
        per_device.push(if t.is_empty() { T::zero() } else { T::from_count(c) / T::from_count(t.len()) });
    }
    let ratio = |a: T, b: usize| if b == 0 { T::zero() } else { a / T::from_count(b) };
    Ok(Evaluation {
        mean_accuracy: ratio(per_device.iter().copied().sum(), per_device.len()),
        pooled_accuracy: ratio(T::from_count(correct), seen),
        global_loss: ratio(loss_sum, data),
        per_device_accuracy: per_device,
    })
}
