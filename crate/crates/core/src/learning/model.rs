use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(T::zero()),
        }
    }

    #[inline]
    fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Fully connected layer `y = act(W x + b)`, `W` stored row-major as
/// `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

/// Gradient of one [`Dense`] layer, same layout as its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseGrad<T> {
    pub fn zeros_like(layer: &Dense<T>) -> Self {
        Self { weights: vec![T::zero(); layer.weights.len()], bias: vec![T::zero(); layer.bias.len()] }
    }

    pub fn norm_sq(&self) -> T {
        self.weights.iter().chain(&self.bias).map(|&g| g * g).sum()
    }

    pub fn flatten_into(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }
}

/// Activations cached by a forward pass, needed for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input of every layer followed by the network output.
    pub activations: Vec<Vec<T>>,
    /// Pre-activation of every layer.
    pub pre: Vec<Vec<T>>,
    pub batch: usize,
}

/// Dot product with four interleaved partial sums, in a fixed order.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] = acc[j] + x[j] * y[j];
        }
    }
    let tail = ra.iter().zip(rb).fold(T::zero(), |s, (&x, &y)| s + x * y);
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl<T: Scalar> Dense<T> {
    /// Weights uniform in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn xavier<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| T::lit(rng.random_range(-limit..=limit))).collect();
        Self { inputs, outputs, weights, bias: vec![T::zero(); outputs], activation }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Returns `(pre-activation, output)` for a row-major batch.
    pub fn forward(&self, x: &[T], batch: usize) -> (Vec<T>, Vec<T>) {
        debug_assert_eq!(x.len(), batch * self.inputs);
        let mut pre = Vec::with_capacity(batch * self.outputs);
        for row in x.chunks_exact(self.inputs) {
            for (w, &b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
                pre.push(b + dot(w, row));
            }
        }
        let out = pre.iter().map(|&z| self.activation.apply(z)).collect();
        (pre, out)
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input.
    pub fn backward(&self, x: &[T], pre: &[T], grad_out: &[T], grad: &mut DenseGrad<T>) -> Vec<T> {
        let mut grad_in = vec![T::zero(); x.len()];
        for ((row, z), (g, gi)) in x
            .chunks_exact(self.inputs)
            .zip(pre.chunks_exact(self.outputs))
            .zip(grad_out.chunks_exact(self.outputs).zip(grad_in.chunks_exact_mut(self.inputs)))
        {
            for o in 0..self.outputs {
                let dz = g[o] * self.activation.derivative(z[o]);
                if dz == T::zero() {
                    continue;
                }
                grad.bias[o] = grad.bias[o] + dz;
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let gw = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
                for (gw, &x) in gw.iter_mut().zip(row) {
                    *gw = *gw + dz * x;
                }
                for (gi, &wi) in gi.iter_mut().zip(w) {
                    *gi = *gi + dz * wi;
                }
            }
        }
        grad_in
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// MLP whose first `split_depth` layers are the shared feature extractor
/// `u`; the rest form the local predictor `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitModel<T> {
    pub layers: Vec<Dense<T>>,
    pub split_depth: usize,
}

impl<T: Scalar> SplitModel<T> {
    /// `sizes = [input, hidden..., classes]`; hidden layers use ReLU, the
    /// last layer is linear.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], split_depth: usize, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("layer sizes {sizes:?} need at least two positive entries")));
        }
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::xavier(w[0], w[1], if i + 1 == n { Activation::Identity } else { Activation::Relu }, rng))
            .collect();
        Self::from_layers(layers, split_depth)
    }

    pub fn from_layers(layers: Vec<Dense<T>>, split_depth: usize) -> Result<Self> {
        if split_depth > layers.len() {
            return Err(Error::Config(format!("split depth {split_depth} exceeds {} layers", layers.len())));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Config(format!("layer {i} has inconsistent parameter shapes")));
            }
        }
        if let Some(i) = layers.windows(2).position(|w| w[0].outputs != w[1].inputs) {
            return Err(Error::Config(format!("layers {i} and {} do not chain", i + 1)));
        }
        Ok(Self { layers, split_depth })
    }

    pub fn extractor(&self) -> &[Dense<T>] {
        &self.layers[..self.split_depth]
    }

    pub fn predictor(&self) -> &[Dense<T>] {
        &self.layers[self.split_depth..]
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        count(&self.layers)
    }

    pub fn extractor_param_count(&self) -> usize {
        count(self.extractor())
    }

    /// Upload size of the extractor at `bits` per parameter.
    pub fn payload_bits(&self, bits: usize) -> usize {
        self.extractor_param_count() * bits
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        forward(&self.layers, x, batch).activations.pop().unwrap_or_default()
    }
}

pub(crate) fn count<T: Scalar>(layers: &[Dense<T>]) -> usize {
    layers.iter().map(Dense::param_count).sum()
}

/// Forward pass through a layer stack, keeping what backward needs.
pub fn forward<T: Scalar>(layers: &[Dense<T>], x: &[T], batch: usize) -> ForwardCache<T> {
    let mut activations = Vec::with_capacity(layers.len() + 1);
    let mut pre = Vec::with_capacity(layers.len());
    activations.push(x.to_vec());
    for l in layers {
        let (z, a) = l.forward(activations.last().expect("input present"), batch);
        pre.push(z);
        activations.push(a);
    }
    ForwardCache { activations, pre, batch }
}

/// Parameter gradients of all layers given the gradient at the output.
pub fn backward<T: Scalar>(layers: &[Dense<T>], cache: &ForwardCache<T>, grad_out: Vec<T>) -> Vec<DenseGrad<T>> {
    let mut grads: Vec<DenseGrad<T>> = layers.iter().map(DenseGrad::zeros_like).collect();
    let mut g = grad_out;
    for (i, l) in layers.iter().enumerate().rev() {
        g = l.backward(&cache.activations[i], &cache.pre[i], &g, &mut grads[i]);
    }
    grads
}

/// `buf ← μ·buf + g; p ← p − η·buf` on every parameter.
pub fn momentum_step<T: Scalar>(layers: &mut [Dense<T>], grads: &[DenseGrad<T>], buffers: &mut [DenseGrad<T>], eta: T, mu: T) {
    for ((l, g), b) in layers.iter_mut().zip(grads).zip(buffers.iter_mut()) {
        let gs = g.weights.iter().chain(&g.bias);
        let bs = b.weights.iter_mut().chain(b.bias.iter_mut());
        for ((p, &gi), bi) in l.params_mut().zip(gs).zip(bs) {
            *bi = mu * *bi + gi;
            *p = *p - eta * *bi;
        }
    }
}

/// All parameters of a layer stack as one vector (weights then bias, layer
/// by layer).
pub fn flatten<T: Scalar>(layers: &[Dense<T>]) -> Vec<T> {
    let mut out = Vec::with_capacity(count(layers));
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.bias);
    }
    out
}
