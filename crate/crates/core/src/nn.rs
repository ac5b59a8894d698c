//! Minimal fully-connected network engine.
//!
//! Supports exactly what the autoencoder + classifier model needs: dense
//! layers with relu / tanh / identity / softmax activations, mean-squared
//! error and weighted cross-entropy losses, reverse-mode gradients, and
//! Adam or plain SGD updates. Everything is `f64` and bit-reproducible for
//! a fixed seed.
//!
//! Conventions:
//!
//! * Batches are row-major: row = sample, column = feature.
//! * A layer's weight matrix is `input_dim x output_dim`, so the forward
//!   map is `a_out = act(a_in * W + b)`.
//! * Softmax is only allowed on a final layer, and its backward pass is
//!   folded into the cross-entropy gradient: for a softmax final layer,
//!   [`backward`] expects the incoming gradient to be taken with respect to
//!   the softmax *input* (which is what [`cross_entropy_loss`] returns).
//!   For every other activation the incoming gradient is with respect to the
//!   layer's output.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::tensor::Tensor2;

/// Probabilities are clamped to at least this value inside the cross-entropy
/// log, keeping the loss finite when a class probability underflows to zero.
pub const CE_PROB_FLOOR: f64 = 1e-12;

/// Element-wise nonlinearity applied after a dense layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    /// Identity; used on regression outputs such as the decoder's final layer.
    Linear,
    /// Row-wise softmax; only valid on a network's final layer.
    Softmax,
}

/// Shape and activation of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }
}

/// One dense layer: weights (`input_dim x output_dim`), biases, activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor2,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Parameters of a multi-layer perceptron, along with how they were created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
    /// Seed used by [`init_params`]; kept for provenance in checkpoints.
    pub init_seed: u64,
}

impl MlpParams {
    /// Width of the batch rows this network consumes.
    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// Width of the batch rows this network produces.
    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Checks structural invariants: non-empty, chained dims, positive dims,
    /// softmax only on the final layer, finite parameters.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network must have at least one layer".into()));
        }
        let mut prev_out = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let (ins, outs) = (layer.input_dim(), layer.output_dim());
            if ins == 0 || outs == 0 {
                return Err(Error::Config(format!(
                    "layer {i} has zero-sized dimension ({ins} -> {outs})"
                )));
            }
            if let Some(p) = prev_out {
                if ins != p {
                    return Err(Error::Config(format!(
                        "layer {i} expects {ins} inputs but layer {} produces {p}",
                        i - 1
                    )));
                }
            }
            if layer.bias.len() != outs {
                return Err(Error::Shape(format!(
                    "layer {i} bias has {} entries, expected {outs}",
                    layer.bias.len()
                )));
            }
            if layer.activation == Activation::Softmax && i + 1 != self.layers.len() {
                return Err(Error::Config(format!(
                    "softmax is only supported on the final layer, found it on layer {i}"
                )));
            }
            layer.weights.ensure_finite(&format!("layer {i} weights"))?;
            ensure_finite(&layer.bias, &format!("layer {i} bias"))?;
            prev_out = Some(outs);
        }
        Ok(())
    }

    /// Layer shapes `(input_dim, output_dim)`, used to match caches/gradients.
    fn dims(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.input_dim(), l.output_dim()))
            .collect()
    }
}

/// Initialises parameters for the given layer stack.
///
/// Weights are drawn uniformly from `[-limit, limit]` with a fan-scaled
/// limit: `sqrt(6 / fan_in)` for relu layers and
/// `sqrt(6 / (fan_in + fan_out))` for all others. Biases start at zero.
/// The same `(specs, seed)` pair always produces identical parameters.
pub fn init_params(specs: &[LayerSpec], seed: u64) -> Result<MlpParams> {
    if specs.is_empty() {
        return Err(Error::Config("network must have at least one layer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        if spec.input_dim == 0 || spec.output_dim == 0 {
            return Err(Error::Config(format!(
                "layer dimensions must be positive, got {} -> {}",
                spec.input_dim, spec.output_dim
            )));
        }
        let fan_in = spec.input_dim as f64;
        let fan_out = spec.output_dim as f64;
        let limit = match spec.activation {
            Activation::Relu => (6.0 / fan_in).sqrt(),
            _ => (6.0 / (fan_in + fan_out)).sqrt(),
        };
        let dist = Uniform::new_inclusive(-limit, limit);
        let data: Vec<f64> = (0..spec.input_dim * spec.output_dim)
            .map(|_| dist.sample(&mut rng))
            .collect();
        layers.push(DenseLayer {
            weights: Tensor2::new(spec.input_dim, spec.output_dim, data)?,
            bias: vec![0.0; spec.output_dim],
            activation: spec.activation,
        });
    }
    let params = MlpParams {
        layers,
        init_seed: seed,
    };
    params.validate()?;
    Ok(params)
}

/// Intermediate values captured by [`forward`] for use by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch; `activations[l+1]` is layer `l`'s
    /// output.
    activations: Vec<Tensor2>,
    /// `pre_activations[l]` is layer `l`'s affine output before nonlinearity.
    pre_activations: Vec<Tensor2>,
    /// Layer shapes at forward time, to detect stale caches.
    dims: Vec<(usize, usize)>,
}

impl ForwardCache {
    /// The network output this cache was produced with.
    pub fn output(&self) -> &Tensor2 {
        &self.activations[self.activations.len() - 1]
    }
}

fn apply_activation(z: &Tensor2, activation: Activation) -> Tensor2 {
    match activation {
        Activation::Relu => z.map(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Tanh => z.map(f64::tanh),
        Activation::Linear => z.clone(),
        Activation::Softmax => {
            let mut out = z.clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            out
        }
    }
}

/// Runs `batch` through the network, returning the output batch and a cache
/// of intermediates for [`backward`].
pub fn forward(params: &MlpParams, batch: &Tensor2) -> Result<(Tensor2, ForwardCache)> {
    params.validate()?;
    if batch.rows() == 0 {
        return Err(Error::Shape("forward: batch has zero rows".into()));
    }
    if batch.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "forward: batch width {} does not match network input {}",
            batch.cols(),
            params.input_dim()
        )));
    }
    batch.ensure_finite("forward input batch")?;

    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    activations.push(batch.clone());
    for (i, layer) in params.layers.iter().enumerate() {
        let prev = &activations[i];
        let mut z = prev.matmul(&layer.weights)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        let a = apply_activation(&z, layer.activation);
        pre_activations.push(z);
        activations.push(a);
    }
    let output = activations[activations.len() - 1].clone();
    output.ensure_finite("forward output")?;
    let cache = ForwardCache {
        activations,
        pre_activations,
        dims: params.dims(),
    };
    Ok((output, cache))
}

/// Mean squared error over all entries, and its gradient w.r.t. `prediction`.
///
/// `loss = sum((p - t)^2) / (rows * cols)`, `grad = 2 (p - t) / (rows * cols)`.
pub fn mse_loss(prediction: &Tensor2, target: &Tensor2) -> Result<(f64, Tensor2)> {
    if prediction.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "mse: prediction {}x{} vs target {}x{}",
            prediction.rows(),
            prediction.cols(),
            target.rows(),
            target.cols()
        )));
    }
    let n = (prediction.rows() * prediction.cols()) as f64;
    let mut loss = 0.0;
    let mut grad = prediction.clone();
    for (g, (&p, &t)) in grad
        .data_mut()
        .iter_mut()
        .zip(prediction.data().iter().zip(target.data()))
    {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("mse loss is not finite: {loss}")));
    }
    Ok((loss, grad))
}

fn validate_one_hot(targets: &Tensor2) -> Result<()> {
    for r in 0..targets.rows() {
        let row = targets.row(r);
        let mut ones = 0usize;
        for &v in row {
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return Err(Error::Data(format!(
                    "target row {r} is not one-hot: contains {v}"
                )));
            }
        }
        if ones != 1 {
            return Err(Error::Data(format!(
                "target row {r} is not one-hot: {ones} entries equal 1"
            )));
        }
    }
    Ok(())
}

fn validate_probabilities(probs: &Tensor2) -> Result<()> {
    for r in 0..probs.rows() {
        let row = probs.row(r);
        let mut sum = 0.0;
        for &v in row {
            if !(0.0..=1.0 + 1e-9).contains(&v) {
                return Err(Error::Numeric(format!(
                    "probability row {r} contains {v}, expected a softmax output"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::Numeric(format!(
                "probability row {r} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Per-sample cross-entropy `-ln(p[true class] + floor)` for softmax outputs.
pub fn cross_entropy_per_sample(probs: &Tensor2, targets_one_hot: &Tensor2) -> Result<Vec<f64>> {
    if probs.shape() != targets_one_hot.shape() {
        return Err(Error::Shape(format!(
            "cross-entropy: probs {}x{} vs targets {}x{}",
            probs.rows(),
            probs.cols(),
            targets_one_hot.rows(),
            targets_one_hot.cols()
        )));
    }
    validate_probabilities(probs)?;
    validate_one_hot(targets_one_hot)?;
    let mut out = Vec::with_capacity(probs.rows());
    for r in 0..probs.rows() {
        let prow = probs.row(r);
        let trow = targets_one_hot.row(r);
        let mut p_true = 0.0;
        for (&p, &t) in prow.iter().zip(trow) {
            if t == 1.0 {
                p_true = p;
            }
        }
        out.push(-(p_true + CE_PROB_FLOOR).ln());
    }
    Ok(out)
}

/// Weighted mean cross-entropy over a batch of softmax outputs, and its
/// gradient with respect to the softmax *input* (logits).
///
/// `loss = sum_i w_i * l_i / n` with `l_i = -ln(p[i, y_i] + floor)`, and
/// `grad[i, c] = w_i * (p[i, c] - y[i, c]) / n` — the usual softmax +
/// cross-entropy closed form, scaled per sample. Weights must be finite and
/// non-negative; pass all-ones for an unweighted mean.
pub fn cross_entropy_loss(
    probs: &Tensor2,
    targets_one_hot: &Tensor2,
    sample_weights: &[f64],
) -> Result<(f64, Tensor2)> {
    if sample_weights.len() != probs.rows() {
        return Err(Error::Shape(format!(
            "cross-entropy: {} sample weights for {} rows",
            sample_weights.len(),
            probs.rows()
        )));
    }
    ensure_finite(sample_weights, "cross-entropy sample weights")?;
    if let Some(w) = sample_weights.iter().find(|w| **w < 0.0) {
        return Err(Error::Config(format!(
            "cross-entropy sample weights must be non-negative, got {w}"
        )));
    }
    let per_sample = cross_entropy_per_sample(probs, targets_one_hot)?;
    let n = probs.rows() as f64;
    let mut loss = 0.0;
    for (l, w) in per_sample.iter().zip(sample_weights) {
        loss += l * w;
    }
    loss /= n;
    let mut grad = Tensor2::zeros(probs.rows(), probs.cols());
    for (r, &w) in sample_weights.iter().enumerate() {
        let prow = probs.row(r);
        let trow = targets_one_hot.row(r);
        let grow = grad.row_mut(r);
        for ((g, &p), &t) in grow.iter_mut().zip(prow).zip(trow) {
            *g = w * (p - t) / n;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "cross-entropy loss is not finite: {loss}"
        )));
    }
    Ok((loss, grad))
}

/// Gradients for every layer of an MLP, same shapes as the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

/// Gradient of one dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub d_weights: Tensor2,
    pub d_bias: Vec<f64>,
}

impl MlpGrads {
    /// Zero gradients shaped like `params`.
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    d_weights: Tensor2::zeros(l.input_dim(), l.output_dim()),
                    d_bias: vec![0.0; l.output_dim()],
                })
                .collect(),
        }
    }

    /// Adds `other` element-wise; shapes must match.
    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape(format!(
                "gradient add: {} layers vs {}",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.d_weights = a.d_weights.add(&b.d_weights)?;
            if a.d_bias.len() != b.d_bias.len() {
                return Err(Error::Shape("gradient add: bias lengths differ".into()));
            }
            for (x, y) in a.d_bias.iter_mut().zip(&b.d_bias) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Multiplies every gradient entry by `s`.
    pub fn scale(&mut self, s: f64) {
        for layer in &mut self.layers {
            layer.d_weights.scale_in_place(s);
            for b in &mut layer.d_bias {
                *b *= s;
            }
        }
    }
}

/// Reverse-mode pass through the network.
///
/// `output_grad` is the loss gradient with respect to the network output —
/// except when the final layer is softmax, in which case it must be the
/// gradient with respect to the softmax input (see [`cross_entropy_loss`]).
/// Returns the parameter gradients and the gradient with respect to the
/// input batch, so callers can chain networks (e.g. feed a decoder's input
/// gradient back into an encoder).
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    output_grad: &Tensor2,
) -> Result<(MlpGrads, Tensor2)> {
    if cache.dims != params.dims() {
        return Err(Error::Internal(
            "backward: forward cache does not match these parameters \
             (cache is stale or belongs to a different network)"
                .into(),
        ));
    }
    let last = params.layers.len() - 1;
    let out_shape = cache.activations[last + 1].shape();
    if output_grad.shape() != out_shape {
        return Err(Error::Shape(format!(
            "backward: output gradient {}x{} vs cached output {}x{}",
            output_grad.rows(),
            output_grad.cols(),
            out_shape.0,
            out_shape.1
        )));
    }
    output_grad.ensure_finite("backward output gradient")?;

    let mut grads = Vec::with_capacity(params.layers.len());
    let mut d_out = output_grad.clone();
    for (i, layer) in params.layers.iter().enumerate().rev() {
        let z = &cache.pre_activations[i];
        let a = &cache.activations[i + 1];
        // Gradient at the affine output of this layer.
        let d_z = match layer.activation {
            Activation::Relu => {
                let mut g = d_out.clone();
                for (gv, &zv) in g.data_mut().iter_mut().zip(z.data()) {
                    if zv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g
            }
            Activation::Tanh => {
                let mut g = d_out.clone();
                for (gv, &av) in g.data_mut().iter_mut().zip(a.data()) {
                    *gv *= 1.0 - av * av;
                }
                g
            }
            Activation::Linear => d_out,
            // Softmax gradients arrive already folded with the loss.
            Activation::Softmax => d_out,
        };
        let input = &cache.activations[i];
        let d_weights = input.matmul_transpose_a(&d_z)?;
        let d_bias = d_z.column_sums();
        d_out = d_z.matmul_transpose_b(&layer.weights)?;
        grads.push(LayerGrads { d_weights, d_bias });
    }
    grads.reverse();
    Ok((MlpGrads { layers: grads }, d_out))
}

/// Update rule applied by [`OptimizerState::step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    /// Plain gradient descent: `p -= lr * g`.
    Sgd,
    /// Adam with bias correction.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    /// Adam with the conventional defaults (0.9, 0.999, 1e-8).
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerMoments {
    m_weights: Tensor2,
    v_weights: Tensor2,
    m_bias: Vec<f64>,
    v_bias: Vec<f64>,
}

/// Mutable optimizer state bound to one network's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u64,
    moments: Vec<LayerMoments>,
}

impl OptimizerState {
    /// Creates state shaped for `params`. The learning rate must be finite
    /// and non-negative (zero is allowed and leaves parameters untouched).
    pub fn new(params: &MlpParams, kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {learning_rate}"
            )));
        }
        if let OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
        } = kind
        {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                return Err(Error::Config(format!(
                    "adam betas must lie in [0, 1), got beta1={beta1} beta2={beta2}"
                )));
            }
            // NaN must fail too, so check finiteness before the comparison.
            if !epsilon.is_finite() || epsilon <= 0.0 {
                return Err(Error::Config(format!(
                    "adam epsilon must be positive and finite, got {epsilon}"
                )));
            }
        }
        let moments = params
            .layers
            .iter()
            .map(|l| LayerMoments {
                m_weights: Tensor2::zeros(l.input_dim(), l.output_dim()),
                v_weights: Tensor2::zeros(l.input_dim(), l.output_dim()),
                m_bias: vec![0.0; l.output_dim()],
                v_bias: vec![0.0; l.output_dim()],
            })
            .collect();
        Ok(Self {
            kind,
            learning_rate,
            step_count: 0,
            moments,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to `params` in place, advancing the step counter.
    /// Gradient shapes must match the parameters; non-finite gradients are
    /// rejected without touching the parameters.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
        if grads.layers.len() != params.layers.len() || self.moments.len() != params.layers.len() {
            return Err(Error::Shape(format!(
                "optimizer step: {} gradient layers / {} moment layers for {} parameter layers",
                grads.layers.len(),
                self.moments.len(),
                params.layers.len()
            )));
        }
        for (i, (layer, grad)) in params.layers.iter().zip(&grads.layers).enumerate() {
            if grad.d_weights.shape() != layer.weights.shape()
                || grad.d_bias.len() != layer.bias.len()
            {
                return Err(Error::Shape(format!(
                    "optimizer step: gradient shape mismatch at layer {i}"
                )));
            }
            grad.d_weights
                .ensure_finite(&format!("layer {i} weight gradient"))?;
            ensure_finite(&grad.d_bias, &format!("layer {i} bias gradient"))?;
        }

        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, grad) in params.layers.iter_mut().zip(&grads.layers) {
                    for (p, &g) in layer
                        .weights
                        .data_mut()
                        .iter_mut()
                        .zip(grad.d_weights.data())
                    {
                        *p -= lr * g;
                    }
                    for (p, &g) in layer.bias.iter_mut().zip(&grad.d_bias) {
                        *p -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step_count as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for ((layer, grad), moments) in params
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.moments)
                {
                    for (((p, &g), m), v) in layer
                        .weights
                        .data_mut()
                        .iter_mut()
                        .zip(grad.d_weights.data())
                        .zip(moments.m_weights.data_mut())
                        .zip(moments.v_weights.data_mut())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + epsilon);
                    }
                    for (((p, &g), m), v) in layer
                        .bias
                        .iter_mut()
                        .zip(&grad.d_bias)
                        .zip(&mut moments.m_bias)
                        .zip(&mut moments.v_bias)
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
        assert!(
            (actual - expected).abs() <= tol,
            "{what}: {actual} vs {expected} (tol {tol})"
        );
    }

    fn small_net(seed: u64) -> MlpParams {
        init_params(
            &[
                LayerSpec::new(3, 4, Activation::Relu),
                LayerSpec::new(4, 2, Activation::Tanh),
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = small_net(7);
        let b = small_net(7);
        let c = small_net(8);
        assert_eq!(a, b);
        assert_ne!(a.layers[0].weights, c.layers[0].weights);
    }

    #[test]
    fn init_respects_fan_scaled_bounds_and_zero_bias() {
        let params = init_params(
            &[
                LayerSpec::new(10, 20, Activation::Relu),
                LayerSpec::new(20, 5, Activation::Linear),
            ],
            3,
        )
        .unwrap();
        let relu_limit = (6.0f64 / 10.0).sqrt();
        for &w in params.layers[0].weights.data() {
            assert!(w.abs() <= relu_limit);
        }
        let lin_limit = (6.0f64 / 25.0).sqrt();
        for &w in params.layers[1].weights.data() {
            assert!(w.abs() <= lin_limit);
        }
        assert!(params.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        // Spread check: draws should cover a good part of the range.
        let max = params.layers[0]
            .weights
            .data()
            .iter()
            .cloned()
            .fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(max > 0.5 * relu_limit);
    }

    #[test]
    fn init_rejects_zero_dims_and_empty_stacks() {
        assert!(init_params(&[], 0).is_err());
        assert!(init_params(&[LayerSpec::new(0, 3, Activation::Relu)], 0).is_err());
        assert!(init_params(&[LayerSpec::new(3, 0, Activation::Relu)], 0).is_err());
    }

    #[test]
    fn validate_rejects_mid_stack_softmax_and_broken_chains() {
        let bad = init_params(
            &[
                LayerSpec::new(3, 4, Activation::Softmax),
                LayerSpec::new(4, 2, Activation::Linear),
            ],
            0,
        );
        assert!(bad.is_err());
        let mut params = small_net(0);
        params.layers[1].weights = Tensor2::zeros(5, 2); // breaks the 4 -> 5 chain
        assert!(params.validate().is_err());
    }

    #[test]
    fn forward_rejects_wrong_width_and_empty_batches() {
        let params = small_net(1);
        assert!(forward(&params, &Tensor2::zeros(2, 5)).is_err());
        let empty = Tensor2::new(0, 3, vec![]).unwrap();
        assert!(forward(&params, &empty).is_err());
    }

    #[test]
    fn forward_matches_hand_computed_single_layer() {
        // 2 -> 2 linear layer with known weights/bias.
        let params = MlpParams {
            layers: vec![DenseLayer {
                weights: Tensor2::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
                bias: vec![0.5, -0.5],
                activation: Activation::Linear,
            }],
            init_seed: 0,
        };
        let x = Tensor2::new(1, 2, vec![1.0, 1.0]).unwrap();
        let (y, _) = forward(&params, &x).unwrap();
        assert_eq!(y.data(), &[1.0 + 3.0 + 0.5, 2.0 + 4.0 - 0.5]);
    }

    #[test]
    fn softmax_rows_are_normalized_and_stable_under_large_logits() {
        let params = MlpParams {
            layers: vec![DenseLayer {
                weights: Tensor2::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
                    .unwrap(),
                bias: vec![0.0; 3],
                activation: Activation::Softmax,
            }],
            init_seed: 0,
        };
        let x = Tensor2::new(2, 3, vec![1000.0, 0.0, -1000.0, 5.0, 5.0, 5.0]).unwrap();
        let (y, _) = forward(&params, &x).unwrap();
        for r in 0..2 {
            let sum: f64 = y.row(r).iter().sum();
            assert_close(sum, 1.0, 1e-12, "softmax row sum");
        }
        assert_close(y.get(0, 0), 1.0, 1e-12, "saturated softmax");
        assert_close(y.get(1, 0), 1.0 / 3.0, 1e-12, "uniform softmax");
    }

    #[test]
    fn mse_matches_hand_computation() {
        let p = Tensor2::new(1, 2, vec![1.0, 2.0]).unwrap();
        let t = Tensor2::new(1, 2, vec![0.0, 4.0]).unwrap();
        let (loss, grad) = mse_loss(&p, &t).unwrap();
        assert_close(loss, (1.0 + 4.0) / 2.0, 1e-15, "mse");
        assert_eq!(grad.data(), &[2.0 * 1.0 / 2.0, 2.0 * -2.0 / 2.0]);
    }

    #[test]
    fn cross_entropy_matches_hand_computation_and_validates() {
        let probs = Tensor2::new(2, 2, vec![0.9, 0.1, 0.25, 0.75]).unwrap();
        let targets = Tensor2::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let per = cross_entropy_per_sample(&probs, &targets).unwrap();
        assert_close(per[0], -(0.9f64 + 1e-12).ln(), 1e-15, "l0");
        assert_close(per[1], -(0.75f64 + 1e-12).ln(), 1e-15, "l1");
        let (loss, grad) = cross_entropy_loss(&probs, &targets, &[1.0, 3.0]).unwrap();
        assert_close(loss, (per[0] + 3.0 * per[1]) / 2.0, 1e-15, "weighted ce");
        assert_close(grad.get(0, 0), (0.9 - 1.0) / 2.0, 1e-15, "g00");
        assert_close(grad.get(1, 1), 3.0 * (0.75 - 1.0) / 2.0, 1e-15, "g11");

        // Not one-hot.
        let bad = Tensor2::new(2, 2, vec![0.5, 0.5, 0.0, 1.0]).unwrap();
        assert!(cross_entropy_per_sample(&probs, &bad).is_err());
        // Not a distribution.
        let badp = Tensor2::new(2, 2, vec![0.9, 0.3, 0.25, 0.75]).unwrap();
        assert!(cross_entropy_per_sample(&badp, &targets).is_err());
        // Negative weight.
        assert!(cross_entropy_loss(&probs, &targets, &[1.0, -1.0]).is_err());
        // Zero probability stays finite thanks to the floor.
        let zero = Tensor2::new(1, 2, vec![0.0, 1.0]).unwrap();
        let tz = Tensor2::new(1, 2, vec![1.0, 0.0]).unwrap();
        let l = cross_entropy_per_sample(&zero, &tz).unwrap();
        assert!(l[0].is_finite());
        assert_close(l[0], -(CE_PROB_FLOOR.ln()), 1e-9, "floored ce");
    }

    #[test]
    fn backward_rejects_stale_cache_and_wrong_grad_shape() {
        let params = small_net(2);
        let other = init_params(
            &[
                LayerSpec::new(3, 5, Activation::Relu),
                LayerSpec::new(5, 2, Activation::Tanh),
            ],
            2,
        )
        .unwrap();
        let x = Tensor2::new(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]).unwrap();
        let (y, cache) = forward(&params, &x).unwrap();
        let grad = Tensor2::zeros(y.rows(), y.cols());
        assert!(matches!(
            backward(&other, &cache, &grad),
            Err(Error::Internal(_))
        ));
        assert!(backward(&params, &cache, &Tensor2::zeros(2, 3)).is_err());
    }

    /// Central-difference check of `backward` for every activation, including
    /// a softmax + cross-entropy head, against the analytic gradients.
    #[test]
    fn gradients_match_finite_differences() {
        let specs = vec![
            LayerSpec::new(4, 6, Activation::Relu),
            LayerSpec::new(6, 5, Activation::Tanh),
            LayerSpec::new(5, 3, Activation::Softmax),
        ];
        let params = init_params(&specs, 11).unwrap();
        let x = {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let dist = Uniform::new(-1.0, 1.0);
            Tensor2::new(5, 4, (0..20).map(|_| dist.sample(&mut rng)).collect()).unwrap()
        };
        let targets = Tensor2::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        let weights = [1.0, 0.5, 2.0, 1.5, 1.0];

        let loss_of = |p: &MlpParams| -> f64 {
            let (probs, _) = forward(p, &x).unwrap();
            cross_entropy_loss(&probs, &targets, &weights).unwrap().0
        };

        let (probs, cache) = forward(&params, &x).unwrap();
        let (_, grad_logits) = cross_entropy_loss(&probs, &targets, &weights).unwrap();
        let (grads, _) = backward(&params, &cache, &grad_logits).unwrap();

        let h = 1e-6;
        for li in 0..params.layers.len() {
            let n_weights = params.layers[li].weights.data().len();
            for wi in (0..n_weights).step_by(7) {
                let mut plus = params.clone();
                plus.layers[li].weights.data_mut()[wi] += h;
                let mut minus = params.clone();
                minus.layers[li].weights.data_mut()[wi] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let analytic = grads.layers[li].d_weights.data()[wi];
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-4,
                    "layer {li} weight {wi}: analytic {analytic} vs numeric {numeric}"
                );
            }
            for bi in 0..params.layers[li].bias.len() {
                let mut plus = params.clone();
                plus.layers[li].bias[bi] += h;
                let mut minus = params.clone();
                minus.layers[li].bias[bi] -= h;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let analytic = grads.layers[li].d_bias[bi];
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-4,
                    "layer {li} bias {bi}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    /// Input gradients (used to chain encoder and heads) must also match
    /// finite differences.
    #[test]
    fn input_gradient_matches_finite_differences() {
        let params = small_net(21);
        let x = Tensor2::new(2, 3, vec![0.3, -0.1, 0.2, -0.4, 0.6, 0.05]).unwrap();
        let target = Tensor2::zeros(2, 2);
        let loss_of = |input: &Tensor2| -> f64 {
            let (y, _) = forward(&params, input).unwrap();
            mse_loss(&y, &target).unwrap().0
        };
        let (y, cache) = forward(&params, &x).unwrap();
        let (_, d_out) = mse_loss(&y, &target).unwrap();
        let (_, d_input) = backward(&params, &cache, &d_out).unwrap();
        let h = 1e-6;
        for i in 0..x.data().len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let analytic = d_input.data()[i];
            assert!(
                (numeric - analytic).abs() < 1e-7,
                "input grad {i}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn sgd_with_zero_gradients_or_zero_lr_leaves_params_unchanged() {
        let mut params = small_net(4);
        let before = params.clone();
        let zero = MlpGrads::zeros_like(&params);
        let mut opt = OptimizerState::new(&params, OptimizerKind::Sgd, 0.1).unwrap();
        opt.step(&mut params, &zero).unwrap();
        assert_eq!(params, before);
        assert_eq!(opt.step_count(), 1);

        let mut params2 = small_net(4);
        let mut some = MlpGrads::zeros_like(&params2);
        some.layers[0].d_weights.data_mut()[0] = 1.0;
        let mut opt0 = OptimizerState::new(&params2, OptimizerKind::adam_default(), 0.0).unwrap();
        opt0.step(&mut params2, &some).unwrap();
        assert_eq!(params2, before);
    }

    #[test]
    fn adam_single_step_matches_hand_computation() {
        let mut params = MlpParams {
            layers: vec![DenseLayer {
                weights: Tensor2::new(1, 1, vec![1.0]).unwrap(),
                bias: vec![0.0],
                activation: Activation::Linear,
            }],
            init_seed: 0,
        };
        let mut grads = MlpGrads::zeros_like(&params);
        grads.layers[0].d_weights.data_mut()[0] = 0.5;
        let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
        let mut opt = OptimizerState::new(
            &params,
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon: eps,
            },
            0.01,
        )
        .unwrap();
        opt.step(&mut params, &grads).unwrap();
        // After one step, m_hat = g and v_hat = g^2, so the update is
        // lr * g / (|g| + eps).
        let expected = 1.0 - 0.01 * 0.5 / (0.5 + eps);
        assert_close(
            params.layers[0].weights.data()[0],
            expected,
            1e-12,
            "adam step",
        );
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn optimizer_rejects_non_finite_gradients_without_updating() {
        let mut params = small_net(5);
        let before = params.clone();
        let mut grads = MlpGrads::zeros_like(&params);
        grads.layers[1].d_weights.data_mut()[0] = f64::NAN;
        let mut opt = OptimizerState::new(&params, OptimizerKind::Sgd, 0.1).unwrap();
        let err = opt.step(&mut params, &grads).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(params, before);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn optimizer_validates_configuration() {
        let params = small_net(6);
        assert!(OptimizerState::new(&params, OptimizerKind::Sgd, -0.1).is_err());
        assert!(OptimizerState::new(&params, OptimizerKind::Sgd, f64::NAN).is_err());
        assert!(OptimizerState::new(
            &params,
            OptimizerKind::Adam {
                beta1: 1.0,
                beta2: 0.999,
                epsilon: 1e-8
            },
            0.1
        )
        .is_err());
        assert!(OptimizerState::new(
            &params,
            OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 0.0
            },
            0.1
        )
        .is_err());
    }

    #[test]
    fn grads_add_and_scale() {
        let params = small_net(8);
        let mut a = MlpGrads::zeros_like(&params);
        let mut b = MlpGrads::zeros_like(&params);
        a.layers[0].d_weights.data_mut()[0] = 1.0;
        b.layers[0].d_weights.data_mut()[0] = 2.0;
        b.layers[0].d_bias[1] = 4.0;
        a.add_assign(&b).unwrap();
        assert_eq!(a.layers[0].d_weights.data()[0], 3.0);
        assert_eq!(a.layers[0].d_bias[1], 4.0);
        a.scale(0.5);
        assert_eq!(a.layers[0].d_weights.data()[0], 1.5);
        assert_eq!(a.layers[0].d_bias[1], 2.0);
    }
}
