//! Dense feed-forward network with a positivity-constrained uncertainty head.
//!
//! The distributional model ends in two linear outputs: the first is the
//! predicted mean `mu`, the second is a raw value mapped to a strictly
//! positive standard deviation by `sigma = softplus(raw) + SIGMA_EPSILON`.
//! A point model (single output) is used for the plain-MAE baseline.
//!
//! Backprop is exact and analytic; the batch reduction is a mean so that the
//! learning rate and the abstention penalty are independent of batch size.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::math;
use crate::matrix::Matrix;

/// Floor added to the softplus output so `sigma` can never reach zero.
pub const SIGMA_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Linear => z,
        }
    }

    /// Derivative expressed in terms of the post-activation value.
    #[inline]
    fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_width: usize, output_width: usize, activation: Activation) -> Self {
        Self {
            input_width,
            output_width,
            activation,
        }
    }
}

/// How the raw second output is mapped to a positive `sigma`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SigmaTransform {
    #[default]
    SoftplusEps,
}

/// One sample's network output, interpreted as a conditional Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionPair {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetError {
    /// Input width does not match what the named layer expects.
    DimensionMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    /// Consecutive layer specs do not chain.
    BadLayerChain {
        layer: usize,
        expected: usize,
        got: usize,
    },
    /// Final layer must have one (point) or two (distributional) outputs.
    BadOutputWidth { got: usize },
    EmptyArchitecture,
    ZeroWidthLayer { layer: usize },
    /// A loss gradient fed into backprop was NaN or infinite.
    NonFiniteGradient { sample: usize },
    /// Gradient shapes do not match the model.
    GradientShape { layer: usize },
}

impl fmt::Display for NetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetError::DimensionMismatch {
                layer,
                expected,
                got,
            } => write!(
                f,
                "layer {layer} expects {expected} inputs but received {got}"
            ),
            NetError::BadLayerChain {
                layer,
                expected,
                got,
            } => write!(
                f,
                "layer {layer} declares input width {got} but the previous layer outputs {expected}"
            ),
            NetError::BadOutputWidth { got } => {
                write!(f, "final layer must output 1 or 2 values, got {got}")
            }
            NetError::EmptyArchitecture => write!(f, "model needs at least one layer"),
            NetError::ZeroWidthLayer { layer } => write!(f, "layer {layer} has a zero width"),
            NetError::NonFiniteGradient { sample } => {
                write!(f, "non-finite loss gradient for sample {sample}")
            }
            NetError::GradientShape { layer } => {
                write!(f, "gradient shapes do not match model at layer {layer}")
            }
        }
    }
}

impl core::error::Error for NetError {}

/// Fully connected network: layer specs plus row-major `(out, in)` weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layers: Vec<LayerSpec>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    sigma_transform: SigmaTransform,
    l2_first_layer: f64,
}

/// Post-activation values for every layer of one batch, consumed by
/// [`MlpModel::backward`].
pub struct ForwardCache {
    activations: Vec<Matrix>,
}

impl ForwardCache {
    fn outputs(&self) -> &Matrix {
        self.activations.last().expect("cache has layers")
    }

    pub fn batch_len(&self) -> usize {
        self.outputs().rows()
    }
}

/// Parameter gradients with the same shapes as the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|&g| g == 0.0))
    }
}

fn validate_specs(layers: &[LayerSpec]) -> Result<(), NetError> {
    if layers.is_empty() {
        return Err(NetError::EmptyArchitecture);
    }
    for (i, spec) in layers.iter().enumerate() {
        if spec.input_width == 0 || spec.output_width == 0 {
            return Err(NetError::ZeroWidthLayer { layer: i });
        }
        if i > 0 && spec.input_width != layers[i - 1].output_width {
            return Err(NetError::BadLayerChain {
                layer: i,
                expected: layers[i - 1].output_width,
                got: spec.input_width,
            });
        }
    }
    let out = layers.last().unwrap().output_width;
    if out != 1 && out != 2 {
        return Err(NetError::BadOutputWidth { got: out });
    }
    Ok(())
}

impl MlpModel {
    /// Builds a model with Glorot-uniform weights and zero biases.
    ///
    /// For distributional models the raw-sigma bias is set to
    /// `softplus_inv(1)` so the initial predicted `sigma` is close to one.
    pub fn init<R: Rng + ?Sized>(
        layers: Vec<LayerSpec>,
        l2_first_layer: f64,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        validate_specs(&layers)?;
        let mut weights = Vec::with_capacity(layers.len());
        let mut biases = Vec::with_capacity(layers.len());
        for spec in &layers {
            let limit =
                math::sqrt(6.0 / (spec.input_width as f64 + spec.output_width as f64));
            let dist = Uniform::new(-limit, limit).expect("valid init range");
            let mut w = Vec::with_capacity(spec.input_width * spec.output_width);
            for _ in 0..spec.input_width * spec.output_width {
                w.push(dist.sample(rng));
            }
            weights.push(w);
            biases.push(vec![0.0; spec.output_width]);
        }
        let last = layers.len() - 1;
        if layers[last].output_width == 2 {
            biases[last][1] = math::softplus_inv(1.0);
        }
        Ok(Self {
            layers,
            weights,
            biases,
            sigma_transform: SigmaTransform::SoftplusEps,
            l2_first_layer,
        })
    }

    /// Reassembles a model from explicit parameters (e.g. a checkpoint).
    pub fn from_parts(
        layers: Vec<LayerSpec>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        sigma_transform: SigmaTransform,
        l2_first_layer: f64,
    ) -> Result<Self, NetError> {
        validate_specs(&layers)?;
        if weights.len() != layers.len() || biases.len() != layers.len() {
            return Err(NetError::GradientShape { layer: 0 });
        }
        for (i, spec) in layers.iter().enumerate() {
            if weights[i].len() != spec.input_width * spec.output_width
                || biases[i].len() != spec.output_width
            {
                return Err(NetError::GradientShape { layer: i });
            }
        }
        Ok(Self {
            layers,
            weights,
            biases,
            sigma_transform,
            l2_first_layer,
        })
    }

    pub fn layer_specs(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn sigma_transform(&self) -> SigmaTransform {
        self.sigma_transform
    }

    pub fn l2_first_layer(&self) -> f64 {
        self.l2_first_layer
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().output_width
    }

    /// Two outputs means a `(mu, sigma)` head; one output is a point model.
    pub fn is_distributional(&self) -> bool {
        self.output_width() == 2
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Runs the batch through every layer, keeping post-activation values.
    pub fn forward_cached(&self, batch: &Matrix) -> Result<ForwardCache, NetError> {
        if batch.cols() != self.input_width() {
            return Err(NetError::DimensionMismatch {
                layer: 0,
                expected: self.input_width(),
                got: batch.cols(),
            });
        }
        let n = batch.rows();
        let mut activations = Vec::with_capacity(self.layers.len());
        for (l, spec) in self.layers.iter().enumerate() {
            let input: &Matrix = if l == 0 { batch } else { &activations[l - 1] };
            let mut out = Matrix::zeros(n, spec.output_width);
            let w = &self.weights[l];
            let b = &self.biases[l];
            for s in 0..n {
                let x = input.row(s);
                let out_row = out.row_mut(s);
                for (o, out_val) in out_row.iter_mut().enumerate() {
                    let z = b[o] + math::dot(&w[o * spec.input_width..(o + 1) * spec.input_width], x);
                    *out_val = spec.activation.apply(z);
                }
            }
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// `(mu, sigma)` predictions for a batch. Requires a two-output model.
    pub fn forward(&self, batch: &Matrix) -> Result<Vec<PredictionPair>, NetError> {
        let cache = self.forward_cached(batch)?;
        Ok(self.prediction_pairs(&cache))
    }

    /// Point predictions for a batch. Requires a one-output model.
    pub fn forward_point(&self, batch: &Matrix) -> Result<Vec<f64>, NetError> {
        let cache = self.forward_cached(batch)?;
        Ok(self.point_predictions(&cache))
    }

    /// Maps cached raw outputs to `(mu, sigma)` pairs.
    pub fn prediction_pairs(&self, cache: &ForwardCache) -> Vec<PredictionPair> {
        assert!(self.is_distributional(), "point model has no sigma head");
        let raw = cache.outputs();
        (0..raw.rows())
            .map(|s| {
                let row = raw.row(s);
                PredictionPair {
                    mu: row[0],
                    sigma: math::softplus(row[1]) + SIGMA_EPSILON,
                }
            })
            .collect()
    }

    /// Extracts cached point predictions.
    pub fn point_predictions(&self, cache: &ForwardCache) -> Vec<f64> {
        assert!(!self.is_distributional(), "distributional model: use prediction_pairs");
        let raw = cache.outputs();
        (0..raw.rows()).map(|s| raw.row(s)[0]).collect()
    }

    /// Batch-mean parameter gradients from per-sample `(dL/dmu, dL/dsigma)`.
    ///
    /// The sigma-head gradient is chained through the softplus derivative
    /// here, since the transform belongs to the model. The L2 term
    /// `2 * lambda * W` is added to the first layer's weight gradients after
    /// the batch mean.
    pub fn backward(
        &self,
        batch: &Matrix,
        cache: &ForwardCache,
        loss_grads: &[(f64, f64)],
    ) -> Result<Gradients, NetError> {
        assert!(self.is_distributional(), "point model: use backward_point");
        let raw = cache.outputs();
        if loss_grads.len() != raw.rows() {
            return Err(NetError::DimensionMismatch {
                layer: self.layers.len() - 1,
                expected: raw.rows(),
                got: loss_grads.len(),
            });
        }
        let mut delta = Matrix::zeros(raw.rows(), 2);
        for (s, &(d_mu, d_sigma)) in loss_grads.iter().enumerate() {
            if !d_mu.is_finite() || !d_sigma.is_finite() {
                return Err(NetError::NonFiniteGradient { sample: s });
            }
            let raw_sigma = raw.row(s)[1];
            delta.set(s, 0, d_mu);
            delta.set(s, 1, d_sigma * math::sigmoid(raw_sigma));
        }
        Ok(self.backward_raw(batch, cache, delta))
    }

    /// Batch-mean parameter gradients for a point model from `dL/dmu`.
    pub fn backward_point(
        &self,
        batch: &Matrix,
        cache: &ForwardCache,
        loss_grads: &[f64],
    ) -> Result<Gradients, NetError> {
        assert!(!self.is_distributional(), "distributional model: use backward");
        let raw = cache.outputs();
        if loss_grads.len() != raw.rows() {
            return Err(NetError::DimensionMismatch {
                layer: self.layers.len() - 1,
                expected: raw.rows(),
                got: loss_grads.len(),
            });
        }
        let mut delta = Matrix::zeros(raw.rows(), 1);
        for (s, &d_mu) in loss_grads.iter().enumerate() {
            if !d_mu.is_finite() {
                return Err(NetError::NonFiniteGradient { sample: s });
            }
            delta.set(s, 0, d_mu);
        }
        Ok(self.backward_raw(batch, cache, delta))
    }

    /// Shared backprop over the dense stack. `delta` holds dL/d(raw output)
    /// per sample; the result is averaged over the batch.
    fn backward_raw(&self, batch: &Matrix, cache: &ForwardCache, mut delta: Matrix) -> Gradients {
        let n = batch.rows();
        let mut grads = Gradients::zeros_like(self);
        for l in (0..self.layers.len()).rev() {
            let spec = &self.layers[l];
            let input: &Matrix = if l == 0 {
                batch
            } else {
                &cache.activations[l - 1]
            };
            let dw = &mut grads.weights[l];
            let db = &mut grads.biases[l];
            for s in 0..n {
                let x = input.row(s);
                let d_row = delta.row(s);
                for o in 0..spec.output_width {
                    let d = d_row[o];
                    if d == 0.0 {
                        continue;
                    }
                    db[o] += d;
                    let w_row = &mut dw[o * spec.input_width..(o + 1) * spec.input_width];
                    for (wi, &xi) in w_row.iter_mut().zip(x) {
                        *wi += d * xi;
                    }
                }
            }
            if l > 0 {
                // Propagate to the previous layer's post-activation values.
                let w = &self.weights[l];
                let prev_act = &cache.activations[l - 1];
                let prev_spec = &self.layers[l - 1];
                let mut next_delta = Matrix::zeros(n, spec.input_width);
                for s in 0..n {
                    let d_row = delta.row(s);
                    let nd_row = next_delta.row_mut(s);
                    for o in 0..spec.output_width {
                        let d = d_row[o];
                        if d == 0.0 {
                            continue;
                        }
                        let w_row = &w[o * spec.input_width..(o + 1) * spec.input_width];
                        for (nd, &wv) in nd_row.iter_mut().zip(w_row) {
                            *nd += d * wv;
                        }
                    }
                    let a_row = prev_act.row(s);
                    for (nd, &a) in nd_row.iter_mut().zip(a_row) {
                        *nd *= prev_spec.activation.grad_from_output(a);
                    }
                }
                delta = next_delta;
            }
        }
        let scale = 1.0 / n as f64;
        for v in grads.weights.iter_mut().chain(grads.biases.iter_mut()) {
            for g in v.iter_mut() {
                *g *= scale;
            }
        }
        if self.l2_first_layer > 0.0 {
            let lambda2 = 2.0 * self.l2_first_layer;
            for (g, &w) in grads.weights[0].iter_mut().zip(&self.weights[0]) {
                *g += lambda2 * w;
            }
        }
        grads
    }

}

/// Adam optimizer state (first/second moment estimates and step counter).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m_weights: Vec<Vec<f64>>,
    v_weights: Vec<Vec<f64>>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// Defaults: `beta1 = 0.9`, `beta2 = 0.999`, `epsilon = 1e-7`.
    pub fn new(model: &MlpModel, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            m_weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            step: u64::default(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// One Adam update of every model parameter.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<(), NetError> {
        for l in 0..model.weights.len() {
            if grads.weights[l].len() != model.weights[l].len()
                || grads.biases[l].len() != model.biases[l].len()
            {
                return Err(NetError::GradientShape { layer: l });
            }
        }
        self.step += 1;
        let bc1 = 1.0 - powi(self.beta1, self.step);
        let bc2 = 1.0 - powi(self.beta2, self.step);
        for l in 0..model.weights.len() {
            update_slice(
                &mut model.weights[l],
                &grads.weights[l],
                &mut self.m_weights[l],
                &mut self.v_weights[l],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
            update_slice(
                &mut model.biases[l],
                &grads.biases[l],
                &mut self.m_biases[l],
                &mut self.v_biases[l],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

fn powi(base: f64, exp: u64) -> f64 {
    let mut result = 1.0;
    let mut b = base;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            result *= b;
        }
        b *= b;
        e >>= 1;
    }
    result
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (math::sqrt(v_hat) + epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist_specs(widths: &[usize]) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for i in 1..widths.len() {
            let act = if i == widths.len() - 1 {
                Activation::Linear
            } else {
                Activation::Relu
            };
            specs.push(LayerSpec::new(widths[i - 1], widths[i], act));
        }
        specs
    }

    #[test]
    fn zero_weight_network_outputs_softplus_zero() {
        let specs = dist_specs(&[3, 4, 2]);
        let model = MlpModel::from_parts(
            specs.clone(),
            specs.iter()
                .map(|s| vec![0.0; s.input_width * s.output_width])
                .collect(),
            specs.iter().map(|s| vec![0.0; s.output_width]).collect(),
            SigmaTransform::SoftplusEps,
            0.0,
        )
        .unwrap();
        let batch = Matrix::from_rows(&[&[0.3, -1.0, 2.0]]);
        let preds = model.forward(&batch).unwrap();
        assert_eq!(preds[0].mu, 0.0);
        let expected = core::f64::consts::LN_2 + SIGMA_EPSILON;
        assert!((preds[0].sigma - expected).abs() < 1e-15);
    }

    #[test]
    fn identity_layer_evaluates_softplus_by_hand() {
        let specs = vec![LayerSpec::new(2, 2, Activation::Linear)];
        let model = MlpModel::from_parts(
            specs,
            vec![vec![1.0, 0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0]],
            SigmaTransform::SoftplusEps,
            0.0,
        )
        .unwrap();
        let preds = model
            .forward(&Matrix::from_rows(&[&[3.0, 2.0]]))
            .unwrap();
        assert_eq!(preds[0].mu, 3.0);
        // softplus(2) + 1e-6, hand-evaluated.
        assert!((preds[0].sigma - 2.126_929_011_042_972).abs() < 1e-12);
    }

    #[test]
    fn climate_architecture_accepts_900_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = MlpModel::init(dist_specs(&[900, 50, 25, 2]), 0.0, &mut rng).unwrap();
        let mut row = vec![0.0; 900];
        for (i, v) in row.iter_mut().enumerate() {
            *v = (i as f64 * 0.01).sin();
        }
        let preds = model.forward(&Matrix::from_rows(&[&row])).unwrap();
        assert!(preds[0].mu.is_finite());
        assert!(preds[0].sigma.is_finite());
        assert!(preds[0].sigma > 0.0);
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = MlpModel::init(dist_specs(&[3, 4, 2]), 0.0, &mut rng).unwrap();
        let err = model
            .forward(&Matrix::from_rows(&[&[1.0, 2.0]]))
            .unwrap_err();
        assert_eq!(
            err,
            NetError::DimensionMismatch {
                layer: 0,
                expected: 3,
                got: 2
            }
        );
    }

    #[test]
    fn zero_loss_grads_give_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = MlpModel::init(dist_specs(&[3, 4, 2]), 0.0, &mut rng).unwrap();
        let batch = Matrix::from_rows(&[&[0.5, -0.2, 1.0], &[1.0, 0.0, -1.0]]);
        let cache = model.forward_cached(&batch).unwrap();
        let grads = model
            .backward(&batch, &cache, &[(0.0, 0.0), (0.0, 0.0)])
            .unwrap();
        assert!(grads.is_all_zero());
    }

    #[test]
    fn l2_term_only_touches_first_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = MlpModel::init(dist_specs(&[3, 4, 2]), 0.1, &mut rng).unwrap();
        let batch = Matrix::from_rows(&[&[0.5, -0.2, 1.0]]);
        let cache = model.forward_cached(&batch).unwrap();
        let grads = model.backward(&batch, &cache, &[(0.0, 0.0)]).unwrap();
        for (g, &w) in grads.weights[0].iter().zip(&model.weights()[0]) {
            assert!((g - 0.2 * w).abs() < 1e-15);
        }
        for layer in 1..grads.weights.len() {
            assert!(grads.weights[layer].iter().all(|&g| g == 0.0));
        }
        assert!(grads.biases.iter().all(|b| b.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn non_finite_gradient_names_the_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = MlpModel::init(dist_specs(&[2, 3, 2]), 0.0, &mut rng).unwrap();
        let batch = Matrix::from_rows(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let cache = model.forward_cached(&batch).unwrap();
        let err = model
            .backward(&batch, &cache, &[(0.0, 0.0), (f64::NAN, 0.0)])
            .unwrap_err();
        assert_eq!(err, NetError::NonFiniteGradient { sample: 1 });
    }

    #[test]
    fn adam_leaves_params_alone_on_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = MlpModel::init(dist_specs(&[2, 3, 2]), 0.0, &mut rng).unwrap();
        let reference = model.clone();
        let mut opt = AdamState::new(&model, 0.01);
        let grads = Gradients::zeros_like(&model);
        for _ in 0..5 {
            opt.step(&mut model, &grads).unwrap();
        }
        assert_eq!(model, reference);
    }

    #[test]
    fn adam_first_step_magnitude_equals_learning_rate() {
        let specs = vec![LayerSpec::new(1, 1, Activation::Linear)];
        let mut model = MlpModel::from_parts(
            specs,
            vec![vec![1.0]],
            vec![vec![0.0]],
            SigmaTransform::SoftplusEps,
            0.0,
        )
        .unwrap();
        let mut opt = AdamState::new(&model, 0.0005);
        let grads = Gradients {
            weights: vec![vec![1.0]],
            biases: vec![vec![0.0]],
        };
        opt.step(&mut model, &grads).unwrap();
        assert!((model.weights()[0][0] - 0.9995).abs() < 1e-9);
    }

    #[test]
    fn identical_gradient_sequences_keep_models_bit_identical() {
        let mut rng_a = ChaCha8Rng::seed_from_u64(7);
        let mut rng_b = ChaCha8Rng::seed_from_u64(7);
        let mut a = MlpModel::init(dist_specs(&[2, 4, 2]), 0.0, &mut rng_a).unwrap();
        let mut b = MlpModel::init(dist_specs(&[2, 4, 2]), 0.0, &mut rng_b).unwrap();
        assert_eq!(a, b);
        let mut opt_a = AdamState::new(&a, 0.01);
        let mut opt_b = AdamState::new(&b, 0.01);
        let batch = Matrix::from_rows(&[&[0.4, -0.8], &[1.2, 0.3]]);
        for step in 0..20 {
            let t = step as f64;
            let cache_a = a.forward_cached(&batch).unwrap();
            let grads_a = a
                .backward(&batch, &cache_a, &[(0.1 * t, -0.2), (-0.3, 0.05 * t)])
                .unwrap();
            opt_a.step(&mut a, &grads_a).unwrap();
            let cache_b = b.forward_cached(&batch).unwrap();
            let grads_b = b
                .backward(&batch, &cache_b, &[(0.1 * t, -0.2), (-0.3, 0.05 * t)])
                .unwrap();
            opt_b.step(&mut b, &grads_b).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let a = MlpModel::init(dist_specs(&[5, 8, 2]), 0.0, &mut rng_a).unwrap();
        let b = MlpModel::init(dist_specs(&[5, 8, 2]), 0.0, &mut rng_b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sigma_head_bias_targets_unit_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = MlpModel::init(dist_specs(&[2, 3, 2]), 0.0, &mut rng).unwrap();
        let raw_bias = model.biases().last().unwrap()[1];
        assert!((crate::math::softplus(raw_bias) - 1.0).abs() < 1e-12);
    }
}
