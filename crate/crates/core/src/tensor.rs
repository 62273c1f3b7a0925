//! Minimal differentiable models: an affine classifier and a one-hidden-layer
//! ReLU perceptron, with hand-written backward passes.
//!
//! Everything is `f64`, row-major, and allocation-light. Gradients are
//! analytic; the tests check them against central finite differences.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{ConfidenceVector, ScoreError};

/// Floor applied to probabilities inside `ln` in the cross-entropy loss.
pub const PROB_FLOOR: f64 = 1e-12;

pub const CHECKPOINT_FORMAT: &str = "vfl-lab/checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("dimensions must be at least 1")]
    EmptyDimension,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("checkpoint format {found:?} version {version} is not supported")]
    UnsupportedCheckpoint { found: String, version: u32 },
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Json(#[from] serde_json::Error),
}

fn check_len(expected: usize, actual: usize) -> Result<(), TensorError> {
    if expected == actual {
        Ok(())
    } else {
        Err(TensorError::DimensionMismatch { expected, actual })
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len(cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copies the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * columns.len());
        for row in self.iter_rows() {
            data.extend(columns.iter().map(|&c| row[c]));
        }
        Matrix {
            rows: self.rows,
            cols: columns.len(),
            data,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Affine layer `y = W x + b` with `W` stored `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

/// Gradients of one [`DenseLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerGrad {
    fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            biases: vec![0.0; layer.biases.len()],
        }
    }

    pub(crate) fn add_assign(&mut self, other: &LayerGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            *v *= factor;
        }
    }
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self::init_with_fan_in(inputs, outputs, inputs, rng)
    }

    pub fn init_with_fan_in<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let biases = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weights,
            biases,
        }
    }

    pub fn from_parts(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self, TensorError> {
        check_len(inputs * outputs, weights.len())?;
        check_len(outputs, biases.len())?;
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            biases,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.biases)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Returns parameter gradients and `Wᵀ upstream`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> (LayerGrad, Vec<f64>) {
        let mut grad = LayerGrad::zeros_like(self);
        let mut input = vec![0.0; self.inputs];
        for (o, &g) in upstream.iter().enumerate() {
            grad.biases[o] = g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] = g * x[i];
                input[i] += row[i] * g;
            }
        }
        (grad, input)
    }

    pub(crate) fn apply(&mut self, grad: &LayerGrad, step: f64, update_bias: bool) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= step * g;
        }
        if update_bias {
            for (b, g) in self.biases.iter_mut().zip(&grad.biases) {
                *b -= step * g;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp1 { hidden_units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            kind: ModelKind::Linear,
            input_dim,
            output_dim,
        }
    }

    pub fn mlp1(input_dim: usize, hidden_units: usize, output_dim: usize) -> Self {
        Self {
            kind: ModelKind::Mlp1 { hidden_units },
            input_dim,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let hidden_ok = match self.kind {
            ModelKind::Linear => true,
            ModelKind::Mlp1 { hidden_units } => hidden_units >= 1,
        };
        if self.input_dim == 0 || self.output_dim == 0 || !hidden_ok {
            return Err(TensorError::EmptyDimension);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Linear {
        layer: DenseLayer,
    },
    Mlp1 {
        hidden: DenseLayer,
        output: DenseLayer,
    },
}

/// Parameter gradients (one entry per layer, input-to-output order) plus the
/// gradient with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
    pub input: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model.layers().map(LayerGrad::zeros_like).collect(),
            input: vec![0.0; model.input_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &GradientBundle) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
        for (a, b) in self.input.iter_mut().zip(&other.input) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.scale(factor);
        }
        for v in &mut self.input {
            *v *= factor;
        }
    }

    /// Parameter gradients flattened in [`Model::parameters`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().chain(&self.input).all(|v| *v == 0.0)
    }
}

impl Model {
    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self, TensorError> {
        spec.validate()?;
        Ok(match spec.kind {
            ModelKind::Linear => Model::Linear {
                layer: DenseLayer::init_uniform(spec.input_dim, spec.output_dim, rng),
            },
            ModelKind::Mlp1 { hidden_units } => Model::Mlp1 {
                hidden: DenseLayer::init_uniform(spec.input_dim, hidden_units, rng),
                output: DenseLayer::init_uniform(hidden_units, spec.output_dim, rng),
            },
        })
    }

    pub fn zeros(spec: &ModelSpec) -> Result<Self, TensorError> {
        spec.validate()?;
        Ok(match spec.kind {
            ModelKind::Linear => Model::Linear {
                layer: DenseLayer::zeros(spec.input_dim, spec.output_dim),
            },
            ModelKind::Mlp1 { hidden_units } => Model::Mlp1 {
                hidden: DenseLayer::zeros(spec.input_dim, hidden_units),
                output: DenseLayer::zeros(hidden_units, spec.output_dim),
            },
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Linear { layer } => ModelSpec::linear(layer.inputs, layer.outputs),
            Model::Mlp1 { hidden, output } => {
                ModelSpec::mlp1(hidden.inputs, hidden.outputs, output.outputs)
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.spec().input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec().output_dim
    }

    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        let (a, b) = match self {
            Model::Linear { layer } => (layer, None),
            Model::Mlp1 { hidden, output } => (hidden, Some(output)),
        };
        std::iter::once(a).chain(b)
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        match self {
            Model::Linear { layer } => vec![layer],
            Model::Mlp1 { hidden, output } => vec![hidden, output],
        }
    }

    pub fn output_layer_mut(&mut self) -> &mut DenseLayer {
        match self {
            Model::Linear { layer } => layer,
            Model::Mlp1 { output, .. } => output,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, TensorError> {
        check_len(self.input_dim(), x.len())?;
        Ok(match self {
            Model::Linear { layer } => layer.forward(x),
            Model::Mlp1 { hidden, output } => {
                let mut h = hidden.forward(x);
                relu_in_place(&mut h);
                output.forward(&h)
            }
        })
    }

    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<GradientBundle, TensorError> {
        check_len(self.input_dim(), x.len())?;
        check_len(self.output_dim(), upstream.len())?;
        Ok(match self {
            Model::Linear { layer } => {
                let (g, input) = layer.backward(x, upstream);
                GradientBundle {
                    layers: vec![g],
                    input,
                }
            }
            Model::Mlp1 { hidden, output } => {
                let pre = hidden.forward(x);
                let mut h = pre.clone();
                relu_in_place(&mut h);
                let (g_out, mut dh) = output.backward(&h, upstream);
                for (d, p) in dh.iter_mut().zip(&pre) {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
                let (g_hidden, input) = hidden.backward(x, &dh);
                GradientBundle {
                    layers: vec![g_hidden, g_out],
                    input,
                }
            }
        })
    }

    /// `θ ← θ - step · g`. When `update_bias` is false biases stay fixed.
    pub fn apply_gradient(&mut self, grad: &GradientBundle, step: f64, update_bias: bool) {
        for (layer, g) in self.layers_mut().into_iter().zip(&grad.layers) {
            layer.apply(g, step, update_bias);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.layers()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// All parameters, per layer weights then biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<(), TensorError> {
        check_len(self.num_parameters(), params.len())?;
        let mut offset = 0;
        for layer in self.layers_mut() {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = layer.biases.len();
            layer.biases.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().iter().all(|v| v.is_finite())
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<ConfidenceVector, TensorError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ConfidenceVector::new(
        exps.into_iter().map(|e| e / total).collect(),
    )?)
}

/// Cross-entropy `-ln p_label` and its gradient `p - onehot(label)` with
/// respect to the logits.
pub fn cross_entropy_with_grad(
    probs: &ConfidenceVector,
    label: usize,
) -> Result<(f64, Vec<f64>), TensorError> {
    let k = probs.num_classes();
    if label >= k {
        return Err(TensorError::LabelOutOfRange { label, classes: k });
    }
    let p = probs.values();
    let loss = -p[label].max(PROB_FLOOR).ln();
    let mut grad = p.to_vec();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// `‖softmax(z) - observed‖²` and its gradient with respect to `z`.
pub fn softmax_squared_error(
    logits: &[f64],
    observed: &[f64],
) -> Result<(f64, Vec<f64>), TensorError> {
    check_len(logits.len(), observed.len())?;
    let s = softmax(logits)?;
    let s = s.values();
    let diff: Vec<f64> = s.iter().zip(observed).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum();
    // dL/dz_k = s_k (g_k - <s, g>) with g = 2 (s - o)
    let inner: f64 = s.iter().zip(&diff).map(|(a, d)| a * 2.0 * d).sum();
    let grad = s
        .iter()
        .zip(&diff)
        .map(|(a, d)| a * (2.0 * d - inner))
        .collect();
    Ok((loss, grad))
}

/// Versioned JSON checkpoint envelope. Floats are written in shortest
/// round-trip form (at most 17 significant digits) and parse back exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format: String,
    pub version: u32,
    pub payload: T,
}

impl<T: Serialize + for<'de> Deserialize<'de>> Checkpoint<T> {
    pub fn new(payload: T) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            payload,
        }
    }

    pub fn to_json(&self) -> Result<String, TensorError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, TensorError> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(TensorError::UnsupportedCheckpoint {
                found: ck.format,
                version: ck.version,
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
