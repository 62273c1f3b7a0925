//! N-party vertical federated learning with a trusted coordinator.
//!
//! Parties hold disjoint feature slices of the same (pre-aligned) rows. The
//! active party, index 0, also holds the labels and plays the adversary.
//! Each party runs its own sub-model; the coordinator combines their
//! outputs, applies softmax and the configured defense, and broadcasts only
//! the defended vector.
//!
//! Two coordinator heads are supported: `SumLogits` (logistic regression,
//! party logits are summed and the coordinator owns the single bias) and
//! `ConcatHead` (per-party perceptrons emit embeddings that are concatenated
//! and fed to a linear head).

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::defense::{defend, DefenseError, DefenseKind};
use crate::score::{ConfidenceVector, TransformedScores};
use crate::tensor::{
    cross_entropy_with_grad, softmax, DenseLayer, GradientBundle, LayerGrad, Matrix, Model,
    ModelSpec, TensorError,
};

#[derive(Debug, Error)]
pub enum VflError {
    #[error("invalid feature split: {0}")]
    InvalidSplit(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
    #[error("csv row {row}, column {column:?}: cannot parse {value:?} as a number")]
    CsvCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Defense(#[from] DefenseError),
}

/// Seeded ChaCha stream; different `stream` values give independent
/// sequences for the same seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_SHUFFLE: u64 = 2;

/// Features scaled to `[0, 1]` with integer labels `0..classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
}

/// Named train/test partition of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self, VflError> {
        if features.rows() != labels.len() {
            return Err(VflError::InvalidDataset(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(VflError::InvalidDataset(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(VflError::InvalidDataset(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        if features.data().iter().any(|v| !v.is_finite()) {
            return Err(VflError::InvalidDataset(
                "missing or non-finite feature".into(),
            ));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            classes: self.classes,
        }
    }

    /// Seeded shuffle, then the first `train_fraction` of rows go to train.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<DataSplits, VflError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(VflError::InvalidDataset(format!(
                "train fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut seeded_rng(seed, 0));
        let cut = ((self.len() as f64) * train_fraction).round() as usize;
        if cut == 0 || cut == self.len() {
            return Err(VflError::InvalidDataset(
                "split leaves an empty partition".into(),
            ));
        }
        Ok(DataSplits {
            train: self.subset(&order[..cut]),
            test: self.subset(&order[cut..]),
        })
    }

    /// Per-column min-max scaling to `[0, 1]`; constant columns become 0.
    pub fn min_max_scaled(features: &Matrix) -> Matrix {
        let (rows, cols) = (features.rows(), features.cols());
        let mut lo = vec![f64::INFINITY; cols];
        let mut hi = vec![f64::NEG_INFINITY; cols];
        for row in features.iter_rows() {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let mut out = features.clone();
        for i in 0..rows {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                let span = hi[j] - lo[j];
                *v = if span > 0.0 { (*v - lo[j]) / span } else { 0.0 };
            }
        }
        out
    }

    /// Reads a CSV with a header row and an integer `label` column; every
    /// other column is a numeric feature. Features are min-max scaled.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, VflError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let label_col = headers
            .iter()
            .position(|h| h.trim() == "label")
            .ok_or_else(|| VflError::InvalidDataset("no column named `label`".into()))?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let row_no = i + 1;
            let mut features = Vec::with_capacity(headers.len().saturating_sub(1));
            for (j, cell) in record.iter().enumerate() {
                let cell = cell.trim();
                let bad = || VflError::CsvCell {
                    row: row_no,
                    column: headers.get(j).unwrap_or("").to_string(),
                    value: cell.to_string(),
                };
                if j == label_col {
                    labels.push(cell.parse::<usize>().map_err(|_| bad())?);
                } else {
                    let v = cell.parse::<f64>().map_err(|_| bad())?;
                    if !v.is_finite() {
                        return Err(bad());
                    }
                    features.push(v);
                }
            }
            rows.push(features);
        }
        if rows.is_empty() {
            return Err(VflError::InvalidDataset("csv has no data rows".into()));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        let features = Self::min_max_scaled(&Matrix::from_rows(&rows)?);
        Self::new(features, labels, classes)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, VflError> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }
}

/// Share of feature columns held by the active (adversarial) party.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AttackStrength(f64);

impl AttackStrength {
    pub fn new(fraction: f64) -> Result<Self, VflError> {
        if fraction > 0.0 && fraction < 1.0 {
            Ok(Self(fraction))
        } else {
            Err(VflError::InvalidSplit(format!(
                "attack strength must be in (0, 1), got {fraction}"
            )))
        }
    }

    pub fn fraction(self) -> f64 {
        self.0
    }

    /// `floor(fraction * d)`, tolerant of representation error.
    pub fn active_dims(self, d: usize) -> usize {
        (self.0 * d as f64 + 1e-9).floor() as usize
    }
}

impl TryFrom<f64> for AttackStrength {
    type Error = VflError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<AttackStrength> for f64 {
    fn from(s: AttackStrength) -> f64 {
        s.0
    }
}

/// Which columns each party holds. Party 0 is the active party.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSplit {
    party_slices: Vec<Vec<usize>>,
    active_index: usize,
}

impl FeatureSplit {
    pub fn new(party_slices: Vec<Vec<usize>>, active_index: usize) -> Result<Self, VflError> {
        let split = Self {
            party_slices,
            active_index,
        };
        split.validate(split.total_dims())?;
        Ok(split)
    }

    pub fn validate(&self, dims: usize) -> Result<(), VflError> {
        if self.party_slices.len() < 2 {
            return Err(VflError::InvalidSplit("need at least 2 parties".into()));
        }
        if self.active_index >= self.party_slices.len() {
            return Err(VflError::InvalidSplit("active index out of range".into()));
        }
        let mut seen = vec![false; dims];
        for (p, slice) in self.party_slices.iter().enumerate() {
            if slice.is_empty() {
                return Err(VflError::InvalidSplit(format!(
                    "party {p} holds no features"
                )));
            }
            for &f in slice {
                if f >= dims || std::mem::replace(&mut seen[f], true) {
                    return Err(VflError::InvalidSplit(format!(
                        "feature {f} is out of range or assigned twice"
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(VflError::InvalidSplit(
                "some features are unassigned".into(),
            ));
        }
        Ok(())
    }

    pub fn party_slices(&self) -> &[Vec<usize>] {
        &self.party_slices
    }

    pub fn active_index(&self) -> usize {
        self.active_index
    }

    pub fn num_parties(&self) -> usize {
        self.party_slices.len()
    }

    pub fn total_dims(&self) -> usize {
        self.party_slices.iter().map(Vec::len).sum()
    }

    pub fn active_slice(&self) -> &[usize] {
        &self.party_slices[self.active_index]
    }

    /// Union of all passive slices, ascending: the attack target.
    pub fn passive_columns(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = self
            .party_slices
            .iter()
            .enumerate()
            .filter(|(p, _)| *p != self.active_index)
            .flat_map(|(_, s)| s.iter().copied())
            .collect();
        cols.sort_unstable();
        cols
    }

    /// Cuts a full feature row into per-party inputs.
    pub fn partition(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.party_slices
            .iter()
            .map(|s| s.iter().map(|&f| x[f]).collect())
            .collect()
    }
}

/// Seeded split: the active party takes `floor(strength * d)` shuffled
/// columns, the rest are dealt near-evenly to the passive parties.
///
/// The active set depends only on `(d, strength, seed)`, so the attack
/// target is the same for any party count.
pub fn split_features(
    d: usize,
    n_parties: usize,
    strength: AttackStrength,
    seed: u64,
) -> Result<FeatureSplit, VflError> {
    if n_parties < 2 {
        return Err(VflError::InvalidSplit("need at least 2 parties".into()));
    }
    if d < n_parties {
        return Err(VflError::InvalidSplit(format!(
            "{d} features cannot cover {n_parties} parties"
        )));
    }
    let active = strength.active_dims(d);
    let passive = d - active;
    if active == 0 {
        return Err(VflError::InvalidSplit(
            "active party would hold no features".into(),
        ));
    }
    if passive < n_parties - 1 {
        return Err(VflError::InvalidSplit(format!(
            "{passive} passive features cannot fill {} passive parties",
            n_parties - 1
        )));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut seeded_rng(seed, 0));
    let mut active_cols = order[..active].to_vec();
    active_cols.sort_unstable();
    let mut rest = order[active..].to_vec();
    rest.sort_unstable();

    let n_passive = n_parties - 1;
    let (base, extra) = (passive / n_passive, passive % n_passive);
    let mut slices = vec![active_cols];
    let mut start = 0;
    for p in 0..n_passive {
        let len = base + usize::from(p < extra);
        slices.push(rest[start..start + len].to_vec());
        start += len;
    }
    FeatureSplit::new(slices, 0)
}

/// Joint model architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VflArchitecture {
    /// Linear parties, summed logits.
    LogisticRegression,
    /// Perceptron parties emitting embeddings, linear head over the concat.
    NeuralNet {
        hidden_units: usize,
        embedding_dim: usize,
    },
}

impl VflArchitecture {
    pub fn neural_net_default() -> Self {
        VflArchitecture::NeuralNet {
            hidden_units: 32,
            embedding_dim: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoordinatorHead {
    SumLogits { bias: Vec<f64> },
    ConcatHead { layer: DenseLayer },
}

/// Per-party sub-models plus the coordinator's aggregation rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointVflModel {
    split: FeatureSplit,
    parties: Vec<Model>,
    head: CoordinatorHead,
    classes: usize,
}

/// Gradients for every trainable piece of a [`JointVflModel`].
#[derive(Debug, Clone)]
pub struct JointGradient {
    pub parties: Vec<GradientBundle>,
    pub head: LayerGrad,
}

/// Forward-pass intermediates for one sample.
struct JointForward {
    party_outputs: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl JointVflModel {
    /// Seeded initialization. In logistic-regression mode one `K x d` matrix
    /// is drawn in global column order (bound `1/sqrt(d)`) and sliced per
    /// party, so the initial joint function does not depend on the split.
    pub fn init(
        split: &FeatureSplit,
        arch: VflArchitecture,
        classes: usize,
        seed: u64,
    ) -> Result<Self, VflError> {
        if classes < 2 {
            return Err(VflError::InvalidDataset("need at least 2 classes".into()));
        }
        let mut rng = seeded_rng(seed, STREAM_INIT);
        let d = split.total_dims();
        match arch {
            VflArchitecture::LogisticRegression => {
                let full = DenseLayer::init_uniform(d, classes, &mut rng);
                let parties = split
                    .party_slices()
                    .iter()
                    .map(|slice| {
                        let mut w = Vec::with_capacity(classes * slice.len());
                        for k in 0..classes {
                            w.extend(slice.iter().map(|&f| full.weight(k, f)));
                        }
                        let layer =
                            DenseLayer::from_parts(slice.len(), classes, w, vec![0.0; classes])?;
                        Ok(Model::Linear { layer })
                    })
                    .collect::<Result<Vec<_>, VflError>>()?;
                Ok(Self {
                    split: split.clone(),
                    parties,
                    head: CoordinatorHead::SumLogits {
                        bias: full.biases().to_vec(),
                    },
                    classes,
                })
            }
            VflArchitecture::NeuralNet {
                hidden_units,
                embedding_dim,
            } => {
                let parties = split
                    .party_slices()
                    .iter()
                    .map(|slice| {
                        Model::init(
                            &ModelSpec::mlp1(slice.len(), hidden_units, embedding_dim),
                            &mut rng,
                        )
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let layer = DenseLayer::init_uniform(
                    embedding_dim * split.num_parties(),
                    classes,
                    &mut rng,
                );
                Ok(Self {
                    split: split.clone(),
                    parties,
                    head: CoordinatorHead::ConcatHead { layer },
                    classes,
                })
            }
        }
    }

    /// Assembles a model from explicit parts, checking that party input
    /// widths match the split and that the head produces `classes` logits.
    pub fn from_parts(
        split: FeatureSplit,
        parties: Vec<Model>,
        head: CoordinatorHead,
        classes: usize,
    ) -> Result<Self, VflError> {
        let mismatch = |expected: usize, actual: usize| {
            VflError::Tensor(TensorError::DimensionMismatch { expected, actual })
        };
        if parties.len() != split.num_parties() {
            return Err(mismatch(split.num_parties(), parties.len()));
        }
        for (m, slice) in parties.iter().zip(split.party_slices()) {
            if m.input_dim() != slice.len() {
                return Err(mismatch(slice.len(), m.input_dim()));
            }
        }
        match &head {
            CoordinatorHead::SumLogits { bias } => {
                if bias.len() != classes {
                    return Err(mismatch(classes, bias.len()));
                }
                if let Some(m) = parties.iter().find(|m| m.output_dim() != classes) {
                    return Err(mismatch(classes, m.output_dim()));
                }
            }
            CoordinatorHead::ConcatHead { layer } => {
                let width: usize = parties.iter().map(Model::output_dim).sum();
                if layer.inputs() != width {
                    return Err(mismatch(width, layer.inputs()));
                }
                if layer.outputs() != classes {
                    return Err(mismatch(classes, layer.outputs()));
                }
            }
        }
        Ok(Self {
            split,
            parties,
            head,
            classes,
        })
    }

    pub fn split(&self) -> &FeatureSplit {
        &self.split
    }

    pub fn parties(&self) -> &[Model] {
        &self.parties
    }

    pub fn head(&self) -> &CoordinatorHead {
        &self.head
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.split.total_dims()
    }

    fn forward_parts_inner(&self, x_parts: &[Vec<f64>]) -> Result<JointForward, VflError> {
        if x_parts.len() != self.parties.len() {
            return Err(TensorError::DimensionMismatch {
                expected: self.parties.len(),
                actual: x_parts.len(),
            }
            .into());
        }
        let party_outputs = self
            .parties
            .iter()
            .zip(x_parts)
            .map(|(m, x)| m.forward(x))
            .collect::<Result<Vec<_>, _>>()?;
        let logits = match &self.head {
            CoordinatorHead::SumLogits { bias } => {
                let mut z = bias.clone();
                for out in &party_outputs {
                    for (a, b) in z.iter_mut().zip(out) {
                        *a += b;
                    }
                }
                z
            }
            CoordinatorHead::ConcatHead { layer } => layer.forward(&party_outputs.concat()),
        };
        Ok(JointForward {
            party_outputs,
            logits,
        })
    }

    pub fn logits_parts(&self, x_parts: &[Vec<f64>]) -> Result<Vec<f64>, VflError> {
        Ok(self.forward_parts_inner(x_parts)?.logits)
    }

    /// Logits for a full feature row in global column order.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, VflError> {
        self.check_full(x)?;
        self.logits_parts(&self.split.partition(x))
    }

    pub fn predict_scores(&self, x_parts: &[Vec<f64>]) -> Result<ConfidenceVector, VflError> {
        Ok(softmax(&self.logits_parts(x_parts)?)?)
    }

    fn check_full(&self, x: &[f64]) -> Result<(), VflError> {
        if x.len() != self.input_dim() {
            return Err(TensorError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            }
            .into());
        }
        Ok(())
    }

    fn backward_inner(
        &self,
        x_parts: &[Vec<f64>],
        fwd: &JointForward,
        upstream: &[f64],
    ) -> Result<JointGradient, VflError> {
        let (head, party_upstreams): (LayerGrad, Vec<Vec<f64>>) = match &self.head {
            CoordinatorHead::SumLogits { .. } => (
                LayerGrad {
                    weights: Vec::new(),
                    biases: upstream.to_vec(),
                },
                vec![upstream.to_vec(); self.parties.len()],
            ),
            CoordinatorHead::ConcatHead { layer } => {
                let (g, emb_grad) = layer.backward(&fwd.party_outputs.concat(), upstream);
                let mut offset = 0;
                let ups = fwd
                    .party_outputs
                    .iter()
                    .map(|o| {
                        let s = emb_grad[offset..offset + o.len()].to_vec();
                        offset += o.len();
                        s
                    })
                    .collect();
                (g, ups)
            }
        };
        let parties = self
            .parties
            .iter()
            .zip(x_parts)
            .zip(&party_upstreams)
            .map(|((m, x), up)| m.backward(x, up))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(JointGradient { parties, head })
    }

    /// Gradient of `upstream · logits` with respect to every parameter and
    /// every party input.
    pub fn backward_parts(
        &self,
        x_parts: &[Vec<f64>],
        upstream: &[f64],
    ) -> Result<JointGradient, VflError> {
        let fwd = self.forward_parts_inner(x_parts)?;
        self.backward_inner(x_parts, &fwd, upstream)
    }

    /// White-box input gradient in global column order.
    pub fn input_gradient(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>, VflError> {
        self.check_full(x)?;
        let grads = self.backward_parts(&self.split.partition(x), upstream)?;
        let mut out = vec![0.0; x.len()];
        for (slice, g) in self.split.party_slices().iter().zip(&grads.parties) {
            for (&f, v) in slice.iter().zip(&g.input) {
                out[f] = *v;
            }
        }
        Ok(out)
    }

    fn apply_gradient(&mut self, grad: &JointGradient, step: f64) {
        let sum_logits = matches!(self.head, CoordinatorHead::SumLogits { .. });
        for (m, g) in self.parties.iter_mut().zip(&grad.parties) {
            m.apply_gradient(g, step, !sum_logits);
        }
        match &mut self.head {
            CoordinatorHead::SumLogits { bias } => {
                for (b, g) in bias.iter_mut().zip(&grad.head.biases) {
                    *b -= step * g;
                }
            }
            CoordinatorHead::ConcatHead { layer } => layer.apply(&grad.head, step, true),
        }
    }

    /// Equivalent centralized linear model (logistic-regression mode only).
    pub fn to_centralized_linear(&self) -> Option<Model> {
        let CoordinatorHead::SumLogits { bias } = &self.head else {
            return None;
        };
        let d = self.input_dim();
        let mut w = vec![0.0; self.classes * d];
        for (slice, party) in self.split.party_slices().iter().zip(&self.parties) {
            let Model::Linear { layer } = party else {
                return None;
            };
            for k in 0..self.classes {
                for (i, &f) in slice.iter().enumerate() {
                    w[k * d + f] = layer.weight(k, i);
                }
            }
        }
        DenseLayer::from_parts(d, self.classes, w, bias.clone())
            .ok()
            .map(|layer| Model::Linear { layer })
    }
}

/// In-process stand-in for the secure channel between parties and the
/// coordinator. A real deployment would encrypt and authenticate here.
pub trait Transport {
    fn to_coordinator(&self, _party: usize, activation: Vec<f64>) -> Vec<f64> {
        activation
    }

    fn broadcast(&self, scores: TransformedScores) -> TransformedScores {
        scores
    }
}

/// Pass-through transport.
#[derive(Debug, Clone, Copy, Default)]
pub struct InProcess;

impl Transport for InProcess {}

/// Party forwards, coordinator aggregation, softmax, then the defense. Only
/// the defended vector leaves the coordinator.
pub fn infer<R: Rng + ?Sized>(
    model: &JointVflModel,
    x_parts: &[Vec<f64>],
    defense: &DefenseKind,
    rng: &mut R,
) -> Result<TransformedScores, VflError> {
    infer_with(&InProcess, model, x_parts, defense, rng)
}

pub fn infer_with<T: Transport, R: Rng + ?Sized>(
    transport: &T,
    model: &JointVflModel,
    x_parts: &[Vec<f64>],
    defense: &DefenseKind,
    rng: &mut R,
) -> Result<TransformedScores, VflError> {
    let received: Vec<Vec<f64>> = x_parts
        .iter()
        .enumerate()
        .map(|(p, x)| transport.to_coordinator(p, x.clone()))
        .collect();
    let scores = model.predict_scores(&received)?;
    Ok(transport.broadcast(defend(&scores, defense, rng)?))
}

/// Fraction of rows whose defended-score argmax equals the label.
pub fn evaluate_accuracy<R: Rng + ?Sized>(
    model: &JointVflModel,
    data: &Dataset,
    defense: &DefenseKind,
    rng: &mut R,
) -> Result<f64, VflError> {
    if data.is_empty() {
        return Err(VflError::InvalidDataset("evaluation split is empty".into()));
    }
    let mut correct = 0usize;
    for (x, &label) in data.features().iter_rows().zip(data.labels()) {
        let p = infer(model, &model.split().partition(x), defense, rng)?;
        if p.argmax() == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: JointVflModel,
    /// Undefended train accuracy after each epoch.
    pub accuracy_trace: Vec<f64>,
}

fn epoch_batches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Initializes from `seed` and trains with coordinator-computed gradients.
pub fn train_vfl(
    data: &Dataset,
    split: &FeatureSplit,
    arch: VflArchitecture,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, VflError> {
    split.validate(data.dims())?;
    let mut model = JointVflModel::init(split, arch, data.classes(), seed)?;
    let accuracy_trace = train_joint(&mut model, data, cfg, seed)?;
    Ok(TrainOutcome {
        model,
        accuracy_trace,
    })
}

/// Mini-batch gradient descent on cross-entropy; batch order is drawn from
/// `seed`. Every party receives the gradient of its own output from the
/// coordinator and updates locally.
pub fn train_joint(
    model: &mut JointVflModel,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>, VflError> {
    let mut shuffle = seeded_rng(seed, STREAM_SHUFFLE);
    let parts: Vec<Vec<Vec<f64>>> = data
        .features()
        .iter_rows()
        .map(|x| model.split.partition(x))
        .collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut correct = 0usize;
        for batch in epoch_batches(data.len(), cfg.batch_size, &mut shuffle) {
            let mut total: Option<JointGradient> = None;
            for &i in &batch {
                let fwd = model.forward_parts_inner(&parts[i])?;
                let probs = softmax(&fwd.logits).map_err(|_| VflError::Divergence { epoch })?;
                if probs.argmax() == data.labels()[i] {
                    correct += 1;
                }
                let (loss, g) = cross_entropy_with_grad(&probs, data.labels()[i])?;
                if !loss.is_finite() {
                    return Err(VflError::Divergence { epoch });
                }
                let grad = model.backward_inner(&parts[i], &fwd, &g)?;
                match &mut total {
                    None => total = Some(grad),
                    Some(t) => {
                        for (a, b) in t.parties.iter_mut().zip(&grad.parties) {
                            a.add_assign(b);
                        }
                        t.head.add_assign(&grad.head);
                    }
                }
            }
            if let Some(t) = total {
                model.apply_gradient(&t, cfg.learning_rate / batch.len() as f64);
            }
        }
        if model.parties.iter().any(|m| !m.is_finite()) {
            return Err(VflError::Divergence { epoch });
        }
        trace.push(correct as f64 / data.len().max(1) as f64);
    }
    Ok(trace)
}

/// Centralized counterpart of [`train_joint`] for a single linear model on
/// the full feature rows, with the same batch schedule.
pub fn train_centralized(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>, VflError> {
    let mut shuffle = seeded_rng(seed, STREAM_SHUFFLE);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut correct = 0usize;
        for batch in epoch_batches(data.len(), cfg.batch_size, &mut shuffle) {
            let mut total = GradientBundle::zeros_like(model);
            for &i in &batch {
                let x = data.features().row(i);
                let probs =
                    softmax(&model.forward(x)?).map_err(|_| VflError::Divergence { epoch })?;
                if probs.argmax() == data.labels()[i] {
                    correct += 1;
                }
                let (loss, g) = cross_entropy_with_grad(&probs, data.labels()[i])?;
                if !loss.is_finite() {
                    return Err(VflError::Divergence { epoch });
                }
                total.add_assign(&model.backward(x, &g)?);
            }
            model.apply_gradient(&total, cfg.learning_rate / batch.len() as f64, true);
        }
        trace.push(correct as f64 / data.len().max(1) as f64);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::preserves_order;

    fn strength(f: f64) -> AttackStrength {
        AttackStrength::new(f).unwrap()
    }

    #[test]
    fn split_examples() {
        let s = split_features(10, 2, strength(0.5), 1).unwrap();
        assert_eq!(s.party_slices()[0].len(), 5);
        assert_eq!(s.party_slices()[1].len(), 5);

        let s = split_features(8, 2, strength(0.25), 1).unwrap();
        assert_eq!(s.active_slice().len(), 2);
        assert_eq!(s.passive_columns().len(), 6);

        let s = split_features(12, 4, strength(0.5), 1).unwrap();
        let lens: Vec<usize> = s.party_slices().iter().map(Vec::len).collect();
        assert_eq!(lens, vec![6, 2, 2, 2]);
        s.validate(12).unwrap();
    }

    #[test]
    fn split_rejections() {
        assert!(split_features(10, 1, strength(0.5), 0).is_err());
        assert!(split_features(3, 4, strength(0.5), 0).is_err());
        // 0.9 of 10 leaves one passive column for two passive parties
        assert!(split_features(10, 3, strength(0.9), 0).is_err());
        assert!(split_features(10, 2, strength(0.05), 0).is_err());
        assert!(AttackStrength::new(1.0).is_err());
        assert!(AttackStrength::new(0.0).is_err());
        assert!(FeatureSplit::new(vec![vec![0, 1], vec![1]], 0).is_err());
        assert!(FeatureSplit::new(vec![vec![0], vec![]], 0).is_err());
    }

    #[test]
    fn active_set_independent_of_party_count() {
        let a = split_features(18, 2, strength(0.5), 9).unwrap();
        let b = split_features(18, 10, strength(0.5), 9).unwrap();
        assert_eq!(a.active_slice(), b.active_slice());
        assert_eq!(a.passive_columns(), b.passive_columns());
    }

    fn toy_dataset() -> Dataset {
        // two separable clusters on 4 features
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let t = (i % 10) as f64 / 50.0;
            if i % 2 == 0 {
                rows.push(vec![0.1 + t, 0.2, 0.15 + t, 0.1]);
                labels.push(0);
            } else {
                rows.push(vec![0.8 - t, 0.7, 0.9 - t, 0.85]);
                labels.push(1);
            }
        }
        Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap()
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let data = toy_dataset();
        let split = split_features(4, 2, strength(0.5), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        for arch in [
            VflArchitecture::LogisticRegression,
            VflArchitecture::neural_net_default(),
        ] {
            let out = train_vfl(&data, &split, arch, &cfg, 7).unwrap();
            assert_eq!(out.model, JointVflModel::init(&split, arch, 2, 7).unwrap());
            assert!(out.accuracy_trace.is_empty());
        }
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let data = toy_dataset();
        let split = split_features(4, 2, strength(0.5), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 0.5,
        };
        for arch in [
            VflArchitecture::LogisticRegression,
            VflArchitecture::neural_net_default(),
        ] {
            let a = train_vfl(&data, &split, arch, &cfg, 11).unwrap();
            let b = train_vfl(&data, &split, arch, &cfg, 11).unwrap();
            assert_eq!(a.model, b.model);
            let acc = evaluate_accuracy(&a.model, &data, &DefenseKind::None, &mut seeded_rng(0, 0))
                .unwrap();
            assert_eq!(acc, 1.0, "{arch:?}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let data = toy_dataset();
        let split = split_features(4, 2, strength(0.5), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            learning_rate: 1e308,
        };
        let err = train_vfl(
            &data,
            &split,
            VflArchitecture::neural_net_default(),
            &cfg,
            1,
        );
        assert!(matches!(err, Err(VflError::Divergence { .. })), "{err:?}");
    }

    #[test]
    fn infer_without_defense_is_softmax() {
        let data = toy_dataset();
        let split = split_features(4, 2, strength(0.5), 3).unwrap();
        let model = JointVflModel::init(&split, VflArchitecture::LogisticRegression, 2, 5).unwrap();
        let parts = split.partition(data.features().row(0));
        let p = infer(&model, &parts, &DefenseKind::None, &mut seeded_rng(0, 0)).unwrap();
        assert_eq!(p.values(), model.predict_scores(&parts).unwrap().values());

        let dp = DefenseKind::privee_dp(0.1).unwrap();
        let q = infer(&model, &parts, &dp, &mut seeded_rng(0, 0)).unwrap();
        assert_eq!(q.argmax(), p.argmax());
        assert!(preserves_order(p.values(), q.values()));

        assert!(infer(
            &model,
            &parts[..1],
            &DefenseKind::None,
            &mut seeded_rng(0, 0)
        )
        .is_err());
        assert!(model.logits(&[0.0; 3]).is_err());
    }

    #[test]
    fn centralized_view_matches_joint_logits() {
        let split = split_features(6, 3, strength(0.5), 4).unwrap();
        let model = JointVflModel::init(&split, VflArchitecture::LogisticRegression, 3, 8).unwrap();
        let central = model.to_centralized_linear().unwrap();
        let x = [0.1, 0.9, 0.4, 0.3, 0.7, 0.5];
        let a = model.logits(&x).unwrap();
        let b = central.forward(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn csv_ingestion() {
        let text = "f1,label,f2\n1.0,0,10\n3.0,1,20\n2.0,1,30\n";
        let d = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.classes(), 2);
        assert_eq!(d.labels(), &[0, 1, 1]);
        assert_eq!(d.features().row(0), &[0.0, 0.0]);
        assert_eq!(d.features().row(2), &[0.5, 1.0]);

        let bad = "f1,label\n1.0,0\nabc,1\n";
        match Dataset::from_csv_reader(bad.as_bytes()) {
            Err(VflError::CsvCell { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "f1", "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Dataset::from_csv_reader("a,b\n1,2\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("f,label\n1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn dataset_validation_and_split() {
        let m = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(Dataset::new(m.clone(), vec![0, 2], 2).is_err());
        assert!(Dataset::new(m.clone(), vec![0], 2).is_err());
        let data = toy_dataset();
        let s = data.split(0.75, 1).unwrap();
        assert_eq!(s.train.len(), 30);
        assert_eq!(s.test.len(), 10);
        assert!(data.split(1.0, 1).is_err());
    }
}
