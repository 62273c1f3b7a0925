//! Confidence vectors, ranking, and the two order-preserving orthonormal
//! transforms.
//!
//! A [`ConfidenceVector`] is a point on the probability simplex as emitted by
//! the coordinator's softmax. Ranks follow the convention that the most
//! confident class gets rank 1; exact ties are broken by ascending class
//! index so that every rank computation is deterministic.
//!
//! The reflection transform `A = I - (2/K) 11ᵀ` is never materialized on the
//! hot path: `A c = c - (2/K)(Σc) 1`, which is O(K).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on `|Σc - 1|` accepted for a confidence vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("class count must be at least 2, got {0}")]
    TooFewClasses(usize),
    #[error("entry {index} is {value}, expected a finite non-negative probability")]
    InvalidEntry { index: usize, value: f64 },
    #[error("entries sum to {0}, expected 1 within {SIMPLEX_TOLERANCE:e}")]
    NotNormalized(f64),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

/// Probability vector over `K >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ConfidenceVector(Vec<f64>);

impl ConfidenceVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ScoreError> {
        if values.len() < 2 {
            return Err(ScoreError::TooFewClasses(values.len()));
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(ScoreError::InvalidEntry { index, value });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(ScoreError::NotNormalized(sum));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn rank(&self) -> RankVector {
        rank(self)
    }
}

impl TryFrom<Vec<f64>> for ConfidenceVector {
    type Error = ScoreError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ConfidenceVector> for Vec<f64> {
    fn from(c: ConfidenceVector) -> Self {
        c.0
    }
}

/// Per-class ranks, 1-based; rank 1 belongs to the largest score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankVector(Vec<usize>);

impl RankVector {
    pub fn ranks(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Order-preserving orthonormal transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    #[default]
    Identity,
    /// `I_K - (2/K) 1 1ᵀ`.
    Reflection,
}

impl TransformKind {
    /// Computes `A x` in O(K).
    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        match self {
            TransformKind::Identity => x.to_vec(),
            TransformKind::Reflection => {
                let k = x.len() as f64;
                let shift = 2.0 / k * x.iter().sum::<f64>();
                x.iter().map(|&v| v - shift).collect()
            }
        }
    }

    /// Diagonal entry `A_jj` for a `K`-class problem.
    pub fn diagonal(self, k: usize) -> f64 {
        match self {
            TransformKind::Identity => 1.0,
            TransformKind::Reflection => 1.0 - 2.0 / k as f64,
        }
    }

    /// Dense `K x K` matrix, row-major. Only used for checks.
    pub fn matrix(self, k: usize) -> Vec<Vec<f64>> {
        let off = match self {
            TransformKind::Identity => 0.0,
            TransformKind::Reflection => -2.0 / k as f64,
        };
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| if i == j { self.diagonal(k) } else { off })
                    .collect()
            })
            .collect()
    }
}

/// Scores after a transform or perturbation. Possibly negative and not
/// normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransformedScores(Vec<f64>);

impl TransformedScores {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl From<ConfidenceVector> for TransformedScores {
    fn from(c: ConfidenceVector) -> Self {
        Self(c.0)
    }
}

/// Class indices ordered from highest to lowest score, ties by index.
pub fn argsort_descending(values: &[f64]) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = values.iter().copied().zip(0..).collect();
    keyed.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// First index of the maximum entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Ranks of arbitrary finite scores (rank 1 = largest).
pub fn rank_of(values: &[f64]) -> Result<RankVector, ScoreError> {
    if values.len() < 2 {
        return Err(ScoreError::TooFewClasses(values.len()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(ScoreError::NonFinite(i));
    }
    let order = argsort_descending(values);
    let mut ranks = vec![0; values.len()];
    for (position, &class) in order.iter().enumerate() {
        ranks[class] = position + 1;
    }
    Ok(RankVector(ranks))
}

pub fn rank(c: &ConfidenceVector) -> RankVector {
    rank_of(c.values()).expect("confidence vectors are finite with K >= 2")
}

pub fn apply_transform(kind: TransformKind, c: &ConfidenceVector) -> TransformedScores {
    TransformedScores(kind.apply(c.values()))
}

/// Largest absolute entry of `AᵀA - I_K`.
pub fn orthonormality_residual(kind: TransformKind, k: usize) -> Result<f64, ScoreError> {
    if k < 2 {
        return Err(ScoreError::TooFewClasses(k));
    }
    let a = kind.matrix(k);
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let dot: f64 = (0..k).map(|r| a[r][i] * a[r][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    Ok(worst)
}

/// True when `image` orders classes the same way as `source`.
///
/// Strictly ordered source pairs must stay strictly ordered; classes tied
/// in the source may appear in any order in the image.
pub fn preserves_order(source: &[f64], image: &[f64]) -> bool {
    if source.len() != image.len() {
        return false;
    }
    let order = argsort_descending(source);
    // Walk groups of equal source values; every image value in a group must
    // be strictly below every image value of the previous group.
    let mut prev_group_min = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_min = f64::INFINITY;
        let mut group_max = f64::NEG_INFINITY;
        while j < order.len() && source[order[j]] == source[order[i]] {
            group_min = group_min.min(image[order[j]]);
            group_max = group_max.max(image[order[j]]);
            j += 1;
        }
        if group_max >= prev_group_min {
            return false;
        }
        prev_group_min = group_min;
        i = j;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(v: &[f64]) -> ConfidenceVector {
        ConfidenceVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&cv(&[0.2, 0.5, 0.3])).ranks(), &[3, 1, 2]);
        assert_eq!(rank(&cv(&[1.0, 0.0])).ranks(), &[1, 2]);
        assert_eq!(rank(&cv(&[0.25; 4])).ranks(), &[1, 2, 3, 4]);
    }

    #[test]
    fn rejects_invalid_vectors() {
        assert_eq!(
            ConfidenceVector::new(vec![1.0]),
            Err(ScoreError::TooFewClasses(1))
        );
        assert!(matches!(
            ConfidenceVector::new(vec![0.5, 0.6]),
            Err(ScoreError::NotNormalized(_))
        ));
        assert!(matches!(
            ConfidenceVector::new(vec![1.5, -0.5]),
            Err(ScoreError::InvalidEntry { index: 1, .. })
        ));
        assert!(matches!(
            ConfidenceVector::new(vec![f64::NAN, 1.0]),
            Err(ScoreError::InvalidEntry { index: 0, .. })
        ));
        // round-off within tolerance is fine
        assert!(ConfidenceVector::new(vec![0.5, 0.5 + 5e-10]).is_ok());
        assert_eq!(rank_of(&[0.3]), Err(ScoreError::TooFewClasses(1)));
    }

    #[test]
    fn transform_examples() {
        let id = apply_transform(TransformKind::Identity, &cv(&[0.7, 0.3]));
        assert_eq!(id.values(), &[0.7, 0.3]);

        let r = apply_transform(TransformKind::Reflection, &cv(&[0.7, 0.3]));
        assert!((r.values()[0] + 0.3).abs() < 1e-15);
        assert!((r.values()[1] + 0.7).abs() < 1e-15);

        let r4 = apply_transform(TransformKind::Reflection, &cv(&[0.25; 4]));
        for v in r4.values() {
            assert!((v + 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn fast_reflection_matches_dense_matrix() {
        let c = [0.1, 0.05, 0.4, 0.25, 0.2];
        let dense = TransformKind::Reflection.matrix(5);
        let fast = TransformKind::Reflection.apply(&c);
        for i in 0..5 {
            let expected: f64 = (0..5).map(|j| dense[i][j] * c[j]).sum();
            assert!((expected - fast[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn residual_examples() {
        assert_eq!(
            orthonormality_residual(TransformKind::Identity, 10).unwrap(),
            0.0
        );
        assert_eq!(
            orthonormality_residual(TransformKind::Reflection, 2).unwrap(),
            0.0
        );
        assert!(orthonormality_residual(TransformKind::Reflection, 100).unwrap() <= 1e-12);
        assert!(orthonormality_residual(TransformKind::Identity, 1).is_err());
    }

    #[test]
    fn order_check_handles_ties() {
        assert!(preserves_order(&[0.5, 0.5, 0.0], &[0.2, 0.3, 0.1]));
        assert!(!preserves_order(&[0.6, 0.4], &[0.1, 0.2]));
        assert!(!preserves_order(&[0.6, 0.4], &[0.1, 0.1]));
        assert!(!preserves_order(&[0.6, 0.4], &[0.1]));
    }

    #[test]
    fn serde_rejects_off_simplex() {
        let ok: ConfidenceVector = serde_json::from_str("[0.25,0.75]").unwrap();
        assert_eq!(ok.values(), &[0.25, 0.75]);
        assert!(serde_json::from_str::<ConfidenceVector>("[0.25,0.25]").is_err());
    }
}
