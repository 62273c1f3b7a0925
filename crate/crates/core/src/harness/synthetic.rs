//! Gaussian-blob classification data.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;
use crate::vfl::{seeded_rng, Dataset, VflError};

/// Class centres are drawn with per-coordinate standard deviation `margin`;
/// samples add unit-variance noise around their centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dims: usize,
    pub samples: usize,
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), VflError> {
        if self.classes < 2 || self.dims == 0 || self.samples < self.classes {
            return Err(VflError::InvalidDataset(format!(
                "synthetic spec needs classes >= 2, dims >= 1 and samples >= classes, got {self:?}"
            )));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(VflError::InvalidDataset("margin must be positive".into()));
        }
        Ok(())
    }
}

/// Balanced labels (counts differ by at most one), features min-max scaled
/// to `[0, 1]`. Bitwise deterministic per spec.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset, VflError> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, 0);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let centres: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.dims).map(|_| spec.margin * normal()).collect())
        .collect();
    let mut labels: Vec<usize> = (0..spec.samples).map(|i| i % spec.classes).collect();
    let mut data = Vec::with_capacity(spec.samples * spec.dims);
    for &label in &labels {
        data.extend(centres[label].iter().map(|c| c + normal()));
    }
    let mut order: Vec<usize> = (0..spec.samples).collect();
    order.shuffle(&mut seeded_rng(spec.seed, 1));
    let raw = Matrix::from_vec(spec.samples, spec.dims, data)?.select_rows(&order);
    labels = order.iter().map(|&i| labels[i]).collect();
    Dataset::new(Dataset::min_max_scaled(&raw), labels, spec.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 4,
            dims: 6,
            samples: 1000,
            margin: 3.0,
            seed: 5,
        }
    }

    #[test]
    fn deterministic_and_scaled() {
        let a = make_synthetic(&spec()).unwrap();
        let b = make_synthetic(&spec()).unwrap();
        assert_eq!(a, b);
        assert!(a.features().data().iter().all(|v| (0.0..=1.0).contains(v)));
        let other = make_synthetic(&SyntheticSpec { seed: 6, ..spec() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn labels_near_uniform() {
        let d = make_synthetic(&SyntheticSpec {
            classes: 7,
            ..spec()
        })
        .unwrap();
        let mut counts = [0usize; 7];
        for &l in d.labels() {
            counts[l] += 1;
        }
        let expected = 1000.0 / 7.0;
        for c in counts {
            assert!((c as f64 - expected).abs() <= 0.05 * expected, "{counts:?}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(make_synthetic(&SyntheticSpec {
            classes: 1,
            ..spec()
        })
        .is_err());
        assert!(make_synthetic(&SyntheticSpec {
            margin: 0.0,
            ..spec()
        })
        .is_err());
        assert!(make_synthetic(&SyntheticSpec {
            samples: 2,
            ..spec()
        })
        .is_err());
    }
}
