//! Reconstruction error and guess baselines.

use thiserror::Error;

use crate::tensor::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: truth is {truth:?}, estimate is {estimate:?}")]
    ShapeMismatch {
        truth: (usize, usize),
        estimate: (usize, usize),
    },
    #[error("cannot average over an empty matrix")]
    Empty,
}

/// Per-row mean squared error.
pub fn per_sample_squared_error(
    truth: &Matrix,
    estimate: &Matrix,
) -> Result<Vec<f64>, MetricError> {
    check_shapes(truth, estimate)?;
    Ok(truth
        .iter_rows()
        .zip(estimate.iter_rows())
        .map(|(t, e)| t.iter().zip(e).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / t.len() as f64)
        .collect())
}

/// `(1 / (n d)) Σ (x̂ - x)²` over all samples and target dimensions.
pub fn reconstruction_mse(truth: &Matrix, estimate: &Matrix) -> Result<f64, MetricError> {
    check_shapes(truth, estimate)?;
    let total: f64 = truth
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(a, b)| (b - a) * (b - a))
        .sum();
    Ok(total / truth.data().len() as f64)
}

fn check_shapes(truth: &Matrix, estimate: &Matrix) -> Result<(), MetricError> {
    if (truth.rows(), truth.cols()) != (estimate.rows(), estimate.cols()) {
        return Err(MetricError::ShapeMismatch {
            truth: (truth.rows(), truth.cols()),
            estimate: (estimate.rows(), estimate.cols()),
        });
    }
    if truth.data().is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// MSE of guessing 0.5 for every feature of `Uniform[0, 1]` data.
pub const UNIFORM_GUESS_MSE: f64 = 1.0 / 12.0;

/// Empirical MSE of guessing 0.5 for every entry: `mean((x - 0.5)²)`.
pub fn random_guess_baseline(target: &Matrix) -> Result<f64, MetricError> {
    if target.data().is_empty() {
        return Err(MetricError::Empty);
    }
    let total: f64 = target.data().iter().map(|x| (x - 0.5) * (x - 0.5)).sum();
    Ok(total / target.data().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let z = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(reconstruction_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(reconstruction_mse(&a, &z).unwrap(), 1.0);
        assert_eq!(per_sample_squared_error(&a, &z).unwrap(), vec![1.0]);
        let wide = Matrix::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            reconstruction_mse(&a, &wide),
            Err(MetricError::ShapeMismatch { .. })
        ));
        let empty = Matrix::zeros(0, 2);
        assert_eq!(reconstruction_mse(&empty, &empty), Err(MetricError::Empty));
    }

    #[test]
    fn guess_baseline_examples() {
        let half = Matrix::from_rows(&[vec![0.5; 3], vec![0.5; 3]]).unwrap();
        assert_eq!(random_guess_baseline(&half).unwrap(), 0.0);
        // fine uniform grid approaches 1/12
        let n = 100_001;
        let grid: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect();
        let m = Matrix::from_rows(&grid).unwrap();
        assert!((random_guess_baseline(&m).unwrap() - UNIFORM_GUESS_MSE).abs() < 1e-5);
    }
}
