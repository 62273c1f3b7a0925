//! Defense latency micro-benchmark.

use std::time::Instant;

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::defense::{defend, DefenseKind};
use crate::score::ConfidenceVector;
use crate::vfl::seeded_rng;

/// Minimum timed calls per point.
pub const MIN_CALLS: usize = 1000;
const WARMUP_CALLS: usize = 100;
const POOL_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub defense: String,
    pub classes: usize,
    pub calls: usize,
    pub mean_seconds: f64,
    pub p95_seconds: f64,
}

/// Uniform draw from the probability simplex (normalized exponentials).
pub fn random_simplex<R: rand::Rng + ?Sized>(k: usize, rng: &mut R) -> ConfidenceVector {
    loop {
        let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        if let Ok(c) = ConfidenceVector::new(raw.iter().map(|v| v / total).collect()) {
            return c;
        }
    }
}

/// Times `defend` on random simplex vectors for every `(kind, K)` pair.
/// Each point discards warm-up calls, then records `calls` individually
/// timed calls on a monotonic clock.
pub fn bench_defense_scaling(
    kinds: &[DefenseKind],
    classes: &[usize],
    calls: usize,
    seed: u64,
) -> Result<Vec<BenchPoint>, HarnessError> {
    if kinds.is_empty() || classes.is_empty() {
        return Err(HarnessError::Config("nothing to benchmark".into()));
    }
    if classes[0] < 2 || classes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Config(
            "class counts must be ascending and at least 2".into(),
        ));
    }
    if calls < MIN_CALLS {
        return Err(HarnessError::Config(format!(
            "need at least {MIN_CALLS} calls per point, got {calls}"
        )));
    }
    for kind in kinds {
        kind.validate()?;
    }
    let mut points = Vec::with_capacity(kinds.len() * classes.len());
    for kind in kinds {
        for &k in classes {
            let mut rng = seeded_rng(seed, k as u64);
            let pool: Vec<ConfidenceVector> = (0..POOL_SIZE)
                .map(|_| random_simplex(k, &mut rng))
                .collect();
            for c in pool.iter().cycle().take(WARMUP_CALLS) {
                std::hint::black_box(defend(c, kind, &mut rng)?);
            }
            let mut times = Vec::with_capacity(calls);
            for c in pool.iter().cycle().take(calls) {
                let started = Instant::now();
                let out = defend(std::hint::black_box(c), kind, &mut rng)?;
                times.push(started.elapsed().as_secs_f64());
                std::hint::black_box(out);
            }
            let mean_seconds = times.iter().sum::<f64>() / calls as f64;
            times.sort_by(f64::total_cmp);
            let p95_seconds = times[(calls * 95).div_ceil(100) - 1];
            points.push(BenchPoint {
                defense: kind.label(),
                classes: k,
                calls,
                mean_seconds,
                p95_seconds,
            });
        }
    }
    Ok(points)
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than two
/// distinct positive x values or any non-positive value.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Mean-latency slope of one defense's points.
pub fn bench_slope(points: &[BenchPoint], defense: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.defense == defense)
        .map(|p| (p.classes as f64, p.mean_seconds))
        .collect();
    loglog_slope(&pts)
}

pub fn bench_to_csv(points: &[BenchPoint]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)
            .map_err(|e| HarnessError::Format(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Format(e.to_string()))
}

pub fn bench_from_csv(text: &str) -> Result<Vec<BenchPoint>, HarnessError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| HarnessError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_laws() {
        let lin: Vec<(f64, f64)> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|&x| (x, 3.0 * x))
            .collect();
        assert!((loglog_slope(&lin).unwrap() - 1.0).abs() < 1e-12);
        let quad: Vec<(f64, f64)> = [2.0, 4.0, 8.0].iter().map(|&x| (x, x * x)).collect();
        assert!((loglog_slope(&quad).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(loglog_slope(&[(1.0, 1.0)]), None);
        assert_eq!(loglog_slope(&[(1.0, 0.0), (2.0, 1.0)]), None);
    }

    #[test]
    fn bench_points_and_csv_round_trip() {
        let kinds = [
            DefenseKind::privee_dp(0.1).unwrap(),
            DefenseKind::Round { digits: 2 },
        ];
        let pts = bench_defense_scaling(&kinds, &[2, 16], MIN_CALLS, 3).unwrap();
        assert_eq!(pts.len(), 4);
        for p in &pts {
            assert!(p.mean_seconds > 0.0 && p.p95_seconds > 0.0);
            assert_eq!(p.calls, MIN_CALLS);
        }
        let csv = bench_to_csv(&pts).unwrap();
        assert!(csv.starts_with("defense,classes,calls,mean_seconds,p95_seconds"));
        assert_eq!(bench_from_csv(&csv).unwrap(), pts);
    }

    #[test]
    fn rejects_bad_inputs() {
        let k = [DefenseKind::None];
        assert!(bench_defense_scaling(&k, &[10, 5], MIN_CALLS, 0).is_err());
        assert!(bench_defense_scaling(&k, &[1, 5], MIN_CALLS, 0).is_err());
        assert!(bench_defense_scaling(&k, &[5], 10, 0).is_err());
        assert!(bench_defense_scaling(&[], &[5], MIN_CALLS, 0).is_err());
    }

    #[test]
    fn random_simplex_is_valid() {
        let mut rng = seeded_rng(0, 0);
        for k in [2, 10, 1000] {
            let c = random_simplex(k, &mut rng);
            assert_eq!(c.num_classes(), k);
        }
    }
}
