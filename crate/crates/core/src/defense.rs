//! Confidence-score defenses.
//!
//! The two rank-aware perturbations (uniform budget and per-class budget)
//! follow the diagonal-perturbation scheme: every class draws `u_j` from the
//! sub-interval of `[0, 1)` selected by its rank, so that noise is monotone
//! in confidence, and the output is `p = A c + u ⊙ σ ⊙ c`. Outputs are never
//! renormalized.
//!
//! Baselines: decimal rounding, additive Gaussian noise, and a keyed
//! monotone encoding that stands in for order-preserving encryption.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{
    argsort_descending, rank, ConfidenceVector, ScoreError, TransformKind, TransformedScores,
};

/// Absolute tolerance used by [`feasibility_probe`].
pub const PROBE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DefenseError {
    #[error("invalid privacy budget: {0}")]
    InvalidBudget(String),
    #[error("perturbation plan has {plan} scales but the score vector has {scores} classes")]
    PlanLength { plan: usize, scores: usize },
    #[error("noise scale {0} is not a finite non-negative number")]
    InvalidSigma(f64),
    #[error("uniform-budget plan requires equal scales")]
    UnequalUniformScales,
    #[error("rounding digits must be in 1..=12, got {0}")]
    InvalidDigits(u32),
    #[error("feasibility probe supports K in {{2, 3}}, got {0}")]
    ProbeUnsupported(usize),
    #[error("grid resolution must be positive")]
    InvalidGrid,
    #[error(transparent)]
    Score(#[from] ScoreError),
}

/// Parameters of the Gaussian-mechanism scale formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_sensitivity")]
    pub sensitivity: f64,
}

fn default_delta() -> f64 {
    1e-5
}

fn default_sensitivity() -> f64 {
    1.0
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, sensitivity: f64) -> Result<Self, DefenseError> {
        let budget = Self {
            epsilon,
            delta,
            sensitivity,
        };
        budget.validate()?;
        Ok(budget)
    }

    /// Budget with the default `δ = 1e-5` and `Δf = 1`.
    pub fn with_epsilon(epsilon: f64) -> Result<Self, DefenseError> {
        Self::new(epsilon, default_delta(), default_sensitivity())
    }

    pub fn validate(&self) -> Result<(), DefenseError> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(DefenseError::InvalidBudget(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DefenseError::InvalidBudget(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.sensitivity.is_finite() && self.sensitivity > 0.0) {
            return Err(DefenseError::InvalidBudget(format!(
                "sensitivity must be positive, got {}",
                self.sensitivity
            )));
        }
        Ok(())
    }
}

/// `σ = sqrt(2 ln(1.25/δ) Δf² / ε²)`.
pub fn gaussian_sigma(budget: &PrivacyBudget) -> Result<f64, DefenseError> {
    if budget.delta >= 1.25 {
        return Err(DefenseError::InvalidBudget(format!(
            "delta {} makes ln(1.25/delta) non-positive",
            budget.delta
        )));
    }
    budget.validate()?;
    let PrivacyBudget {
        epsilon,
        delta,
        sensitivity,
    } = *budget;
    Ok((2.0 * (1.25 / delta).ln() * sensitivity * sensitivity / (epsilon * epsilon)).sqrt())
}

/// How `u_j` is drawn inside its sub-interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    Random,
    /// Interval midpoints; makes the algorithm hand-checkable.
    Midpoint,
}

/// Rank-aware uniform draws for one score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub u: Vec<f64>,
    /// 1-based sub-interval index `k_j = K + 1 - rank_j`.
    pub interval_indices: Vec<usize>,
}

/// Draws `u_j ~ U[(k_j - 1)/K, k_j/K)` with `k_j = K + 1 - rank(c)_j`.
pub fn sample_noise<R: Rng + ?Sized>(
    c: &ConfidenceVector,
    mode: SamplingMode,
    rng: &mut R,
) -> NoiseDraw {
    let k = c.num_classes();
    let kf = k as f64;
    let ranks = rank(c);
    let mut u = Vec::with_capacity(k);
    let mut interval_indices = Vec::with_capacity(k);
    for &r in ranks.ranks() {
        let interval = k + 1 - r;
        let lower = (interval - 1) as f64;
        let offset = match mode {
            SamplingMode::Random => rng.random::<f64>(),
            SamplingMode::Midpoint => 0.5,
        };
        // keep the half-open upper bound even when the sum rounds up
        let value = ((lower + offset) / kf).min((interval as f64 / kf).next_down());
        u.push(value);
        interval_indices.push(interval);
    }
    NoiseDraw {
        u,
        interval_indices,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// One shared σ.
    UniformBudget,
    /// Distinct σ per class, handed out by rank.
    PerClassBudget,
}

/// Noise scales and transform for one perturbation call.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationPlan {
    kind: TransformKind,
    /// Ascending.
    sigmas: Vec<f64>,
    mode: BudgetMode,
}

impl PerturbationPlan {
    pub fn uniform(kind: TransformKind, sigma: f64, k: usize) -> Result<Self, DefenseError> {
        check_sigma(sigma)?;
        Ok(Self {
            kind,
            sigmas: vec![sigma; k],
            mode: BudgetMode::UniformBudget,
        })
    }

    /// Per-class scales in any order. They are sorted ascending and the
    /// smallest goes to the least confident class at perturbation time,
    /// which keeps `u_i σ_i < u_j σ_j` whenever `c_i < c_j`.
    pub fn per_class(kind: TransformKind, mut sigmas: Vec<f64>) -> Result<Self, DefenseError> {
        for &s in &sigmas {
            check_sigma(s)?;
        }
        sigmas.sort_by(f64::total_cmp);
        Ok(Self {
            kind,
            sigmas,
            mode: BudgetMode::PerClassBudget,
        })
    }

    /// Validates an explicitly constructed plan.
    pub fn from_parts(
        kind: TransformKind,
        sigmas: Vec<f64>,
        mode: BudgetMode,
    ) -> Result<Self, DefenseError> {
        match mode {
            BudgetMode::UniformBudget => {
                if sigmas.windows(2).any(|w| w[0] != w[1]) {
                    return Err(DefenseError::UnequalUniformScales);
                }
                let sigma = sigmas.first().copied().unwrap_or(0.0);
                Self::uniform(kind, sigma, sigmas.len())
            }
            BudgetMode::PerClassBudget => Self::per_class(kind, sigmas),
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn mode(&self) -> BudgetMode {
        self.mode
    }

    pub fn num_classes(&self) -> usize {
        self.sigmas.len()
    }

    /// Scale for the class sitting in 1-based sub-interval `interval`.
    fn sigma_for_interval(&self, interval: usize) -> f64 {
        self.sigmas[interval - 1]
    }
}

fn check_sigma(sigma: f64) -> Result<(), DefenseError> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(DefenseError::InvalidSigma(sigma))
    }
}

/// Output of a perturbation together with the per-class effective noise
/// `σ_j u_j`, for checks that need the hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationTrace {
    pub scores: TransformedScores,
    pub draw: NoiseDraw,
    /// `σ_j u_j` after rank-based scale assignment.
    pub noise: Vec<f64>,
}

/// `p_j = (A c)_j + u_j σ_j c_j`.
pub fn privee_perturb<R: Rng + ?Sized>(
    c: &ConfidenceVector,
    plan: &PerturbationPlan,
    sampling: SamplingMode,
    rng: &mut R,
) -> Result<TransformedScores, DefenseError> {
    privee_perturb_traced(c, plan, sampling, rng).map(|t| t.scores)
}

pub fn privee_perturb_traced<R: Rng + ?Sized>(
    c: &ConfidenceVector,
    plan: &PerturbationPlan,
    sampling: SamplingMode,
    rng: &mut R,
) -> Result<PerturbationTrace, DefenseError> {
    let k = c.num_classes();
    if plan.num_classes() != k {
        return Err(DefenseError::PlanLength {
            plan: plan.num_classes(),
            scores: k,
        });
    }
    let draw = sample_noise(c, sampling, rng);
    let base = plan.kind.apply(c.values());
    let noise: Vec<f64> = draw
        .u
        .iter()
        .zip(&draw.interval_indices)
        .map(|(&u, &interval)| u * plan.sigma_for_interval(interval))
        .collect();
    let scores = base
        .iter()
        .zip(&noise)
        .zip(c.values())
        .map(|((&b, &n), &cj)| b + n * cj)
        .collect();
    Ok(PerturbationTrace {
        scores: TransformedScores::new(scores),
        draw,
        noise,
    })
}

/// Uniform-budget configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriveeDpParams {
    #[serde(default)]
    pub transform: TransformKind,
    pub budget: PrivacyBudget,
    #[serde(default)]
    pub sampling: SamplingMode,
}

impl PriveeDpParams {
    pub fn new(transform: TransformKind, budget: PrivacyBudget) -> Self {
        Self {
            transform,
            budget,
            sampling: SamplingMode::Random,
        }
    }

    pub fn plan(&self, k: usize) -> Result<PerturbationPlan, DefenseError> {
        PerturbationPlan::uniform(self.transform, gaussian_sigma(&self.budget)?, k)
    }
}

/// Per-class configuration: `ε_j` log-spaced over `[epsilon_min, epsilon_max]`,
/// shared `δ` and `Δf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriveeDpPlusParams {
    #[serde(default)]
    pub transform: TransformKind,
    pub epsilon_min: f64,
    pub epsilon_max: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_sensitivity")]
    pub sensitivity: f64,
    #[serde(default)]
    pub sampling: SamplingMode,
}

impl Default for PriveeDpPlusParams {
    fn default() -> Self {
        Self {
            transform: TransformKind::Identity,
            epsilon_min: 0.1,
            epsilon_max: 1.0,
            delta: default_delta(),
            sensitivity: default_sensitivity(),
            sampling: SamplingMode::Random,
        }
    }
}

impl PriveeDpPlusParams {
    pub fn epsilons(&self, k: usize) -> Result<Vec<f64>, DefenseError> {
        if !(self.epsilon_min > 0.0 && self.epsilon_max >= self.epsilon_min) {
            return Err(DefenseError::InvalidBudget(format!(
                "need 0 < epsilon_min <= epsilon_max, got [{}, {}]",
                self.epsilon_min, self.epsilon_max
            )));
        }
        let (lo, hi) = (self.epsilon_min.ln(), self.epsilon_max.ln());
        Ok((0..k)
            .map(|j| {
                let t = if k > 1 {
                    j as f64 / (k - 1) as f64
                } else {
                    0.0
                };
                (lo + t * (hi - lo)).exp()
            })
            .collect())
    }

    pub fn plan(&self, k: usize) -> Result<PerturbationPlan, DefenseError> {
        let sigmas = self
            .epsilons(k)?
            .into_iter()
            .map(|epsilon| {
                gaussian_sigma(&PrivacyBudget::new(epsilon, self.delta, self.sensitivity)?)
            })
            .collect::<Result<Vec<_>, _>>()?;
        PerturbationPlan::per_class(self.transform, sigmas)
    }
}

/// Defense applied by the coordinator before broadcasting scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseKind {
    #[default]
    None,
    PriveeDp(PriveeDpParams),
    PriveeDpPlusPlus(PriveeDpPlusParams),
    Round {
        digits: u32,
    },
    GaussianDp(PrivacyBudget),
    MonotoneEncode {
        key: u64,
    },
}

impl DefenseKind {
    pub fn privee_dp(epsilon: f64) -> Result<Self, DefenseError> {
        Ok(DefenseKind::PriveeDp(PriveeDpParams::new(
            TransformKind::Identity,
            PrivacyBudget::with_epsilon(epsilon)?,
        )))
    }

    /// Short label used in CSV output.
    pub fn label(&self) -> String {
        match self {
            DefenseKind::None => "none".into(),
            DefenseKind::PriveeDp(p) => format!("privee_dp(eps={})", p.budget.epsilon),
            DefenseKind::PriveeDpPlusPlus(p) => {
                format!("privee_dp++(eps={}..{})", p.epsilon_min, p.epsilon_max)
            }
            DefenseKind::Round { digits } => format!("round({digits})"),
            DefenseKind::GaussianDp(b) => format!("gaussian_dp(eps={})", b.epsilon),
            DefenseKind::MonotoneEncode { .. } => "monotone_encode".into(),
        }
    }

    /// Whether the defense is guaranteed to keep the predicted class.
    pub fn preserves_argmax(&self) -> bool {
        matches!(
            self,
            DefenseKind::None
                | DefenseKind::PriveeDp(_)
                | DefenseKind::PriveeDpPlusPlus(_)
                | DefenseKind::MonotoneEncode { .. }
        )
    }

    pub fn validate(&self) -> Result<(), DefenseError> {
        match self {
            DefenseKind::None | DefenseKind::MonotoneEncode { .. } => Ok(()),
            DefenseKind::PriveeDp(p) => gaussian_sigma(&p.budget).map(|_| ()),
            DefenseKind::PriveeDpPlusPlus(p) => p.plan(2).map(|_| ()),
            DefenseKind::Round { digits } => check_digits(*digits),
            DefenseKind::GaussianDp(b) => gaussian_sigma(b).map(|_| ()),
        }
    }
}

fn check_digits(digits: u32) -> Result<(), DefenseError> {
    if (1..=12).contains(&digits) {
        Ok(())
    } else {
        Err(DefenseError::InvalidDigits(digits))
    }
}

pub fn round_scores(values: &[f64], digits: u32) -> Result<Vec<f64>, DefenseError> {
    check_digits(digits)?;
    let scale = 10f64.powi(digits as i32);
    Ok(values.iter().map(|v| (v * scale).round() / scale).collect())
}

/// `c + noise`, no clamping and no renormalization.
pub fn add_noise(values: &[f64], noise: &[f64]) -> Vec<f64> {
    values.iter().zip(noise).map(|(v, n)| v + n).collect()
}

pub fn gaussian_scores<R: Rng + ?Sized>(
    values: &[f64],
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<Vec<f64>, DefenseError> {
    let sigma = gaussian_sigma(budget)?;
    let noise: Vec<f64> = (0..values.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect::<Vec<f64>>();
    Ok(add_noise(values, &noise))
}

/// Keyed strictly increasing piecewise-linear map on `[0, 1]` with `K + 1`
/// breakpoints. Preserves order and hides magnitudes; not encryption.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneEncoder {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl MonotoneEncoder {
    pub fn new(key: u64, k: usize) -> Self {
        let segments = k.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        // cumulative sums of increments in [0.5, 1.5) are strictly increasing
        let mut xs = Vec::with_capacity(segments + 1);
        let mut ys = Vec::with_capacity(segments + 1);
        let (mut x, mut y) = (0.0, rng.random::<f64>());
        xs.push(x);
        ys.push(y);
        for _ in 0..segments {
            x += 0.5 + rng.random::<f64>();
            y += 0.5 + rng.random::<f64>();
            xs.push(x);
            ys.push(y);
        }
        let x_total = x;
        for v in &mut xs {
            *v /= x_total;
        }
        *xs.last_mut().expect("at least two breakpoints") = 1.0;
        let y_scale = rng.random_range(1.0..100.0) / y;
        for v in &mut ys {
            *v *= y_scale;
        }
        Self { xs, ys }
    }

    pub fn breakpoints(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn encode(&self, v: f64) -> f64 {
        let n = self.xs.len();
        // segment index in 0..n-1; values outside [0, 1] extend the end segments
        let seg = self.xs.partition_point(|&x| x <= v).clamp(1, n - 1) - 1;
        let (x0, x1, y0, y1) = (
            self.xs[seg],
            self.xs[seg + 1],
            self.ys[seg],
            self.ys[seg + 1],
        );
        y0 + (v - x0) * (y1 - y0) / (x1 - x0)
    }
}

/// Applies `kind` to `c`. Randomized defenses draw from `rng`.
pub fn defend<R: Rng + ?Sized>(
    c: &ConfidenceVector,
    kind: &DefenseKind,
    rng: &mut R,
) -> Result<TransformedScores, DefenseError> {
    let k = c.num_classes();
    match kind {
        DefenseKind::None => Ok(TransformedScores::new(c.values().to_vec())),
        DefenseKind::PriveeDp(p) => privee_perturb(c, &p.plan(k)?, p.sampling, rng),
        DefenseKind::PriveeDpPlusPlus(p) => privee_perturb(c, &p.plan(k)?, p.sampling, rng),
        DefenseKind::Round { digits } => {
            round_scores(c.values(), *digits).map(TransformedScores::new)
        }
        DefenseKind::GaussianDp(budget) => {
            gaussian_scores(c.values(), budget, rng).map(TransformedScores::new)
        }
        DefenseKind::MonotoneEncode { key } => {
            let encoder = MonotoneEncoder::new(*key, k);
            Ok(TransformedScores::new(
                c.values().iter().map(|&v| encoder.encode(v)).collect(),
            ))
        }
    }
}

/// One candidate explanation of an observed perturbed vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasiblePair {
    pub scores: Vec<f64>,
    /// Effective per-class noise `σ_j u_j`.
    pub noise: Vec<f64>,
}

/// Enumerates `(c, σ ⊙ u)` pairs that reproduce `p` under `kind`.
///
/// Candidates `c` range over the interior points of a simplex grid with
/// step `1/grid_resolution`. Given `c`, the noise is fixed by
/// `n_j = (p_j - (A c)_j) / c_j`; a pair is feasible when `n >= 0`,
/// `n_i <= n_j` whenever `p_i < p_j`, and `A c + n ⊙ c` matches `p`, all
/// within [`PROBE_TOLERANCE`]. Boundary points with some `c_j = 0` are
/// skipped: they can only match when `p_j = (A c)_j` exactly.
pub fn feasible_pairs(
    p: &TransformedScores,
    kind: TransformKind,
    grid_resolution: usize,
) -> Result<Vec<FeasiblePair>, DefenseError> {
    let k = p.len();
    if !(2..=3).contains(&k) {
        return Err(DefenseError::ProbeUnsupported(k));
    }
    if grid_resolution == 0 {
        return Err(DefenseError::InvalidGrid);
    }
    let p = p.values();
    let order = argsort_descending(p);
    let res = grid_resolution as f64;
    let mut found = Vec::new();

    let mut check = |c: Vec<f64>| {
        let base = kind.apply(&c);
        let noise: Vec<f64> = (0..k).map(|j| (p[j] - base[j]) / c[j]).collect();
        if noise.iter().any(|&n| n < -PROBE_TOLERANCE) {
            return;
        }
        // walking down the observed order, noise must not increase
        for w in order.windows(2) {
            let (hi, lo) = (w[0], w[1]);
            if p[lo] < p[hi] && noise[lo] > noise[hi] + PROBE_TOLERANCE {
                return;
            }
        }
        let reproduces =
            (0..k).all(|j| (base[j] + noise[j] * c[j] - p[j]).abs() <= PROBE_TOLERANCE);
        if reproduces {
            found.push(FeasiblePair { scores: c, noise });
        }
    };

    match k {
        2 => {
            for i in 1..grid_resolution {
                check(vec![i as f64 / res, (grid_resolution - i) as f64 / res]);
            }
        }
        _ => {
            for i in 1..grid_resolution {
                for j in 1..grid_resolution - i {
                    let l = grid_resolution - i - j;
                    check(vec![i as f64 / res, j as f64 / res, l as f64 / res]);
                }
            }
        }
    }
    Ok(found)
}

/// Number of feasible `(c, noise)` pairs; two or more means the observed
/// vector does not pin down the original scores.
pub fn feasibility_probe(
    p: &TransformedScores,
    kind: TransformKind,
    grid_resolution: usize,
) -> Result<usize, DefenseError> {
    feasible_pairs(p, kind, grid_resolution).map(|pairs| pairs.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::preserves_order;

    fn cv(v: &[f64]) -> ConfidenceVector {
        ConfidenceVector::new(v.to_vec()).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn sigma_matches_high_precision_value() {
        // 40-digit evaluation: sqrt(2 ln(125000)) / 0.1
        let reference = 48.448_052_626_053_894;
        let s = gaussian_sigma(&PrivacyBudget::new(0.1, 1e-5, 1.0).unwrap()).unwrap();
        assert!((s - reference).abs() / reference < 1e-12);
        let s1 = gaussian_sigma(&PrivacyBudget::new(1.0, 1e-5, 1.0).unwrap()).unwrap();
        assert!((s1 * 10.0 - s).abs() < 1e-12);
    }

    #[test]
    fn sigma_decreases_with_epsilon() {
        let mut last = f64::INFINITY;
        for eps in [0.01, 0.1, 1.0, 10.0, 1e3, 1e6] {
            let s = gaussian_sigma(&PrivacyBudget::with_epsilon(eps).unwrap()).unwrap();
            assert!(s < last);
            last = s;
        }
        assert!(last < 1e-5);
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(0.0, 1e-5, 1.0).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(1.0, 1e-5, 0.0).is_err());
        let raw = PrivacyBudget {
            epsilon: 1.0,
            delta: 1.3,
            sensitivity: 1.0,
        };
        assert!(matches!(
            gaussian_sigma(&raw),
            Err(DefenseError::InvalidBudget(_))
        ));
    }

    #[test]
    fn noise_interval_examples() {
        let c = cv(&[0.2, 0.5, 0.3]);
        let draw = sample_noise(&c, SamplingMode::Random, &mut rng(1));
        assert_eq!(draw.interval_indices, vec![1, 3, 2]);

        let mid = sample_noise(&c, SamplingMode::Midpoint, &mut rng(1));
        let expected = [1.0 / 6.0, 5.0 / 6.0, 0.5];
        for (u, e) in mid.u.iter().zip(expected) {
            assert!((u - e).abs() < 1e-15);
        }

        let two = cv(&[0.9, 0.1]);
        for seed in 0..200 {
            let d = sample_noise(&two, SamplingMode::Random, &mut rng(seed));
            assert!((0.5..1.0).contains(&d.u[0]));
            assert!((0.0..0.5).contains(&d.u[1]));
        }
    }

    #[test]
    fn draws_stay_in_their_intervals() {
        let c = cv(&[0.1, 0.15, 0.05, 0.3, 0.4]);
        for seed in 0..500 {
            let d = sample_noise(&c, SamplingMode::Random, &mut rng(seed));
            for (u, k) in d.u.iter().zip(&d.interval_indices) {
                let lo = (*k as f64 - 1.0) / 5.0;
                let hi = *k as f64 / 5.0;
                assert!(*u >= lo && *u < hi, "{u} not in [{lo}, {hi})");
            }
        }
    }

    #[test]
    fn perturb_examples() {
        let c = cv(&[0.2, 0.5, 0.3]);
        let zero = PerturbationPlan::uniform(TransformKind::Identity, 0.0, 3).unwrap();
        let p = privee_perturb(&c, &zero, SamplingMode::Random, &mut rng(3)).unwrap();
        assert_eq!(p.values(), c.values());

        let one = PerturbationPlan::uniform(TransformKind::Identity, 1.0, 3).unwrap();
        let p = privee_perturb(&c, &one, SamplingMode::Midpoint, &mut rng(3)).unwrap();
        let expected = [0.2 * 7.0 / 6.0, 0.5 * 11.0 / 6.0, 0.45];
        for (a, e) in p.values().iter().zip(expected) {
            assert!((a - e).abs() < 1e-15, "{a} vs {e}");
        }

        let c2 = cv(&[0.7, 0.3]);
        let refl = PerturbationPlan::uniform(TransformKind::Reflection, 1.0, 2).unwrap();
        let p = privee_perturb(&c2, &refl, SamplingMode::Midpoint, &mut rng(3)).unwrap();
        assert!((p.values()[0] - 0.225).abs() < 1e-15);
        assert!((p.values()[1] + 0.625).abs() < 1e-15);
    }

    #[test]
    fn per_class_scales_follow_rank() {
        let plan =
            PerturbationPlan::per_class(TransformKind::Identity, vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(plan.sigmas(), &[1.0, 2.0, 3.0]);
        let c = cv(&[0.2, 0.5, 0.3]);
        let t = privee_perturb_traced(&c, &plan, SamplingMode::Midpoint, &mut rng(0)).unwrap();
        // bottom class gets the smallest scale, top class the largest
        let expected = [1.0 / 6.0, 3.0 * 5.0 / 6.0, 2.0 * 0.5];
        for (n, e) in t.noise.iter().zip(expected) {
            assert!((n - e).abs() < 1e-15);
        }
    }

    #[test]
    fn plan_validation() {
        assert!(PerturbationPlan::uniform(TransformKind::Identity, -1.0, 3).is_err());
        assert!(PerturbationPlan::per_class(TransformKind::Identity, vec![1.0, f64::NAN]).is_err());
        assert_eq!(
            PerturbationPlan::from_parts(
                TransformKind::Identity,
                vec![1.0, 2.0],
                BudgetMode::UniformBudget
            ),
            Err(DefenseError::UnequalUniformScales)
        );
        let plan = PerturbationPlan::uniform(TransformKind::Identity, 1.0, 3).unwrap();
        let err = privee_perturb(&cv(&[0.5, 0.5]), &plan, SamplingMode::Random, &mut rng(0));
        assert_eq!(err, Err(DefenseError::PlanLength { plan: 3, scores: 2 }));
    }

    #[test]
    fn plus_plus_epsilons_are_log_spaced() {
        let p = PriveeDpPlusParams {
            epsilon_min: 0.1,
            epsilon_max: 10.0,
            ..Default::default()
        };
        let eps = p.epsilons(3).unwrap();
        assert!((eps[0] - 0.1).abs() < 1e-12);
        assert!((eps[1] - 1.0).abs() < 1e-12);
        assert!((eps[2] - 10.0).abs() < 1e-12);
        let plan = p.plan(3).unwrap();
        assert_eq!(plan.mode(), BudgetMode::PerClassBudget);
        assert!(plan.sigmas().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn baseline_examples() {
        let c = cv(&[0.26, 0.74]);
        let r = defend(&c, &DefenseKind::Round { digits: 1 }, &mut rng(0)).unwrap();
        assert_eq!(r.values(), &[0.3, 0.7]);
        assert!(defend(&c, &DefenseKind::Round { digits: 0 }, &mut rng(0)).is_err());
        assert!(defend(&c, &DefenseKind::Round { digits: 13 }, &mut rng(0)).is_err());

        let n = defend(&c, &DefenseKind::None, &mut rng(0)).unwrap();
        assert_eq!(n.values(), c.values());

        assert_eq!(add_noise(c.values(), &[0.0, 0.0]), c.values());
    }

    #[test]
    fn gaussian_noise_has_calibrated_spread() {
        let budget = PrivacyBudget::with_epsilon(1.0).unwrap();
        let sigma = gaussian_sigma(&budget).unwrap();
        let c = vec![0.5; 20_000];
        let noisy = gaussian_scores(&c, &budget, &mut rng(9)).unwrap();
        let n = noisy.len() as f64;
        let mean = noisy.iter().map(|v| v - 0.5).sum::<f64>() / n;
        let var = noisy.iter().map(|v| (v - 0.5 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.1);
        assert!((var.sqrt() - sigma).abs() / sigma < 0.03);
    }

    #[test]
    fn monotone_encoder_is_strictly_increasing() {
        let enc = MonotoneEncoder::new(42, 10);
        let (xs, ys) = enc.breakpoints();
        assert_eq!(xs.len(), 11);
        assert_eq!(xs[0], 0.0);
        assert_eq!(xs[10], 1.0);
        assert!(ys.windows(2).all(|w| w[0] < w[1]));
        let mut last = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let v = enc.encode(i as f64 / 1000.0);
            assert!(v > last);
            last = v;
        }
        assert_eq!(MonotoneEncoder::new(42, 10), enc);
        assert_ne!(MonotoneEncoder::new(43, 10), enc);
    }

    #[test]
    fn order_preserving_defenses_keep_argmax_and_others_can_flip() {
        let c = cv(&[0.34, 0.33, 0.33]);
        let dp = DefenseKind::privee_dp(0.1).unwrap();
        let mono = DefenseKind::MonotoneEncode { key: 5 };
        let pp = DefenseKind::PriveeDpPlusPlus(PriveeDpPlusParams::default());
        for seed in 0..100 {
            for kind in [&dp, &mono, &pp] {
                let p = defend(&c, kind, &mut rng(seed)).unwrap();
                assert_eq!(p.argmax(), 0);
                assert!(preserves_order(c.values(), p.values()));
            }
        }

        let r = defend(
            &cv(&[0.504, 0.496]),
            &DefenseKind::Round { digits: 1 },
            &mut rng(0),
        )
        .unwrap();
        // rounding collapses the gap into a tie
        assert!(!preserves_order(&[0.504, 0.496], r.values()));

        let gauss = DefenseKind::GaussianDp(PrivacyBudget::with_epsilon(0.1).unwrap());
        let flips = (0..100)
            .filter(|&s| defend(&c, &gauss, &mut rng(s)).unwrap().argmax() != 0)
            .count();
        assert!(flips > 0);
    }

    #[test]
    fn deterministic_per_seed() {
        let c = cv(&[0.1, 0.2, 0.3, 0.4]);
        let kind = DefenseKind::privee_dp(0.5).unwrap();
        let a = defend(&c, &kind, &mut rng(77)).unwrap();
        let b = defend(&c, &kind, &mut rng(77)).unwrap();
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn probe_examples() {
        let c = cv(&[0.6, 0.4]);
        let kind = DefenseKind::privee_dp(0.1).unwrap();
        let p = defend(&c, &kind, &mut rng(11)).unwrap();
        assert!(feasibility_probe(&p, TransformKind::Identity, 1000).unwrap() >= 2);

        // zero noise: the generating pair itself is feasible
        let exact = TransformedScores::new(vec![0.6, 0.4]);
        let pairs = feasible_pairs(&exact, TransformKind::Identity, 1000).unwrap();
        assert!(pairs
            .iter()
            .any(|f| (f.scores[0] - 0.6).abs() < 1e-12 && f.noise.iter().all(|n| n.abs() < 1e-9)));

        let c3 = cv(&[0.5, 0.2, 0.3]);
        let p3 = defend(&c3, &kind, &mut rng(4)).unwrap();
        assert!(feasibility_probe(&p3, TransformKind::Identity, 200).unwrap() >= 2);

        assert_eq!(
            feasibility_probe(
                &TransformedScores::new(vec![0.25; 4]),
                TransformKind::Identity,
                10
            ),
            Err(DefenseError::ProbeUnsupported(4))
        );
        assert_eq!(
            feasibility_probe(&exact, TransformKind::Identity, 0),
            Err(DefenseError::InvalidGrid)
        );
    }

    #[test]
    fn probe_pairs_reproduce_observation() {
        let c = cv(&[0.3, 0.7]);
        let kind = DefenseKind::PriveeDp(PriveeDpParams::new(
            TransformKind::Reflection,
            PrivacyBudget::with_epsilon(0.5).unwrap(),
        ));
        let p = defend(&c, &kind, &mut rng(2)).unwrap();
        let pairs = feasible_pairs(&p, TransformKind::Reflection, 500).unwrap();
        assert!(pairs.len() >= 2);
        for pair in pairs {
            let base = TransformKind::Reflection.apply(&pair.scores);
            for j in 0..2 {
                assert!((base[j] + pair.noise[j] * pair.scores[j] - p.values()[j]).abs() < 1e-6);
                assert!(pair.noise[j] >= -1e-6);
            }
        }
    }
}
