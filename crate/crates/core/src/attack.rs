//! Feature-inference attacks run by the active party.
//!
//! Both attacks have white-box access to the joint model and see only the
//! broadcast score vector. They fit the passive features by descending
//! `‖softmax(f(x_act, x̂)) - observed‖²`, comparing the model's softmax
//! against the observation exactly as broadcast.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{per_sample_squared_error, reconstruction_mse, MetricError};
use crate::score::TransformedScores;
use crate::tensor::{softmax_squared_error, Matrix, Model, ModelSpec, TensorError};
use crate::vfl::{seeded_rng, JointVflModel, VflError};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("attacker dataset is empty")]
    EmptyDataset,
    #[error("expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("every restart produced a non-finite loss")]
    AllRestartsFailed,
    #[error("generator diverged before its first epoch")]
    Divergence,
    #[error(transparent)]
    Vfl(#[from] VflError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Gradient-inversion settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GiaConfig {
    pub step_size: f64,
    pub max_iters: usize,
    /// Loss at or below which a restart stops early.
    pub tolerance: f64,
    pub clamp_range: [f64; 2],
    pub restarts: usize,
}

impl Default for GiaConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            max_iters: 2000,
            tolerance: 1e-14,
            clamp_range: [0.0, 1.0],
            restarts: 5,
        }
    }
}

impl GiaConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        let [lo, hi] = self.clamp_range;
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(AttackError::InvalidConfig(
                "step_size must be positive".into(),
            ));
        }
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(AttackError::InvalidConfig(
                "max_iters and restarts must be at least 1".into(),
            ));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(AttackError::InvalidConfig(
                "tolerance must be positive".into(),
            ));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(AttackError::InvalidConfig(format!(
                "clamp range [{lo}, {hi}] is empty"
            )));
        }
        Ok(())
    }
}

/// Generator settings. The generator is a one-hidden-layer perceptron over
/// `concat(x_act, observed)` with an unbounded linear output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrnConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for GrnConfig {
    fn default() -> Self {
        Self {
            hidden_units: 64,
            epochs: 300,
            batch_size: 16,
            step_size: 0.5,
            seed: 0,
        }
    }
}

impl GrnConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.hidden_units == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(AttackError::InvalidConfig(
                "hidden_units, epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(AttackError::InvalidConfig(
                "step_size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn generator_spec(
        &self,
        active_dims: usize,
        classes: usize,
        passive_dims: usize,
    ) -> ModelSpec {
        ModelSpec::mlp1(active_dims + classes, self.hidden_units, passive_dims)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackConfig {
    Gia(GiaConfig),
    Grn(GrnConfig),
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig::Gia(GiaConfig::default())
    }
}

impl AttackConfig {
    pub fn label(&self) -> &'static str {
        match self {
            AttackConfig::Gia(_) => "gia",
            AttackConfig::Grn(_) => "grn",
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        match self {
            AttackConfig::Gia(c) => c.validate(),
            AttackConfig::Grn(c) => c.validate(),
        }
    }
}

/// Outcome of one attack over a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: String,
    pub reconstruction: Matrix,
    pub per_sample_squared_error: Vec<f64>,
    pub mse: f64,
    pub iterations: usize,
    pub wall_clock_seconds: f64,
}

/// Joint-model view that splits a full input into the attacker's columns
/// and the target columns.
struct Inverter<'a> {
    model: &'a JointVflModel,
    active: &'a [usize],
    passive: Vec<usize>,
}

impl<'a> Inverter<'a> {
    fn new(model: &'a JointVflModel) -> Self {
        Self {
            model,
            active: model.split().active_slice(),
            passive: model.split().passive_columns(),
        }
    }

    fn check(&self, x_act: &[f64], observed: &[f64]) -> Result<(), AttackError> {
        if x_act.len() != self.active.len() {
            return Err(AttackError::DimensionMismatch {
                expected: self.active.len(),
                actual: x_act.len(),
            });
        }
        if observed.len() != self.model.classes() {
            return Err(AttackError::DimensionMismatch {
                expected: self.model.classes(),
                actual: observed.len(),
            });
        }
        Ok(())
    }

    fn assemble(&self, x_act: &[f64], x_pas: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.model.input_dim()];
        for (&f, &v) in self.active.iter().zip(x_act) {
            x[f] = v;
        }
        for (&f, &v) in self.passive.iter().zip(x_pas) {
            x[f] = v;
        }
        x
    }

    fn loss(&self, x_act: &[f64], x_pas: &[f64], observed: &[f64]) -> Result<f64, AttackError> {
        let logits = self.model.logits(&self.assemble(x_act, x_pas))?;
        Ok(softmax_squared_error(&logits, observed)?.0)
    }

    /// Loss and its gradient with respect to the target columns.
    fn loss_and_grad(
        &self,
        x_act: &[f64],
        x_pas: &[f64],
        observed: &[f64],
    ) -> Result<(f64, Vec<f64>), AttackError> {
        let x = self.assemble(x_act, x_pas);
        let logits = self.model.logits(&x)?;
        let (loss, gz) = softmax_squared_error(&logits, observed)?;
        let gx = self.model.input_gradient(&x, &gz)?;
        Ok((loss, self.passive.iter().map(|&f| gx[f]).collect()))
    }
}

/// Result of a single-sample gradient inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct GiaOutcome {
    pub reconstruction: Vec<f64>,
    pub loss: f64,
    /// Iterations across all restarts, accepted or not.
    pub iterations: usize,
    /// Loss after each accepted step of the winning restart, starting with
    /// the initial loss.
    pub loss_trace: Vec<f64>,
    pub failed_restarts: usize,
}

struct Restart {
    x: Vec<f64>,
    loss: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn clamp_into(v: &mut [f64], [lo, hi]: [f64; 2]) {
    for x in v {
        *x = x.clamp(lo, hi);
    }
}

fn gia_restart(
    inv: &Inverter<'_>,
    x_act: &[f64],
    observed: &[f64],
    start: Vec<f64>,
    cfg: &GiaConfig,
) -> Result<Restart, AttackError> {
    let mut x = start;
    let (mut loss, mut grad) = inv.loss_and_grad(x_act, &x, observed)?;
    let mut step = cfg.step_size;
    let mut trace = vec![loss];
    let mut iterations = 0;
    while iterations < cfg.max_iters && loss > cfg.tolerance && step > 1e-14 {
        iterations += 1;
        let mut candidate: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
        clamp_into(&mut candidate, cfg.clamp_range);
        let cand_loss = inv.loss(x_act, &candidate, observed)?;
        if cand_loss <= loss {
            if candidate == x {
                // pinned at the box boundary with nothing left to move
                break;
            }
            x = candidate;
            (loss, grad) = inv.loss_and_grad(x_act, &x, observed)?;
            trace.push(loss);
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    Ok(Restart {
        x,
        loss,
        iterations,
        trace,
    })
}

/// Projected gradient descent from `restarts` uniform starting points in the
/// clamp box; returns the lowest-loss candidate. Steps that would raise the
/// loss are rejected and the step size halved, so the accepted loss sequence
/// never increases.
pub fn gia_attack<R: Rng + ?Sized>(
    model: &JointVflModel,
    x_act: &[f64],
    observed: &TransformedScores,
    cfg: &GiaConfig,
    rng: &mut R,
) -> Result<GiaOutcome, AttackError> {
    cfg.validate()?;
    let inv = Inverter::new(model);
    inv.check(x_act, observed.values())?;
    let [lo, hi] = cfg.clamp_range;
    let mut best: Option<Restart> = None;
    let mut iterations = 0;
    let mut failed = 0;
    for _ in 0..cfg.restarts {
        let start: Vec<f64> = (0..inv.passive.len())
            .map(|_| rng.random_range(lo..=hi))
            .collect();
        match gia_restart(&inv, x_act, observed.values(), start, cfg) {
            Ok(r) if r.loss.is_finite() => {
                iterations += r.iterations;
                if best.as_ref().is_none_or(|b| r.loss < b.loss) {
                    best = Some(r);
                }
            }
            Ok(_) | Err(AttackError::Tensor(TensorError::NonFinite)) => failed += 1,
            Err(AttackError::Vfl(VflError::Tensor(TensorError::NonFinite))) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    let best = best.ok_or(AttackError::AllRestartsFailed)?;
    Ok(GiaOutcome {
        reconstruction: best.x,
        loss: best.loss,
        iterations,
        loss_trace: best.trace,
        failed_restarts: failed,
    })
}

/// Stream offset for per-sample attack randomness.
const STREAM_GIA: u64 = 1 << 32;

fn check_batch(
    model: &JointVflModel,
    x_act: &Matrix,
    observed: &[TransformedScores],
    truth: &Matrix,
) -> Result<(), AttackError> {
    if x_act.rows() == 0 {
        return Err(AttackError::EmptyDataset);
    }
    for (expected, actual) in [
        (x_act.rows(), observed.len()),
        (x_act.rows(), truth.rows()),
        (model.split().passive_columns().len(), truth.cols()),
    ] {
        if expected != actual {
            return Err(AttackError::DimensionMismatch { expected, actual });
        }
    }
    Ok(())
}

/// Runs [`gia_attack`] on every row in parallel. Row `i` draws from its own
/// seeded stream, so the report does not depend on scheduling.
pub fn gia_attack_batch(
    model: &JointVflModel,
    x_act: &Matrix,
    observed: &[TransformedScores],
    truth: &Matrix,
    cfg: &GiaConfig,
    seed: u64,
) -> Result<AttackReport, AttackError> {
    check_batch(model, x_act, observed, truth)?;
    let started = Instant::now();
    let outcomes = (0..x_act.rows())
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded_rng(seed, STREAM_GIA + i as u64);
            gia_attack(model, x_act.row(i), &observed[i], cfg, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let iterations = outcomes.iter().map(|o| o.iterations).sum();
    let rows: Vec<Vec<f64>> = outcomes.into_iter().map(|o| o.reconstruction).collect();
    report("gia", truth, Matrix::from_rows(&rows)?, iterations, started)
}

fn report(
    attack: &str,
    truth: &Matrix,
    reconstruction: Matrix,
    iterations: usize,
    started: Instant,
) -> Result<AttackReport, AttackError> {
    Ok(AttackReport {
        attack: attack.to_string(),
        per_sample_squared_error: per_sample_squared_error(truth, &reconstruction)?,
        mse: reconstruction_mse(truth, &reconstruction)?,
        reconstruction,
        iterations,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trained generator and its evaluation.
#[derive(Debug, Clone)]
pub struct GrnOutcome {
    /// Final generator, or the lowest-loss one if training diverged.
    pub generator: Model,
    pub best_epoch: usize,
    /// Mean attack loss before training and after each epoch.
    pub loss_trace: Vec<f64>,
    pub diverged: bool,
    pub report: AttackReport,
}

fn generator_input(x_act: &[f64], observed: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x_act.len() + observed.len());
    v.extend_from_slice(x_act);
    v.extend_from_slice(observed);
    v
}

fn mean_grn_loss(
    inv: &Inverter<'_>,
    generator: &Model,
    inputs: &[Vec<f64>],
    x_act: &Matrix,
    observed: &[TransformedScores],
) -> f64 {
    let mut total = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let loss = generator
            .forward(input)
            .map_err(AttackError::from)
            .and_then(|x_pas| inv.loss(x_act.row(i), &x_pas, observed[i].values()));
        match loss {
            Ok(l) => total += l,
            Err(_) => return f64::NAN,
        }
    }
    total / inputs.len() as f64
}

/// Trains a conditional generator `G(x_act, observed) -> x̂_pas` by
/// mini-batch gradient descent through the frozen joint model, then scores
/// its reconstructions against `truth`, which the attacker never sees.
///
/// Training stops early if the loss or parameters become non-finite, and
/// the generator from the lowest-loss epoch is returned instead.
pub fn grn_attack(
    model: &JointVflModel,
    x_act: &Matrix,
    observed: &[TransformedScores],
    truth: &Matrix,
    cfg: &GrnConfig,
) -> Result<GrnOutcome, AttackError> {
    cfg.validate()?;
    check_batch(model, x_act, observed, truth)?;
    let started = Instant::now();
    let inv = Inverter::new(model);
    for (i, o) in observed.iter().enumerate() {
        inv.check(x_act.row(i), o.values())?;
    }
    let n = x_act.rows();
    let spec = cfg.generator_spec(inv.active.len(), model.classes(), inv.passive.len());
    let mut generator = Model::init(&spec, &mut seeded_rng(cfg.seed, 1))?;
    // start every reconstruction at the centre of the feature box
    generator.output_layer_mut().biases_mut().fill(0.5);
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|i| generator_input(x_act.row(i), observed[i].values()))
        .collect();

    let initial = mean_grn_loss(&inv, &generator, &inputs, x_act, observed);
    if !initial.is_finite() {
        return Err(AttackError::Divergence);
    }
    let mut loss_trace = vec![initial];
    let mut best = (initial, 0, generator.clone());
    let mut diverged = false;
    let mut shuffle = seeded_rng(cfg.seed, 2);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs_run = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(cfg.batch_size) {
            let mut total = crate::tensor::GradientBundle::zeros_like(&generator);
            for &i in batch {
                let x_pas = generator.forward(&inputs[i])?;
                let step = inv.loss_and_grad(x_act.row(i), &x_pas, observed[i].values());
                let Ok((_, g_pas)) = step else {
                    diverged = true;
                    break 'epochs;
                };
                total.add_assign(&generator.backward(&inputs[i], &g_pas)?);
            }
            generator.apply_gradient(&total, cfg.step_size / batch.len() as f64, true);
        }
        epochs_run = epoch;
        let loss = mean_grn_loss(&inv, &generator, &inputs, x_act, observed);
        if !loss.is_finite() || !generator.is_finite() {
            diverged = true;
            break;
        }
        loss_trace.push(loss);
        if loss < best.0 {
            best = (loss, epoch, generator.clone());
        }
    }

    let (_, best_epoch, best_generator) = best;
    if diverged {
        generator = best_generator;
    }
    let rows = inputs
        .iter()
        .map(|input| generator.forward(input))
        .collect::<Result<Vec<_>, _>>()?;
    let report = report("grn", truth, Matrix::from_rows(&rows)?, epochs_run, started)?;
    Ok(GrnOutcome {
        generator,
        best_epoch,
        loss_trace,
        diverged,
        report,
    })
}

/// Dispatches on the attack kind. `seed` drives GIA starting points and
/// replaces the generator seed for GRN.
pub fn run_attack(
    model: &JointVflModel,
    x_act: &Matrix,
    observed: &[TransformedScores],
    truth: &Matrix,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackReport, AttackError> {
    match cfg {
        AttackConfig::Gia(c) => gia_attack_batch(model, x_act, observed, truth, c, seed),
        AttackConfig::Grn(c) => {
            let c = GrnConfig { seed, ..*c };
            Ok(grn_attack(model, x_act, observed, truth, &c)?.report)
        }
    }
}
