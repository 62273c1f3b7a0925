//! Paired-arm experiments: the same model, samples and attack seed are run
//! once without a defense and once with the configured defense.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig};
use super::synthetic::make_synthetic;
use super::HarnessError;
use crate::attack::{run_attack, AttackReport};
use crate::defense::{defend, DefenseKind, PrivacyBudget};
use crate::metrics::random_guess_baseline;
use crate::score::{ConfidenceVector, TransformedScores};
use crate::tensor::{Checkpoint, Matrix};
use crate::vfl::{
    evaluate_accuracy, seeded_rng, split_features, train_vfl, DataSplits, Dataset, JointVflModel,
    VflError,
};

/// Largest `|ΔA|` a record may show before it is flagged.
pub const ACCURACY_TOLERANCE: f64 = 0.01;

const STREAM_OBSERVE: u64 = 10;
const STREAM_EVALUATE: u64 = 11;

/// Result of one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub defense: String,
    pub attack: String,
    pub epsilon: Option<f64>,
    pub mse_no_defense: f64,
    pub mse_with_defense: f64,
    /// MSE of guessing 0.5 for every attacked feature.
    pub random_guess_mse: f64,
    pub accuracy_no_defense: f64,
    pub accuracy_with_defense: f64,
    pub delta_accuracy: f64,
    pub accuracy_budget_exceeded: bool,
    /// Mean wall-clock time of one defense call.
    pub defense_latency_seconds: f64,
    pub attack_seconds: f64,
    pub timestamp_unix: u64,
}

impl ExperimentRecord {
    fn from_arms(
        config: &ExperimentConfig,
        random_guess_mse: f64,
        clean: &ArmResult,
        defended: &ArmResult,
    ) -> Self {
        let delta_accuracy = defended.accuracy - clean.accuracy;
        Self {
            config: config.clone(),
            seed: config.seed,
            defense: config.defense.label(),
            attack: config.attack.label().to_string(),
            epsilon: epsilon_of(&config.defense),
            mse_no_defense: clean.report.mse,
            mse_with_defense: defended.report.mse,
            random_guess_mse,
            accuracy_no_defense: clean.accuracy,
            accuracy_with_defense: defended.accuracy,
            delta_accuracy,
            accuracy_budget_exceeded: delta_accuracy.abs() > ACCURACY_TOLERANCE,
            defense_latency_seconds: defended.latency_seconds,
            attack_seconds: clean.report.wall_clock_seconds + defended.report.wall_clock_seconds,
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    /// `delta_accuracy == accuracy_with_defense - accuracy_no_defense`.
    pub fn delta_is_consistent(&self) -> bool {
        self.delta_accuracy == self.accuracy_with_defense - self.accuracy_no_defense
    }

    pub fn mse_ratio(&self) -> f64 {
        self.mse_with_defense / self.mse_no_defense
    }

    /// Copy with every wall-clock field zeroed.
    pub fn without_timing(&self) -> Self {
        Self {
            defense_latency_seconds: 0.0,
            attack_seconds: 0.0,
            timestamp_unix: 0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_json()?).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }
}

fn epsilon_of(defense: &DefenseKind) -> Option<f64> {
    match defense {
        DefenseKind::PriveeDp(p) => Some(p.budget.epsilon),
        DefenseKind::GaussianDp(b) => Some(b.epsilon),
        _ => None,
    }
}

/// `defense` with its budget replaced by `epsilon`. Defenses without a
/// single budget become identity-transform `PriveeDp`.
pub fn with_epsilon(defense: &DefenseKind, epsilon: f64) -> Result<DefenseKind, HarnessError> {
    let budget = |b: &PrivacyBudget| PrivacyBudget::new(epsilon, b.delta, b.sensitivity);
    Ok(match defense {
        DefenseKind::PriveeDp(p) => {
            let mut p = *p;
            p.budget = budget(&p.budget)?;
            DefenseKind::PriveeDp(p)
        }
        DefenseKind::GaussianDp(b) => DefenseKind::GaussianDp(budget(b)?),
        _ => DefenseKind::privee_dp(epsilon)?,
    })
}

pub fn load_dataset(source: &DatasetSource) -> Result<Dataset, HarnessError> {
    match source {
        DatasetSource::Synthetic(spec) => {
            make_synthetic(spec).map_err(|e| HarnessError::Config(e.to_string()))
        }
        DatasetSource::Csv { path } => Dataset::from_csv_path(path).map_err(|e| match e {
            VflError::Io(io) => HarnessError::io(path, io),
            other => other.into(),
        }),
    }
}

/// Data and trained model shared by both arms.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub splits: DataSplits,
    pub model: JointVflModel,
    pub accuracy_trace: Vec<f64>,
}

/// Loads the data, then trains the joint model or loads it from
/// `cfg.model_path`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset)?;
    let splits = data
        .split(cfg.train_fraction, cfg.seed)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    if let Some(path) = &cfg.model_path {
        let model = Checkpoint::<JointVflModel>::load(path)?.payload;
        if model.input_dim() != data.dims() || model.classes() != data.classes() {
            return Err(HarnessError::Config(format!(
                "checkpoint expects {} features and {} classes, data has {} and {}",
                model.input_dim(),
                model.classes(),
                data.dims(),
                data.classes()
            )));
        }
        return Ok(Prepared {
            splits,
            model,
            accuracy_trace: Vec::new(),
        });
    }
    let split = split_features(data.dims(), cfg.n_parties, cfg.attack_strength, cfg.seed)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let outcome = train_vfl(
        &splits.train,
        &split,
        cfg.model.architecture,
        &cfg.model.train,
        cfg.seed,
    )
    .map_err(|e| match e {
        VflError::Divergence { .. } => HarnessError::Training(e),
        other => other.into(),
    })?;
    Ok(Prepared {
        splits,
        model: outcome.model,
        accuracy_trace: outcome.accuracy_trace,
    })
}

/// Test rows the attacker targets, split into its own columns and the
/// hidden target columns.
#[derive(Debug, Clone)]
pub struct AttackSet {
    pub x_act: Matrix,
    pub truth: Matrix,
    pub scores: Vec<ConfidenceVector>,
}

pub fn attack_set(prepared: &Prepared, samples: usize) -> Result<AttackSet, HarnessError> {
    let test = &prepared.splits.test;
    let rows: Vec<usize> = (0..samples.min(test.len())).collect();
    let features = test.features().select_rows(&rows);
    let split = prepared.model.split();
    let scores = features
        .iter_rows()
        .map(|x| prepared.model.predict_scores(&split.partition(x)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AttackSet {
        x_act: features.select_columns(split.active_slice()),
        truth: features.select_columns(&split.passive_columns()),
        scores,
    })
}

/// Attack and accuracy outcome under one defense.
#[derive(Debug, Clone)]
pub struct ArmResult {
    pub report: AttackReport,
    pub accuracy: f64,
    pub latency_seconds: f64,
}

pub fn run_arm(
    prepared: &Prepared,
    set: &AttackSet,
    defense: &DefenseKind,
    cfg: &ExperimentConfig,
) -> Result<ArmResult, HarnessError> {
    let mut rng = seeded_rng(cfg.seed, STREAM_OBSERVE);
    let mut elapsed = 0.0;
    let mut observed: Vec<TransformedScores> = Vec::with_capacity(set.scores.len());
    for c in &set.scores {
        let started = Instant::now();
        let p = defend(c, defense, &mut rng)?;
        elapsed += started.elapsed().as_secs_f64();
        observed.push(p);
    }
    let report = run_attack(
        &prepared.model,
        &set.x_act,
        &observed,
        &set.truth,
        &cfg.attack,
        cfg.seed,
    )?;
    let accuracy = evaluate_accuracy(
        &prepared.model,
        &prepared.splits.test,
        defense,
        &mut seeded_rng(cfg.seed, STREAM_EVALUATE),
    )?;
    Ok(ArmResult {
        report,
        accuracy,
        latency_seconds: elapsed / set.scores.len() as f64,
    })
}

/// Trains once, runs both arms, and writes the record to `cfg.output` when
/// set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRecord, HarnessError> {
    let prepared = prepare(cfg)?;
    let record = run_prepared(&prepared, cfg)?;
    if let Some(path) = &cfg.output {
        record.save(path)?;
    }
    Ok(record)
}

/// Both arms against an already prepared model.
pub fn run_prepared(
    prepared: &Prepared,
    cfg: &ExperimentConfig,
) -> Result<ExperimentRecord, HarnessError> {
    let set = attack_set(prepared, cfg.attack_samples)?;
    let clean = run_arm(prepared, &set, &DefenseKind::None, cfg)?;
    let defended = run_arm(prepared, &set, &cfg.defense, cfg)?;
    let baseline = random_guess_baseline(&set.truth).map_err(crate::attack::AttackError::from)?;
    Ok(ExperimentRecord::from_arms(
        cfg, baseline, &clean, &defended,
    ))
}

/// One record per `(n_parties, epsilon)` cell, row-major in the given
/// orders. The model is trained once per party count and the undefended arm
/// is shared by that row's cells. Cells run in parallel.
pub fn ablate(
    base: &ExperimentConfig,
    epsilons: &[f64],
    client_counts: &[usize],
) -> Result<Vec<ExperimentRecord>, HarnessError> {
    if epsilons.is_empty() || client_counts.is_empty() {
        return Err(HarnessError::Config("ablation grid is empty".into()));
    }
    let defenses = epsilons
        .iter()
        .map(|&e| with_epsilon(&base.defense, e))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = client_counts
        .par_iter()
        .map(|&n| {
            let row_cfg = ExperimentConfig {
                n_parties: n,
                ..base.clone()
            };
            let prepared = prepare(&row_cfg)?;
            let set = attack_set(&prepared, row_cfg.attack_samples)?;
            let baseline =
                random_guess_baseline(&set.truth).map_err(crate::attack::AttackError::from)?;
            let clean = run_arm(&prepared, &set, &DefenseKind::None, &row_cfg)?;
            defenses
                .par_iter()
                .map(|defense| {
                    let cell = ExperimentConfig {
                        defense: *defense,
                        ..row_cfg.clone()
                    };
                    let defended = run_arm(&prepared, &set, defense, &cell)?;
                    Ok(ExperimentRecord::from_arms(
                        &cell, baseline, &clean, &defended,
                    ))
                })
                .collect::<Result<Vec<_>, HarnessError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    defense: &'a str,
    attack: &'a str,
    epsilon: Option<f64>,
    n_parties: usize,
    attack_strength: f64,
    seed: u64,
    mse_no_defense: f64,
    mse_with_defense: f64,
    mse_ratio: f64,
    random_guess_mse: f64,
    accuracy_no_defense: f64,
    accuracy_with_defense: f64,
    delta_accuracy: f64,
    accuracy_budget_exceeded: bool,
    defense_latency_seconds: f64,
}

/// Aggregate table, one row per record.
pub fn records_to_csv(records: &[ExperimentRecord]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(CsvRow {
            defense: &r.defense,
            attack: &r.attack,
            epsilon: r.epsilon,
            n_parties: r.config.n_parties,
            attack_strength: r.config.attack_strength.fraction(),
            seed: r.seed,
            mse_no_defense: r.mse_no_defense,
            mse_with_defense: r.mse_with_defense,
            mse_ratio: r.mse_ratio(),
            random_guess_mse: r.random_guess_mse,
            accuracy_no_defense: r.accuracy_no_defense,
            accuracy_with_defense: r.accuracy_with_defense,
            delta_accuracy: r.delta_accuracy,
            accuracy_budget_exceeded: r.accuracy_budget_exceeded,
            defense_latency_seconds: r.defense_latency_seconds,
        })
        .map_err(|e| HarnessError::Format(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Format(e.to_string()))
}
