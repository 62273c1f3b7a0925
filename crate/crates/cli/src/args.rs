use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vfl_lab::attack::{AttackConfig, GiaConfig, GrnConfig};
use vfl_lab::defense::{
    DefenseKind, PrivacyBudget, PriveeDpParams, PriveeDpPlusParams, SamplingMode,
};
use vfl_lab::harness::{DatasetSource, ExperimentConfig, HarnessError, SyntheticSpec};
use vfl_lab::score::TransformKind;
use vfl_lab::vfl::{AttackStrength, VflArchitecture};

#[derive(Debug, Parser)]
#[command(
    name = "vfl-lab",
    version,
    about = "Confidence-score defenses and feature-inference attacks for vertical federated learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a joint model and save it as a checkpoint.
    Train {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the paired undefended/defended attack experiment.
    Attack {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[arg(long)]
        seed: u64,
        /// Record path (JSON); defaults to the config's output, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time defenses over increasing class counts and write CSV.
    Bench {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "privee-dp,privee-dp-plus-plus,round,gaussian-dp,monotone-encode"
        )]
        defenses: Vec<DefenseName>,
        #[arg(long, value_delimiter = ',', default_value = "10,100,1000,10000")]
        classes: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        calls: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        defense: DefenseArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write an SVG chart of the CSV.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Sweep epsilon and party count; write one CSV row per cell.
    Ablate {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.07,0.1,0.5,0.9")]
        epsilons: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "2,5,10")]
        clients: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Merge experiment records (JSON) into one CSV table.
    Report {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DefenseName {
    None,
    PriveeDp,
    PriveeDpPlusPlus,
    Round,
    GaussianDp,
    MonotoneEncode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchitectureName {
    Lr,
    Nn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackName {
    Gia,
    Grn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformName {
    Identity,
    Reflection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplingName {
    Random,
    Midpoint,
}

/// Defense parameters; unset flags keep the configured value.
#[derive(Debug, Clone, Default, Args)]
pub struct DefenseArgs {
    #[arg(long)]
    pub transform: Option<TransformName>,
    #[arg(long)]
    pub sampling: Option<SamplingName>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub epsilon_min: Option<f64>,
    #[arg(long)]
    pub epsilon_max: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub sensitivity: Option<f64>,
    #[arg(long)]
    pub digits: Option<u32>,
    #[arg(long)]
    pub key: Option<u64>,
}

/// Every experiment field as an optional override of the config file (or
/// of the built-in standard task when no file is given).
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// TOML experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Read the dataset from a CSV file with a `label` column.
    #[arg(long)]
    pub data_csv: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub architecture: Option<ArchitectureName>,
    #[arg(long)]
    pub hidden_units: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub n_parties: Option<usize>,
    #[arg(long)]
    pub attack_strength: Option<f64>,
    #[arg(long)]
    pub defense: Option<DefenseName>,
    #[command(flatten)]
    pub defense_params: DefenseArgs,
    #[arg(long)]
    pub attack: Option<AttackName>,
    #[arg(long)]
    pub attack_samples: Option<usize>,
    #[arg(long)]
    pub gia_step: Option<f64>,
    #[arg(long)]
    pub gia_iters: Option<usize>,
    #[arg(long)]
    pub gia_tolerance: Option<f64>,
    #[arg(long)]
    pub gia_restarts: Option<usize>,
    #[arg(long)]
    pub clamp_min: Option<f64>,
    #[arg(long)]
    pub clamp_max: Option<f64>,
    #[arg(long)]
    pub grn_hidden: Option<usize>,
    #[arg(long)]
    pub grn_epochs: Option<usize>,
    #[arg(long)]
    pub grn_batch: Option<usize>,
    #[arg(long)]
    pub grn_step: Option<f64>,
    /// Load this checkpoint instead of training.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DefenseArgs {
    fn budget(&self, current: PrivacyBudget) -> Result<PrivacyBudget, HarnessError> {
        PrivacyBudget::new(
            self.epsilon.unwrap_or(current.epsilon),
            self.delta.unwrap_or(current.delta),
            self.sensitivity.unwrap_or(current.sensitivity),
        )
        .map_err(config_err)
    }

    fn transform(&self, current: TransformKind) -> TransformKind {
        match self.transform {
            Some(TransformName::Identity) => TransformKind::Identity,
            Some(TransformName::Reflection) => TransformKind::Reflection,
            None => current,
        }
    }

    fn sampling(&self, current: SamplingMode) -> SamplingMode {
        match self.sampling {
            Some(SamplingName::Random) => SamplingMode::Random,
            Some(SamplingName::Midpoint) => SamplingMode::Midpoint,
            None => current,
        }
    }

    /// `name` (or the kind of `current`) with these flags applied on top of
    /// `current`'s parameters where the kinds match, defaults otherwise.
    pub fn build(
        &self,
        name: Option<DefenseName>,
        current: &DefenseKind,
    ) -> Result<DefenseKind, HarnessError> {
        let name = name.unwrap_or(match current {
            DefenseKind::None => DefenseName::None,
            DefenseKind::PriveeDp(_) => DefenseName::PriveeDp,
            DefenseKind::PriveeDpPlusPlus(_) => DefenseName::PriveeDpPlusPlus,
            DefenseKind::Round { .. } => DefenseName::Round,
            DefenseKind::GaussianDp(_) => DefenseName::GaussianDp,
            DefenseKind::MonotoneEncode { .. } => DefenseName::MonotoneEncode,
        });
        let default_budget = PrivacyBudget::with_epsilon(0.1).map_err(config_err)?;
        let kind = match name {
            DefenseName::None => DefenseKind::None,
            DefenseName::PriveeDp => {
                let base = match current {
                    DefenseKind::PriveeDp(p) => *p,
                    _ => PriveeDpParams::new(TransformKind::Identity, default_budget),
                };
                DefenseKind::PriveeDp(PriveeDpParams {
                    transform: self.transform(base.transform),
                    budget: self.budget(base.budget)?,
                    sampling: self.sampling(base.sampling),
                })
            }
            DefenseName::PriveeDpPlusPlus => {
                let base = match current {
                    DefenseKind::PriveeDpPlusPlus(p) => *p,
                    _ => PriveeDpPlusParams::default(),
                };
                DefenseKind::PriveeDpPlusPlus(PriveeDpPlusParams {
                    transform: self.transform(base.transform),
                    epsilon_min: self.epsilon_min.unwrap_or(base.epsilon_min),
                    epsilon_max: self.epsilon_max.unwrap_or(base.epsilon_max),
                    delta: self.delta.unwrap_or(base.delta),
                    sensitivity: self.sensitivity.unwrap_or(base.sensitivity),
                    sampling: self.sampling(base.sampling),
                })
            }
            DefenseName::Round => DefenseKind::Round {
                digits: self.digits.unwrap_or(match current {
                    DefenseKind::Round { digits } => *digits,
                    _ => 3,
                }),
            },
            DefenseName::GaussianDp => DefenseKind::GaussianDp(self.budget(match current {
                DefenseKind::GaussianDp(b) => *b,
                _ => default_budget,
            })?),
            DefenseName::MonotoneEncode => DefenseKind::MonotoneEncode {
                key: self.key.unwrap_or(match current {
                    DefenseKind::MonotoneEncode { key } => *key,
                    _ => 0,
                }),
            },
        };
        kind.validate().map_err(config_err)?;
        Ok(kind)
    }
}

impl ExperimentArgs {
    /// Config file (or the standard task) with every given flag applied.
    pub fn resolve(&self, seed: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => ExperimentConfig::standard(),
        };
        if let Some(path) = &self.data_csv {
            cfg.dataset = DatasetSource::Csv { path: path.clone() };
        }
        let synthetic_flags = [self.classes, self.dims, self.samples]
            .iter()
            .any(Option::is_some)
            || self.margin.is_some()
            || self.data_seed.is_some();
        if synthetic_flags {
            let DatasetSource::Synthetic(spec) = &mut cfg.dataset else {
                return Err(config_err("synthetic data flags given for a CSV dataset"));
            };
            apply_synthetic(spec, self);
        }
        set(&mut cfg.train_fraction, self.train_fraction);
        match self.architecture {
            Some(ArchitectureName::Lr) => {
                cfg.model.architecture = VflArchitecture::LogisticRegression
            }
            Some(ArchitectureName::Nn)
                if !matches!(cfg.model.architecture, VflArchitecture::NeuralNet { .. }) =>
            {
                cfg.model.architecture = VflArchitecture::neural_net_default();
            }
            _ => {}
        }
        if let VflArchitecture::NeuralNet {
            hidden_units,
            embedding_dim,
        } = &mut cfg.model.architecture
        {
            set(hidden_units, self.hidden_units);
            set(embedding_dim, self.embedding_dim);
        } else if self.hidden_units.is_some() || self.embedding_dim.is_some() {
            return Err(config_err(
                "--hidden-units/--embedding-dim need --architecture nn",
            ));
        }
        set(&mut cfg.model.train.epochs, self.epochs);
        set(&mut cfg.model.train.batch_size, self.batch_size);
        set(&mut cfg.model.train.learning_rate, self.learning_rate);
        set(&mut cfg.n_parties, self.n_parties);
        if let Some(s) = self.attack_strength {
            cfg.attack_strength = AttackStrength::new(s).map_err(config_err)?;
        }
        cfg.defense = self.defense_params.build(self.defense, &cfg.defense)?;
        self.apply_attack(&mut cfg)?;
        set(&mut cfg.attack_samples, self.attack_samples);
        if self.model.is_some() {
            cfg.model_path = self.model.clone();
        }
        set(&mut cfg.seed, seed);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_attack(&self, cfg: &mut ExperimentConfig) -> Result<(), HarnessError> {
        match self.attack {
            Some(AttackName::Gia) if !matches!(cfg.attack, AttackConfig::Gia(_)) => {
                cfg.attack = AttackConfig::Gia(GiaConfig::default())
            }
            Some(AttackName::Grn) if !matches!(cfg.attack, AttackConfig::Grn(_)) => {
                cfg.attack = AttackConfig::Grn(GrnConfig::default())
            }
            _ => {}
        }
        let gia_flags = self.gia_step.is_some()
            || self.gia_iters.is_some()
            || self.gia_tolerance.is_some()
            || self.gia_restarts.is_some()
            || self.clamp_min.is_some()
            || self.clamp_max.is_some();
        let grn_flags = self.grn_hidden.is_some()
            || self.grn_epochs.is_some()
            || self.grn_batch.is_some()
            || self.grn_step.is_some();
        match &mut cfg.attack {
            AttackConfig::Gia(g) => {
                if grn_flags {
                    return Err(config_err("--grn-* flags need --attack grn"));
                }
                set(&mut g.step_size, self.gia_step);
                set(&mut g.max_iters, self.gia_iters);
                set(&mut g.tolerance, self.gia_tolerance);
                set(&mut g.restarts, self.gia_restarts);
                set(&mut g.clamp_range[0], self.clamp_min);
                set(&mut g.clamp_range[1], self.clamp_max);
            }
            AttackConfig::Grn(g) => {
                if gia_flags {
                    return Err(config_err("--gia-*/--clamp-* flags need --attack gia"));
                }
                set(&mut g.hidden_units, self.grn_hidden);
                set(&mut g.epochs, self.grn_epochs);
                set(&mut g.batch_size, self.grn_batch);
                set(&mut g.step_size, self.grn_step);
            }
        }
        Ok(())
    }
}

fn apply_synthetic(spec: &mut SyntheticSpec, args: &ExperimentArgs) {
    set(&mut spec.classes, args.classes);
    set(&mut spec.dims, args.dims);
    set(&mut spec.samples, args.samples);
    set(&mut spec.margin, args.margin);
    set(&mut spec.seed, args.data_seed);
}
