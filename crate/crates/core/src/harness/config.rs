//! Declarative experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticSpec;
use super::HarnessError;
use crate::attack::AttackConfig;
use crate::defense::DefenseKind;
use crate::vfl::{AttackStrength, TrainConfig, VflArchitecture};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: VflArchitecture,
    #[serde(default)]
    pub train: TrainConfig,
}

/// One experiment cell: data, federation, defense, attack and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub model: ModelConfig,
    pub n_parties: usize,
    pub attack_strength: AttackStrength,
    #[serde(default)]
    pub defense: DefenseKind,
    #[serde(default)]
    pub attack: AttackConfig,
    /// Test rows attacked in each arm.
    #[serde(default = "default_attack_samples")]
    pub attack_samples: usize,
    pub seed: u64,
    /// Trained model checkpoint to load instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_attack_samples() -> usize {
    100
}

impl ExperimentConfig {
    /// The reference desk-scale task: 16 separable Gaussian blobs in 18
    /// dimensions, a two-party logistic-regression federation, and a
    /// gradient-inversion attacker holding half the columns.
    pub fn standard() -> Self {
        Self {
            dataset: DatasetSource::Synthetic(SyntheticSpec {
                classes: 16,
                dims: 18,
                samples: 2000,
                margin: 2.0,
                seed: 7,
            }),
            train_fraction: default_train_fraction(),
            model: ModelConfig {
                architecture: VflArchitecture::LogisticRegression,
                train: TrainConfig {
                    epochs: 5,
                    batch_size: 32,
                    learning_rate: 0.5,
                },
            },
            n_parties: 2,
            attack_strength: AttackStrength::new(0.5).expect("0.5 is a valid strength"),
            defense: DefenseKind::privee_dp(0.1).expect("0.1 is a valid budget"),
            attack: AttackConfig::default(),
            attack_samples: default_attack_samples(),
            seed: 1,
            model_path: None,
            output: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            ));
        }
        if self.n_parties < 2 {
            return bad(format!(
                "n_parties must be at least 2, got {}",
                self.n_parties
            ));
        }
        if self.attack_samples == 0 {
            return bad("attack_samples must be at least 1".into());
        }
        let t = &self.model.train;
        if t.batch_size == 0 || !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad("batch_size and learning_rate must be positive".into());
        }
        if let VflArchitecture::NeuralNet {
            hidden_units,
            embedding_dim,
        } = self.model.architecture
        {
            if hidden_units == 0 || embedding_dim == 0 {
                return bad("hidden_units and embedding_dim must be positive".into());
            }
        }
        self.defense
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.attack
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::standard();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let text = r#"
            n_parties = 3
            attack_strength = 0.25
            seed = 9

            [dataset]
            source = "csv"
            path = "data.csv"

            [model.architecture]
            kind = "neural_net"
            hidden_units = 16
            embedding_dim = 4

            [defense]
            kind = "privee_dp_plus_plus"
            epsilon_min = 0.05
            epsilon_max = 0.5

            [attack]
            kind = "grn"
            epochs = 10
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.train_fraction, 0.8);
        assert_eq!(cfg.attack_samples, 100);
        assert_eq!(cfg.model.train, TrainConfig::default());
        assert!(matches!(cfg.attack, AttackConfig::Grn(g) if g.epochs == 10));
        assert!(matches!(cfg.defense, DefenseKind::PriveeDpPlusPlus(p) if p.epsilon_min == 0.05));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let base = ExperimentConfig::standard();
        let text = base.to_toml_string().unwrap();
        for (from, to) in [
            ("n_parties = 2", "n_parties = 1"),
            ("attack_strength = 0.5", "attack_strength = 1.5"),
            ("epsilon = 0.1", "epsilon = -1.0"),
        ] {
            assert!(text.contains(from), "{from}");
            let err = ExperimentConfig::from_toml_str(&text.replace(from, to)).unwrap_err();
            assert!(matches!(err, HarnessError::Config(_)), "{err:?}");
        }
        let err = ExperimentConfig::from_toml_str("unknown_key = 1\n").unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)));
    }
}
