use std::path::Path;

use anyhow::{Context, Result};
use dlnagg::data::{Metric, SplitFractions};
use dlnagg::sfe::TokenizerConfig;
use dlnagg::train::{Candidate, LossKind, TrainConfig};
use dlnagg::Architecture;
use serde::{Deserialize, Serialize};

/// Values swept by `train --tune`. An empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rate: Vec<f64>,
    pub epochs: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub l2_penalty: Vec<f64>,
    pub k: Vec<usize>,
    pub lattice_size: Vec<usize>,
    pub phi_keypoints: Vec<usize>,
}

fn or_base<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl GridSpec {
    /// Cartesian product over every swept field, learning rate varying
    /// slowest.
    pub fn expand(&self, arch: &Architecture, train: &TrainConfig) -> Vec<Candidate> {
        let mut out = Vec::new();
        for lr in or_base(&self.learning_rate, train.learning_rate) {
            for epochs in or_base(&self.epochs, train.epochs) {
                for batch_size in or_base(&self.batch_size, train.batch_size) {
                    for l2 in or_base(&self.l2_penalty, train.l2_penalty) {
                        for k in or_base(&self.k, arch.k) {
                            for lattice_size in or_base(&self.lattice_size, arch.lattice_size) {
                                for kp in or_base(&self.phi_keypoints, arch.phi_keypoints) {
                                    out.push(Candidate {
                                        architecture: Architecture {
                                            k,
                                            lattice_size,
                                            phi_keypoints: kp,
                                            ..arch.clone()
                                        },
                                        config: TrainConfig {
                                            learning_rate: lr,
                                            epochs,
                                            batch_size,
                                            l2_penalty: l2,
                                            ..train.clone()
                                        },
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Pipeline configuration file. Command-line flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tokenizer: TokenizerConfig,
    pub count_threshold: u64,
    pub ci_threshold: Option<f64>,
    pub architecture: Architecture,
    pub train: TrainConfig,
    /// Training loss; defaults by label kind.
    pub loss: Option<LossKind>,
    /// Validation metric for monitoring and tuning.
    pub metric: Option<Metric>,
    /// Metrics reported by `evaluate`.
    pub metrics: Vec<Metric>,
    pub grid: GridSpec,
    pub split: SplitFractions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tokenizer: TokenizerConfig::default(),
            count_threshold: 1,
            ci_threshold: None,
            architecture: Architecture::default(),
            train: TrainConfig::default(),
            loss: None,
            metric: None,
            metrics: Vec::new(),
            grid: GridSpec::default(),
            split: SplitFractions::SEVENTY_TEN_TWENTY,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        // A loss written under `train` counts as an explicit choice too.
        if cfg.loss.is_none() {
            let raw: serde_json::Value = serde_json::from_str(&text)?;
            if raw.pointer("/train/loss").is_some() {
                cfg.loss = Some(cfg.train.loss);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_expansion() {
        let grid = GridSpec {
            learning_rate: vec![0.1, 0.01],
            k: vec![1, 2, 3],
            ..GridSpec::default()
        };
        let c = grid.expand(&Architecture::default(), &TrainConfig::default());
        assert_eq!(c.len(), 6);
        assert_eq!(c[0].config.learning_rate, 0.1);
        assert_eq!(c[2].architecture.k, 3);
        assert_eq!(c[3].config.learning_rate, 0.01);
        assert_eq!(GridSpec::default().expand(&Architecture::default(), &TrainConfig::default()).len(), 1);
    }

    #[test]
    fn config_defaults_and_unknown_fields() {
        let c: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.learning_rate, TrainConfig::default().learning_rate);
        assert!(serde_json::from_str::<RunConfig>(r#"{"epochz": 3}"#).is_err());
    }
}
