//! Training configuration as a flat TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::copo::advantage::ConfidenceMetric;
use crate::copo::rollout::RolloutOptions;
use crate::cosft::SftOptions;
use crate::envs::EnvId;
use crate::policy::{ModelConfig, PromptLimits, Vocabulary};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    pub groups_per_rollout: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub softmax_temperature: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub confidence_metric: ConfidenceMetric,
    pub adaptthink_delta: f64,
    pub std_guard: f64,

    /// Trajectories per gradient step.
    pub mini_batch_size: usize,
    pub max_grad_norm: f64,
    pub rollout_temperature: f64,
    pub eval_temperature: f64,
    pub max_response_tokens: usize,
    pub history_window: usize,
    /// When false, the KL penalty only covers tokens inside the action tags.
    pub kl_all_tokens: bool,
    /// Recompute confidences under the current parameters before each gradient step.
    pub recompute_confidence: bool,
    /// Restrict RL tasks to the first `n` of the RL split (0 = whole split).
    pub task_pool: usize,
    /// Seed of the environment instances (layouts), shared by all runs.
    pub env_seed: u64,
    pub eval_episodes: usize,

    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub sft_epochs: usize,
    pub sft_learning_rate: f64,
    pub sft_batch_size: usize,
    pub sft_tasks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            groups_per_rollout: 16,
            clip_epsilon: 0.2,
            kl_beta: 0.1,
            softmax_temperature: 2.0,
            learning_rate: 1e-3,
            iterations: 150,
            seed: 0,
            confidence_metric: ConfidenceMetric::MeanLogProb,
            adaptthink_delta: 0.05,
            std_guard: 1e-8,
            mini_batch_size: 64,
            max_grad_norm: 1.0,
            rollout_temperature: 1.0,
            eval_temperature: 0.4,
            max_response_tokens: 96,
            history_window: 6,
            kl_all_tokens: true,
            recompute_confidence: false,
            task_pool: 0,
            env_seed: 0,
            eval_episodes: 100,
            d_model: 32,
            n_layers: 2,
            n_heads: 2,
            d_ff: 64,
            context_len: 320,
            sft_epochs: 3,
            sft_learning_rate: 3e-3,
            sft_batch_size: 16,
            sft_tasks: 500,
        }
    }
}

impl TrainConfig {
    /// Defaults with the per-environment KL weight.
    pub fn for_env(env: EnvId) -> Self {
        Self {
            kl_beta: if env == EnvId::MiniLab { 0.2 } else { 0.1 },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if self.softmax_temperature <= 0.0 {
            return bad("softmax_temperature must be positive");
        }
        if self.kl_beta < 0.0 {
            return bad("kl_beta must be non-negative");
        }
        if self.groups_per_rollout == 0 || self.mini_batch_size == 0 {
            return bad("groups_per_rollout and mini_batch_size must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("n_heads must divide d_model");
        }
        if self.context_len <= self.max_response_tokens {
            return bad("context_len must exceed max_response_tokens");
        }
        Ok(())
    }

    pub fn limits(&self) -> PromptLimits {
        PromptLimits {
            history_window: self.history_window,
            context_len: self.context_len,
            response_reserve: self.max_response_tokens,
        }
    }

    pub fn rollout(&self, temperature: f64) -> RolloutOptions {
        RolloutOptions {
            limits: self.limits(),
            temperature,
            max_response_tokens: self.max_response_tokens,
        }
    }

    pub fn model(&self, vocab: &Vocabulary) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab.len(),
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            context_len: self.context_len,
            ignore_think: false,
        }
    }

    pub fn sft(&self) -> SftOptions {
        SftOptions {
            epochs: self.sft_epochs,
            learning_rate: self.sft_learning_rate,
            batch_size: self.sft_batch_size,
            max_grad_norm: self.max_grad_norm,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_validates() {
        let c = TrainConfig::for_env(EnvId::MiniLab);
        assert_eq!(c.kl_beta, 0.2);
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial =
            TrainConfig::from_toml("group_size = 4\nconfidence_metric = \"neg_entropy\"").unwrap();
        assert_eq!(partial.group_size, 4);
        assert_eq!(partial.confidence_metric, ConfidenceMetric::NegEntropy);
        assert!(TrainConfig::from_toml("group_size = 1").is_err());
        assert!(TrainConfig::from_toml("clip_epsilon = 1.5").is_err());
        assert!(TrainConfig::from_toml("unknown_key = 1").is_err());
    }
}
