//! Supervised fine-tuning on structured targets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::policy::loss::{nll_loss, Sequence};
use crate::policy::optim::{clip_grad_norm, Adam};
use crate::policy::Policy;

use super::CosftExample;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CosftError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    DivergenceDetected { epoch: usize, batch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SftOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for SftOptions {
    fn default() -> Self {
        Self {
            epochs: 3,
            learning_rate: 3e-3,
            batch_size: 16,
            max_grad_norm: 1.0,
            seed: 0,
        }
    }
}

/// Encodes examples into prompt+target sequences.
pub fn to_sequences(policy: &Policy, data: &[CosftExample]) -> Vec<Sequence> {
    data.iter()
        .map(|e| {
            Sequence::new(
                &policy.vocab.encode_tokens(&e.prompt_tokens),
                &policy.vocab.encode_tokens(&e.target_tokens),
            )
        })
        .collect()
}

/// Trains in place; returns the mean training loss of each epoch.
pub fn train_cosft(
    policy: &mut Policy,
    data: &[CosftExample],
    opts: &SftOptions,
) -> Result<Vec<f64>, CosftError> {
    train_sequences(policy, &to_sequences(policy, data), opts, |_, _| {})
}

/// Same as [`train_cosft`] over pre-encoded sequences; `on_batch(epoch, loss)`
/// observes each mini-batch.
pub fn train_sequences(
    policy: &mut Policy,
    seqs: &[Sequence],
    opts: &SftOptions,
    mut on_batch: impl FnMut(usize, f64),
) -> Result<Vec<f64>, CosftError> {
    if seqs.is_empty() {
        return Err(CosftError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(policy.model.num_params(), opts.learning_rate);
    let think = Some(policy.tags.think_pair());
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for (b, chunk) in order.chunks(opts.batch_size.max(1)).enumerate() {
            let batch: Vec<Sequence> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let (loss, mut grad) = nll_loss(&policy.model, &batch, think);
            if !loss.is_finite() {
                return Err(CosftError::DivergenceDetected { epoch, batch: b });
            }
            clip_grad_norm(&mut grad, opts.max_grad_norm);
            adam.step(&mut policy.model.theta, &grad);
            on_batch(epoch, loss);
            total += loss;
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cosft::{build_balanced_dataset, collect_expert_trajectories};
    use crate::envs::EnvId;
    use crate::policy::{ModelConfig, PolicyModel, PromptLimits, Vocabulary};

    fn policy() -> Policy {
        let vocab = Vocabulary::standard();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            context_len: 256,
            ignore_think: false,
        };
        Policy::new(PolicyModel::new(cfg, 1), vocab)
    }

    fn data(n: usize) -> Vec<CosftExample> {
        let ids: Vec<usize> = (0..n).collect();
        let eps = collect_expert_trajectories(EnvId::GridHouse, &ids, 0).unwrap();
        let limits = PromptLimits {
            history_window: 2,
            context_len: 256,
            response_reserve: 80,
        };
        build_balanced_dataset(&eps, &Vocabulary::standard(), &limits, 0).unwrap()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut p = policy();
        let before = p.model.theta.clone();
        let opts = SftOptions {
            epochs: 1,
            learning_rate: 0.0,
            ..SftOptions::default()
        };
        train_cosft(&mut p, &data(2)[..4], &opts).unwrap();
        assert_eq!(p.model.theta, before);
        assert_eq!(
            train_cosft(&mut p, &[], &opts),
            Err(CosftError::EmptyDataset)
        );
    }

    #[test]
    fn overfits_a_single_example() {
        let mut p = policy();
        let one = vec![data(1).remove(0)];
        let opts = SftOptions {
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: 1,
            ..SftOptions::default()
        };
        let hist = train_cosft(&mut p, &one, &opts).unwrap();
        assert!(*hist.last().unwrap() < 0.1, "{:?}", &hist[hist.len() - 5..]);
    }
}
