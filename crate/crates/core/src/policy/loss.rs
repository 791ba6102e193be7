//! Sequence-level losses shared by supervised and RL training.

use super::tape::{Mat, Tape};
use super::PolicyModel;

/// A prompt followed by output tokens; losses apply to the output only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub ids: Vec<usize>,
    pub prompt_len: usize,
}

impl Sequence {
    pub fn new(prompt: &[usize], output: &[usize]) -> Self {
        assert!(!prompt.is_empty(), "prompt must hold at least one token");
        let mut ids = prompt.to_vec();
        ids.extend_from_slice(output);
        Self {
            ids,
            prompt_len: prompt.len(),
        }
    }

    pub fn output(&self) -> &[usize] {
        &self.ids[self.prompt_len..]
    }

    /// Positions whose next-token distributions predict the output tokens.
    pub fn rows(&self) -> Vec<usize> {
        (self.prompt_len - 1..self.ids.len() - 1).collect()
    }
}

/// Mean negative log-likelihood over all output tokens in `batch`, with its gradient.
pub fn nll_loss(
    model: &PolicyModel,
    batch: &[Sequence],
    think: Option<(usize, usize)>,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.num_params()];
    let n: usize = batch.iter().map(|s| s.output().len()).sum();
    if n == 0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for seq in batch {
        let rows = seq.rows();
        if rows.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let lp = model.forward(&mut tape, &seq.ids, &rows, think);
        let vals = tape.value(lp);
        let mut seed = Mat::zeros(rows.len(), vals.cols);
        for (r, &tok) in seq.output().iter().enumerate() {
            loss -= vals.at(r, tok);
            seed.row_mut(r)[tok] = -1.0 / n as f64;
        }
        tape.backward(vec![(lp, seed)], &mut grad);
    }
    (loss / n as f64, grad)
}

/// Exact categorical KL(p || q) between two log-probability rows.
pub fn categorical_kl(lp: &[f64], lq: &[f64]) -> f64 {
    lp.iter().zip(lq).map(|(a, b)| a.exp() * (a - b)).sum()
}

/// Mean over output positions of KL(model || reference).
pub fn token_kl(
    model: &PolicyModel,
    reference: &PolicyModel,
    seq: &Sequence,
    think: Option<(usize, usize)>,
) -> f64 {
    let rows = seq.rows();
    if rows.is_empty() {
        return 0.0;
    }
    let p = model.logprob_rows(&seq.ids, &rows, think);
    let q = reference.logprob_rows(&seq.ids, &rows, think);
    (0..rows.len())
        .map(|r| categorical_kl(p.row(r), q.row(r)))
        .sum::<f64>()
        / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ModelConfig;

    fn model(seed: u64) -> PolicyModel {
        PolicyModel::new(
            ModelConfig {
                vocab_size: 7,
                d_model: 4,
                n_layers: 1,
                n_heads: 2,
                d_ff: 6,
                context_len: 12,
                ignore_think: false,
            },
            seed,
        )
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut m = model(1);
        assert!(m.num_params() <= 1000);
        let batch = vec![
            Sequence::new(&[1, 4], &[5, 6, 2]),
            Sequence::new(&[1, 3, 3], &[4, 2]),
        ];
        let (_, g) = nll_loss(&m, &batch, None);
        let h = 1e-4;
        for i in 0..m.num_params() {
            let x = m.theta[i];
            m.theta[i] = x + h;
            let up = nll_loss(&m, &batch, None).0;
            m.theta[i] = x - h;
            let down = nll_loss(&m, &batch, None).0;
            m.theta[i] = x;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(
                err < 1e-4 || (fd - g[i]).abs() < 1e-9,
                "param {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn duplicating_the_batch_keeps_the_mean() {
        let m = model(2);
        let batch = vec![
            Sequence::new(&[1, 4], &[5, 6, 2]),
            Sequence::new(&[1], &[4, 2]),
        ];
        let doubled: Vec<Sequence> = batch.iter().chain(&batch).cloned().collect();
        assert!((nll_loss(&m, &batch, None).0 - nll_loss(&m, &doubled, None).0).abs() < 1e-12);
    }

    #[test]
    fn kl_hand_computed_and_nonnegative() {
        let p = [0.5f64, 0.3, 0.2].map(f64::ln);
        let q = [0.2f64, 0.5, 0.3].map(f64::ln);
        let hand =
            0.5 * (0.5f64 / 0.2).ln() + 0.3 * (0.3f64 / 0.5).ln() + 0.2 * (0.2f64 / 0.3).ln();
        assert!((categorical_kl(&p, &q) - hand).abs() < 1e-12);
        let seq = Sequence::new(&[1, 2], &[3, 4, 5]);
        assert_eq!(token_kl(&model(3), &model(3), &seq, None), 0.0);
        for s in 0..10 {
            assert!(token_kl(&model(s), &model(s + 100), &seq, None) >= 0.0);
        }
    }
}
