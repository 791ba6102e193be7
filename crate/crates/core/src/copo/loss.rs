//! Clipped policy-gradient surrogates with a per-token KL penalty.
//!
//! Both GRPO and CoPO reduce to a list of per-trajectory terms. Each term is a
//! set of output sequences whose tokens share one normalizer (the term's total
//! token count); every sequence carries one advantage for all its tokens.

use std::ops::Range;

use thiserror::Error;

use crate::policy::loss::categorical_kl;
use crate::policy::tape::{Mat, Tape};
use crate::policy::PolicyModel;

use super::expansion::CognitiveGroup;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("loss is not finite")]
    NonFiniteLoss,
}

/// One output sequence and the advantage applied to each of its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredOutput {
    pub prompt: Vec<usize>,
    pub output: Vec<usize>,
    pub old_logprobs: Vec<f64>,
    pub advantage: f64,
    /// Tokens strictly inside the action tags (for action-only KL).
    pub action_span: Range<usize>,
}

/// Outputs normalized together: one trajectory's original steps, or all of
/// its expanded variants.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryTerm {
    pub outputs: Vec<ScoredOutput>,
}

impl TrajectoryTerm {
    pub fn token_count(&self) -> usize {
        self.outputs.iter().map(|o| o.output.len()).sum()
    }

    /// Original outputs with the trajectory advantage on every token.
    pub fn from_steps<'a>(
        steps: impl IntoIterator<Item = (&'a [usize], &'a [usize], &'a [f64], Range<usize>)>,
        advantage: f64,
    ) -> Self {
        let outputs = steps
            .into_iter()
            .filter(|(p, o, _, _)| !p.is_empty() && !o.is_empty())
            .map(|(prompt, output, lps, span)| ScoredOutput {
                prompt: prompt.to_vec(),
                output: output.to_vec(),
                old_logprobs: lps.to_vec(),
                advantage,
                action_span: span,
            })
            .collect();
        Self { outputs }
    }

    /// Every variant of every expanded step with its level advantage.
    pub fn from_groups<'a>(
        groups: impl IntoIterator<Item = (&'a [usize], &'a CognitiveGroup)>,
    ) -> Self {
        let mut outputs = Vec::new();
        for (prompt, g) in groups {
            for (k, v) in g.variants.iter().enumerate() {
                if v.output.is_empty() {
                    continue;
                }
                outputs.push(ScoredOutput {
                    prompt: prompt.to_vec(),
                    output: v.output.clone(),
                    old_logprobs: v.old_logprobs.clone(),
                    advantage: g.advantages[k],
                    action_span: v.action_span.clone(),
                });
            }
        }
        Self { outputs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    /// KL over every output token rather than only the action tokens.
    pub kl_all_tokens: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub loss: f64,
    /// Token-averaged KL to the reference over penalized tokens.
    pub mean_kl: f64,
    /// Fraction of tokens whose clipped branch was active.
    pub clip_fraction: f64,
    pub tokens: usize,
}

/// Clipped surrogate `min(r A, clip(r) A)` and its derivative with respect to `log r`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

/// Negated objective averaged over `terms`, with its gradient.
///
/// For term `i` with `N_i` tokens the objective is
/// `(1/N_i) * sum_tokens [min(r A, clip(r) A) - beta * KL]`, averaged over terms.
pub fn surrogate_loss(
    model: &PolicyModel,
    reference: &PolicyModel,
    terms: &[TrajectoryTerm],
    opts: &LossOptions,
    think: Option<(usize, usize)>,
) -> Result<(LossStats, Vec<f64>), LossError> {
    let mut grad = vec![0.0; model.num_params()];
    let mut stats = LossStats::default();
    let live: Vec<&TrajectoryTerm> = terms.iter().filter(|t| t.token_count() > 0).collect();
    if live.is_empty() {
        return Ok((stats, grad));
    }
    let b = live.len() as f64;
    let (mut kl_sum, mut kl_n, mut clipped_n) = (0.0, 0usize, 0usize);
    for term in live {
        let w = 1.0 / (b * term.token_count() as f64);
        for o in &term.outputs {
            let mut ids = o.prompt.clone();
            ids.extend_from_slice(&o.output);
            let rows: Vec<usize> = (o.prompt.len() - 1..ids.len() - 1).collect();
            let mut tape = Tape::new();
            let lp = model.forward(&mut tape, &ids, &rows, think);
            let cur = tape.value(lp);
            let refp = (opts.kl_beta > 0.0).then(|| reference.logprob_rows(&ids, &rows, think));
            let mut seed = Mat::zeros(rows.len(), cur.cols);
            for (n, &tok) in o.output.iter().enumerate() {
                let ratio = (cur.at(n, tok) - o.old_logprobs[n]).exp();
                let (s, ds) = clipped_term(ratio, o.advantage, opts.clip_epsilon);
                if ds == 0.0 && o.advantage != 0.0 {
                    clipped_n += 1;
                }
                stats.loss -= w * s;
                seed.row_mut(n)[tok] -= w * ds;
                let penalize = opts.kl_all_tokens || o.action_span.contains(&n);
                if let (Some(q), true) = (&refp, penalize) {
                    let (pr, qr) = (cur.row(n), q.row(n));
                    let kl = categorical_kl(pr, qr);
                    stats.loss += w * opts.kl_beta * kl;
                    kl_sum += kl;
                    kl_n += 1;
                    for (j, g) in seed.row_mut(n).iter_mut().enumerate() {
                        *g += w * opts.kl_beta * pr[j].exp() * (pr[j] - qr[j] + 1.0);
                    }
                }
            }
            stats.tokens += o.output.len();
            tape.backward(vec![(lp, seed)], &mut grad);
        }
    }
    if !stats.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(LossError::NonFiniteLoss);
    }
    stats.mean_kl = if kl_n > 0 { kl_sum / kl_n as f64 } else { 0.0 };
    stats.clip_fraction = clipped_n as f64 / stats.tokens.max(1) as f64;
    Ok((stats, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ModelConfig;

    #[test]
    fn clip_definition() {
        assert_eq!(clipped_term(1.5, 1.0, 0.2), (1.2, 0.0));
        assert_eq!(clipped_term(0.5, 1.0, 0.2), (0.5, 0.5));
        assert_eq!(clipped_term(1.5, -1.0, 0.2), (-1.5, -1.5));
        let (s, _) = clipped_term(0.5, -1.0, 0.2);
        assert!((s + 0.8).abs() < 1e-12);
    }

    #[test]
    fn ratio_one_gives_minus_mean_advantage() {
        let m = PolicyModel::new(
            ModelConfig {
                vocab_size: 9,
                d_model: 4,
                n_layers: 1,
                n_heads: 1,
                d_ff: 4,
                context_len: 16,
                ignore_think: false,
            },
            0,
        );
        let out = vec![3, 4, 5];
        let (lps, _) = {
            let rows: Vec<usize> = (1..4).collect();
            let lp = m.logprob_rows(&[1, 2, 3, 4, 5], &rows, None);
            ((0..3).map(|n| lp.at(n, out[n])).collect::<Vec<f64>>(), ())
        };
        let term = |a: f64| TrajectoryTerm {
            outputs: vec![ScoredOutput {
                prompt: vec![1, 2],
                output: out.clone(),
                old_logprobs: lps.clone(),
                advantage: a,
                action_span: 1..2,
            }],
        };
        let opts = LossOptions {
            clip_epsilon: 0.2,
            kl_beta: 0.0,
            kl_all_tokens: true,
        };
        let (s, _) = surrogate_loss(&m, &m, &[term(0.6), term(-1.0)], &opts, None).unwrap();
        assert!((s.loss - 0.2).abs() < 1e-12);
    }

    fn tiny(seed: u64) -> PolicyModel {
        PolicyModel::new(
            ModelConfig {
                vocab_size: 10,
                d_model: 4,
                n_layers: 1,
                n_heads: 2,
                d_ff: 6,
                context_len: 24,
                ignore_think: false,
            },
            seed,
        )
    }

    fn scored(
        m: &PolicyModel,
        prompt: Vec<usize>,
        output: Vec<usize>,
        shift: f64,
        advantage: f64,
    ) -> ScoredOutput {
        let mut ids = prompt.clone();
        ids.extend_from_slice(&output);
        let rows: Vec<usize> = (prompt.len() - 1..ids.len() - 1).collect();
        let lp = m.logprob_rows(&ids, &rows, None);
        ScoredOutput {
            old_logprobs: output
                .iter()
                .enumerate()
                .map(|(n, &t)| lp.at(n, t) + shift * ((n % 3) as f64 - 1.0))
                .collect(),
            action_span: 1..output.len() - 1,
            prompt,
            output,
            advantage,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = tiny(1);
        let r = tiny(2);
        let terms = vec![
            TrajectoryTerm {
                outputs: vec![
                    scored(&m, vec![1, 2, 3], vec![4, 5, 6, 7], 0.3, 0.8),
                    scored(&m, vec![1, 3], vec![5, 5, 9], 0.0, 0.2),
                ],
            },
            TrajectoryTerm {
                outputs: vec![scored(&m, vec![2, 2], vec![6, 8, 4, 4, 1], 0.1, -1.1)],
            },
        ];
        let opts = LossOptions {
            clip_epsilon: 0.2,
            kl_beta: 0.1,
            kl_all_tokens: false,
        };
        let (_, g) = surrogate_loss(&m, &r, &terms, &opts, None).unwrap();
        let h = 1e-5;
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for i in 0..m.num_params() {
            let mut p = m.clone();
            p.theta[i] += h;
            let up = surrogate_loss(&p, &r, &terms, &opts, None).unwrap().0.loss;
            p.theta[i] -= 2.0 * h;
            let down = surrogate_loss(&p, &r, &terms, &opts, None).unwrap().0.loss;
            let fd = (up - down) / (2.0 * h);
            num += (fd - g[i]).powi(2);
            den += fd.powi(2).max(g[i].powi(2));
        }
        assert!(den > 0.0);
        assert!(
            (num / den).sqrt() < 1e-5,
            "relative error {}",
            (num / den).sqrt()
        );
    }

    #[test]
    fn degenerate_group_reduces_to_the_original_term() {
        use crate::copo::expansion::{CognitiveGroup, Variant};
        use crate::format::CognitiveLevel;
        let m = tiny(3);
        let r = tiny(4);
        let o = scored(&m, vec![1, 2], vec![3, 4, 5, 6], 0.2, 0.7);
        let variants = CognitiveLevel::ALL
            .iter()
            .map(|&level| {
                let keep = level == CognitiveLevel::L3;
                Variant {
                    level,
                    output: if keep { o.output.clone() } else { Vec::new() },
                    old_logprobs: if keep {
                        o.old_logprobs.clone()
                    } else {
                        Vec::new()
                    },
                    action_span: o.action_span.clone(),
                    confidence: 0.0,
                    flagged: false,
                }
            })
            .collect();
        let group = CognitiveGroup {
            step_index: 0,
            original_level: CognitiveLevel::L3,
            variants,
            c_norm: [0.0; 4],
            weights: [0.0, 0.0, 1.0, 0.0],
            advantages: [0.0, 0.0, 0.7, 0.0],
        };
        let copo = TrajectoryTerm::from_groups([(o.prompt.as_slice(), &group)]);
        let grpo = TrajectoryTerm::from_steps(
            [(
                o.prompt.as_slice(),
                o.output.as_slice(),
                o.old_logprobs.as_slice(),
                o.action_span.clone(),
            )],
            0.7,
        );
        assert_eq!(copo, grpo);
        let opts = LossOptions {
            clip_epsilon: 0.2,
            kl_beta: 0.1,
            kl_all_tokens: true,
        };
        let (a, ga) = surrogate_loss(&m, &r, &[copo], &opts, None).unwrap();
        let (b, gb) = surrogate_loss(&m, &r, &[grpo], &opts, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }
}
