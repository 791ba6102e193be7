//! The policy: vocabulary, transformer, sampling, scoring, checkpoints.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod optim;
pub mod prompt;
pub mod tape;
pub mod vocab;

use rand::Rng;
use thiserror::Error;

use crate::format::{
    CognitiveLevel, ACTION_CLOSE, ACTION_OPEN, LEVEL_CLOSE, LEVEL_OPEN, THINK_CLOSE, THINK_OPEN,
};

pub use model::{ModelConfig, PolicyModel};
pub use prompt::{render_prompt, PromptContext, PromptLimits, PromptView};
pub use vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("prompt of {len} tokens exceeds the limit of {limit}")]
    ContextOverflow { len: usize, limit: usize },
    #[error("no closing tag within {budget} generated tokens")]
    BudgetExhausted { budget: usize, partial: Box<Sample> },
}

/// Token ids of the structural tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagIds {
    pub level_open: usize,
    pub level_close: usize,
    pub think_open: usize,
    pub think_close: usize,
    pub action_open: usize,
    pub action_close: usize,
    pub digits: [usize; 4],
}

impl TagIds {
    pub fn new(v: &Vocabulary) -> Self {
        let id = |s: &str| v.id(s).unwrap_or_else(|| panic!("vocabulary lacks {s}"));
        Self {
            level_open: id(LEVEL_OPEN),
            level_close: id(LEVEL_CLOSE),
            think_open: id(THINK_OPEN),
            think_close: id(THINK_CLOSE),
            action_open: id(ACTION_OPEN),
            action_close: id(ACTION_CLOSE),
            digits: CognitiveLevel::ALL.map(|l| id(l.digit())),
        }
    }

    pub fn think_pair(&self) -> (usize, usize) {
        (self.think_open, self.think_close)
    }

    /// `<level> K </level> <think>` ids.
    pub fn forced_prefix(&self, level: CognitiveLevel) -> Vec<usize> {
        vec![
            self.level_open,
            self.digits[level.index()],
            self.level_close,
            self.think_open,
        ]
    }
}

/// A model bundled with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub model: PolicyModel,
    pub vocab: Vocabulary,
    pub tags: TagIds,
}

/// Generated tokens with per-token log-probabilities.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sample {
    /// Output ids, including any injected prefix.
    pub ids: Vec<usize>,
    /// Log-probability of each id under the sampling distribution
    /// (temperature-scaled); injected tokens carry the model log-probability.
    pub logprobs: Vec<f64>,
    /// Log-probability of each id under the untempered model.
    pub model_logprobs: Vec<f64>,
    /// Number of injected prefix tokens at the start of `ids`.
    pub forced: usize,
}

/// How to decode: temperature 0 is greedy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleParams {
    pub temperature: f64,
    pub budget: usize,
}

fn pick(lp: &[f64], temperature: f64, rng: &mut impl Rng) -> (usize, f64) {
    if temperature <= 0.0 {
        let mut best = 0;
        for (i, x) in lp.iter().enumerate() {
            if *x > lp[best] {
                best = i;
            }
        }
        return (best, 0.0);
    }
    let scaled: Vec<f64> = lp.iter().map(|x| x / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * z;
    let mut chosen = w.len() - 1;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            chosen = i;
            break;
        }
        u -= wi;
    }
    (chosen, (w[chosen] / z).ln())
}

impl Policy {
    pub fn new(model: PolicyModel, vocab: Vocabulary) -> Self {
        assert_eq!(
            model.config.vocab_size,
            vocab.len(),
            "model and vocabulary disagree"
        );
        let tags = TagIds::new(&vocab);
        Self { model, vocab, tags }
    }

    fn think(&self) -> Option<(usize, usize)> {
        Some(self.tags.think_pair())
    }

    pub fn decoder(&self) -> model::Decoder<'_> {
        self.model.decoder(self.think())
    }

    /// Samples one structured step. With `forced_level`, `<level> K </level> <think>`
    /// is injected and generation continues inside the think block.
    pub fn sample_step(
        &self,
        ctx: &PromptContext,
        params: SampleParams,
        forced_level: Option<CognitiveLevel>,
        rng: &mut impl Rng,
    ) -> Result<Sample, PolicyError> {
        let mut dec = self.decoder();
        let prefix = forced_level
            .map(|l| self.tags.forced_prefix(l))
            .unwrap_or_default();
        self.continue_from(
            &mut dec,
            &ctx.ids,
            &prefix,
            &[self.tags.action_close],
            params,
            rng,
        )
    }

    /// Feeds `prompt` then `prefix` into `dec` and samples until a stop id,
    /// the end-of-sequence token, the budget, or the context limit.
    pub fn continue_from(
        &self,
        dec: &mut model::Decoder<'_>,
        prompt: &[usize],
        prefix: &[usize],
        stops: &[usize],
        params: SampleParams,
        rng: &mut impl Rng,
    ) -> Result<Sample, PolicyError> {
        let ctx_len = self.model.config.context_len;
        if prompt.len() + prefix.len() >= ctx_len {
            return Err(PolicyError::ContextOverflow {
                len: prompt.len() + prefix.len(),
                limit: ctx_len,
            });
        }
        let lp = dec.extend(prompt).expect("prompt is never empty");
        self.generate(dec, lp, prefix, stops, params, rng)
    }

    /// Continues a decoder whose next-token distribution is `lp`: feeds
    /// `prefix`, then samples until a stop id, end-of-sequence, the budget,
    /// or the context limit.
    pub fn generate(
        &self,
        dec: &mut model::Decoder<'_>,
        mut lp: Vec<f64>,
        prefix: &[usize],
        stops: &[usize],
        params: SampleParams,
        rng: &mut impl Rng,
    ) -> Result<Sample, PolicyError> {
        let ctx_len = self.model.config.context_len;
        if dec.len() + prefix.len() >= ctx_len {
            return Err(PolicyError::ContextOverflow {
                len: dec.len() + prefix.len(),
                limit: ctx_len,
            });
        }
        let mut out = Sample {
            ids: Vec::new(),
            logprobs: Vec::new(),
            model_logprobs: Vec::new(),
            forced: prefix.len(),
        };
        for &id in prefix {
            out.ids.push(id);
            out.logprobs.push(lp[id]);
            out.model_logprobs.push(lp[id]);
            lp = dec.push(id);
        }
        let mut generated = 0;
        loop {
            if generated >= params.budget || dec.len() >= ctx_len {
                return Err(PolicyError::BudgetExhausted {
                    budget: params.budget,
                    partial: Box::new(out),
                });
            }
            let (id, slp) = pick(&lp, params.temperature, rng);
            out.ids.push(id);
            out.model_logprobs.push(lp[id]);
            out.logprobs.push(if params.temperature <= 0.0 {
                lp[id]
            } else {
                slp
            });
            generated += 1;
            if stops.contains(&id) || id == self.vocab.eos() {
                return Ok(out);
            }
            lp = dec.push(id);
        }
    }

    /// Teacher-forced log-probabilities of `output` after `prompt`, plus the
    /// full next-token distributions at the requested output positions.
    pub fn score(
        &self,
        prompt: &[usize],
        output: &[usize],
        want_rows: &[usize],
    ) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut dec = self.decoder();
        let mut lp = dec.extend(prompt).expect("prompt is never empty");
        let mut lps = Vec::with_capacity(output.len());
        let mut rows = Vec::new();
        for (i, &id) in output.iter().enumerate() {
            lps.push(lp[id]);
            if want_rows.contains(&i) {
                rows.push(lp.clone());
            }
            if i + 1 < output.len() {
                lp = dec.push(id);
            }
        }
        (lps, rows)
    }

    /// Log-probabilities of the tokens strictly inside the action tags,
    /// teacher-forced after `prompt`.
    pub fn action_logprobs(&self, prompt: &[usize], output: &[usize]) -> Option<Vec<f64>> {
        let span = self.action_span(output)?;
        let (lps, _) = self.score(prompt, output, &[]);
        Some(lps[span].to_vec())
    }

    /// Index range of action content within an output id sequence.
    pub fn action_span(&self, output: &[usize]) -> Option<std::ops::Range<usize>> {
        let open = output.iter().position(|&i| i == self.tags.action_open)?;
        let close = output.iter().rposition(|&i| i == self.tags.action_close)?;
        (close > open + 1).then_some(open + 1..close)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_policy(seed: u64) -> Policy {
        let vocab = Vocabulary::standard();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            context_len: 128,
            ignore_think: false,
        };
        Policy::new(PolicyModel::new(cfg, seed), vocab)
    }

    fn ctx(p: &Policy) -> PromptContext {
        PromptContext {
            ids: p.vocab.encode("<bos> task : look step 0"),
            history_kept: 0,
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let p = small_policy(1);
        let params = SampleParams {
            temperature: 0.0,
            budget: 20,
        };
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let a = p.sample_step(&ctx(&p), params, None, &mut r1);
        let b = p.sample_step(&ctx(&p), params, None, &mut r2);
        assert_eq!(a, b);
    }

    #[test]
    fn forced_level_prefix_and_budget() {
        let p = small_policy(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let params = SampleParams {
            temperature: 1.0,
            budget: 8,
        };
        match p.sample_step(&ctx(&p), params, Some(CognitiveLevel::L3), &mut rng) {
            Err(PolicyError::BudgetExhausted { partial, .. }) => {
                assert_eq!(
                    &p.vocab.decode(&partial.ids)[..4],
                    ["<level>", "3", "</level>", "<think>"]
                );
                assert_eq!(partial.ids.len(), 4 + 8);
            }
            Ok(s) => assert_eq!(&p.vocab.decode(&s.ids)[..3], ["<level>", "3", "</level>"]),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn sampled_logprobs_match_teacher_forcing() {
        let p = small_policy(4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let params = SampleParams {
            temperature: 1.0,
            budget: 30,
        };
        let s = match p.sample_step(&ctx(&p), params, None, &mut rng) {
            Ok(s) => s,
            Err(PolicyError::BudgetExhausted { partial, .. }) => *partial,
            Err(e) => panic!("{e}"),
        };
        let (lps, _) = p.score(&ctx(&p).ids, &s.ids, &[]);
        for (a, b) in lps.iter().zip(&s.model_logprobs) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in s.logprobs.iter().zip(&s.model_logprobs) {
            assert!(
                (a - b).abs() < 1e-9,
                "temperature 1 leaves log-probs unchanged"
            );
        }
    }
}
