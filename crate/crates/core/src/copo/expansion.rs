//! Cognitive group expansion: regenerate a step's thinking under every level
//! while keeping its action, then weight the levels by action confidence.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::format::{is_tag, CognitiveLevel};
use crate::policy::model::Decoder;
use crate::policy::{Policy, PolicyError, SampleParams};

use super::advantage::{
    confidence, confidence_weights, normalize_confidences, step_advantages, ConfidenceMetric,
};

/// One level's version of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub level: CognitiveLevel,
    pub output: Vec<usize>,
    /// Log-probabilities of `output` under the rollout policy.
    pub old_logprobs: Vec<f64>,
    pub action_span: Range<usize>,
    pub confidence: f64,
    /// Thinking could not be generated; the variant carries an empty think block.
    pub flagged: bool,
}

/// The four variants of one step with their confidence-derived weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CognitiveGroup {
    pub step_index: usize,
    pub original_level: CognitiveLevel,
    pub variants: Vec<Variant>,
    pub c_norm: [f64; 4],
    pub weights: [f64; 4],
    pub advantages: [f64; 4],
}

impl CognitiveGroup {
    pub fn confidences(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|k| self.variants[k].confidence)
    }

    /// Recomputes normalized scores, weights and advantages from the variants' confidences.
    pub fn reweight(&mut self, a_traj: f64, m: f64, guard: f64) {
        self.c_norm = normalize_confidences(&self.confidences(), guard);
        self.weights = confidence_weights(&self.c_norm, m);
        self.advantages = step_advantages(a_traj, &self.weights);
    }
}

/// Log line describing one expanded step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub iteration: usize,
    pub group: usize,
    pub member: usize,
    pub step: usize,
    pub original_level: CognitiveLevel,
    pub trajectory_advantage: f64,
    pub confidences: [f64; 4],
    pub c_norm: [f64; 4],
    pub weights: [f64; 4],
    pub advantages: [f64; 4],
    pub flagged: [bool; 4],
    pub variant_tokens: [usize; 4],
}

/// Teacher-forces `tokens` from a decoder whose next distribution is `lp`;
/// returns their log-probabilities and the distributions at `keep` indices.
fn force(
    dec: &mut Decoder<'_>,
    mut lp: Vec<f64>,
    tokens: &[usize],
    keep: &Range<usize>,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut lps = Vec::with_capacity(tokens.len());
    let mut dists = Vec::new();
    for (i, &t) in tokens.iter().enumerate() {
        lps.push(lp[t]);
        if keep.contains(&i) {
            dists.push(lp.clone());
        }
        if i + 1 < tokens.len() {
            lp = dec.push(t);
        }
    }
    (lps, dists)
}

/// Settings for regenerating thinking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpandOptions {
    pub temperature: f64,
    pub max_response_tokens: usize,
    pub metric: ConfidenceMetric,
}

fn score_variant(
    policy: &Policy,
    base: &Decoder<'_>,
    base_lp: &[f64],
    level: CognitiveLevel,
    output: Vec<usize>,
    flagged: bool,
    metric: ConfidenceMetric,
) -> Variant {
    let span = policy
        .action_span(&output)
        .expect("variants end with a non-empty action");
    let mut dec = base.clone();
    let (lps, dists) = force(&mut dec, base_lp.to_vec(), &output, &span);
    let conf = confidence(metric, &lps[span.clone()], &dists).expect("non-empty action");
    Variant {
        level,
        output,
        old_logprobs: lps,
        action_span: span,
        confidence: conf,
        flagged,
    }
}

/// Builds the four variants of one step. The originally sampled level keeps
/// its own output; the others get fresh thinking sampled under a forced level
/// prefix, followed by the original action.
pub fn expand_step(
    policy: &Policy,
    prompt: &[usize],
    original: &[usize],
    original_level: CognitiveLevel,
    opts: &ExpandOptions,
    rng: &mut impl Rng,
) -> Vec<Variant> {
    let tags = policy.tags;
    let span = policy.action_span(original).expect("expanded steps parse");
    let action = &original[span.start - 1..];
    let mut base = policy.decoder();
    let base_lp = base.extend(prompt).expect("prompt is never empty");
    let room = policy
        .model
        .config
        .context_len
        .saturating_sub(prompt.len() + action.len() + 6);
    let params = SampleParams {
        temperature: opts.temperature,
        budget: opts.max_response_tokens.min(room),
    };
    let mut out = Vec::with_capacity(4);
    for level in CognitiveLevel::ALL {
        if level == original_level {
            out.push(score_variant(
                policy,
                &base,
                &base_lp,
                level,
                original.to_vec(),
                false,
                opts.metric,
            ));
            continue;
        }
        let mut dec = base.clone();
        let prefix = tags.forced_prefix(level);
        let generated = policy.generate(
            &mut dec,
            base_lp.clone(),
            &prefix,
            &[tags.think_close],
            params,
            rng,
        );
        let think = match generated {
            Ok(s) if s.ids.last() == Some(&tags.think_close) => {
                let inner = &s.ids[prefix.len()..s.ids.len() - 1];
                let clean = inner.iter().all(|&t| !is_tag(policy.vocab.token(t)));
                clean.then(|| inner.to_vec())
            }
            Ok(_)
            | Err(PolicyError::BudgetExhausted { .. })
            | Err(PolicyError::ContextOverflow { .. }) => None,
        };
        let flagged = think.is_none();
        let mut output = prefix;
        output.extend(think.unwrap_or_default());
        output.push(tags.think_close);
        output.extend_from_slice(action);
        out.push(score_variant(
            policy,
            &base,
            &base_lp,
            level,
            output,
            flagged,
            opts.metric,
        ));
    }
    out
}

/// Expands one step and attaches weights for trajectory advantage `a_traj`.
#[allow(clippy::too_many_arguments)]
pub fn expand_group(
    policy: &Policy,
    prompt: &[usize],
    original: &[usize],
    original_level: CognitiveLevel,
    step_index: usize,
    a_traj: f64,
    m: f64,
    guard: f64,
    opts: &ExpandOptions,
    rng: &mut impl Rng,
) -> CognitiveGroup {
    let variants = expand_step(policy, prompt, original, original_level, opts, rng);
    let mut g = CognitiveGroup {
        step_index,
        original_level,
        variants,
        c_norm: [0.0; 4],
        weights: [0.25; 4],
        advantages: [0.0; 4],
    };
    g.reweight(a_traj, m, guard);
    g
}

/// Recomputes each variant's confidence under `policy` (the current parameters).
pub fn rescore_confidences(
    policy: &Policy,
    prompt: &[usize],
    group: &mut CognitiveGroup,
    metric: ConfidenceMetric,
) {
    let mut base = policy.decoder();
    let base_lp = base.extend(prompt).expect("prompt is never empty");
    for v in &mut group.variants {
        let mut dec = base.clone();
        let (lps, dists) = force(&mut dec, base_lp.clone(), &v.output, &v.action_span);
        v.confidence =
            confidence(metric, &lps[v.action_span.clone()], &dists).expect("non-empty action");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::parse_tokens;
    use crate::policy::{ModelConfig, PolicyModel, Vocabulary};
    use rand::SeedableRng;

    fn policy() -> Policy {
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
        Policy::new(PolicyModel::new(cfg, 7), vocab)
    }

    #[test]
    fn variants_share_the_action_and_cover_all_levels() {
        let p = policy();
        let prompt = p.vocab.encode("<bos> task : look step 0");
        let original = p.vocab.encode("<level>2</level><think>Current state: in kitchen.</think><action>go to bedroom</action>");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let opts = ExpandOptions {
            temperature: 1.0,
            max_response_tokens: 12,
            metric: ConfidenceMetric::MeanLogProb,
        };
        let g = expand_group(
            &p,
            &prompt,
            &original,
            CognitiveLevel::L2,
            0,
            1.5,
            2.0,
            1e-8,
            &opts,
            &mut rng,
        );
        assert_eq!(g.variants.len(), 4);
        assert_eq!(g.variants[1].output, original);
        let action: Vec<usize> = original[original.len() - 4..].to_vec();
        for (k, v) in g.variants.iter().enumerate() {
            assert_eq!(v.level, CognitiveLevel::ALL[k]);
            assert_eq!(&v.output[v.output.len() - 4..], &action[..]);
            let step = parse_tokens(&p.vocab.decode(&v.output)).unwrap();
            assert_eq!(step.level, v.level);
            let (lps, _) = p.score(&prompt, &v.output, &[]);
            for (a, b) in lps.iter().zip(&v.old_logprobs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((g.advantages.iter().sum::<f64>() - 1.5).abs() < 1e-9);
        // An untrained model almost never closes its thinking within 12 tokens.
        assert!(g.variants.iter().any(|v| v.flagged));
    }
}
