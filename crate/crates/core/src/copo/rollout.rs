//! Episode rollout against an environment with a pluggable decision rule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{reset, EnvError, EnvSpec, EnvState};
use crate::format::{parse_tokens, CognitiveLevel, StructuredStep, L1_THINK};
use crate::policy::{render_prompt, Policy, PolicyError, PromptLimits, PromptView, SampleParams};
use crate::trajectory::{terminal_reward, TerminationCause, Trajectory, TrajectoryStep};

/// One decision: what was emitted and, for model policies, how.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Prompt ids the output was conditioned on (empty for scripted agents).
    pub prompt: Vec<usize>,
    pub output: Vec<usize>,
    /// Untempered model log-probabilities of `output`.
    pub logprobs: Vec<f64>,
    pub tokens: Vec<String>,
    pub parsed: Option<StructuredStep>,
}

impl Decision {
    /// A scripted step rendered as an L1 structured output.
    pub fn scripted(action: &str) -> Self {
        let step = StructuredStep::from_text(CognitiveLevel::L1, L1_THINK, action);
        Self {
            prompt: Vec::new(),
            output: Vec::new(),
            logprobs: Vec::new(),
            tokens: step.raw.clone(),
            parsed: Some(step),
        }
    }
}

/// A finished episode with its per-step decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub decisions: Vec<Decision>,
}

/// Sampling settings for model rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub limits: PromptLimits,
    pub temperature: f64,
    pub max_response_tokens: usize,
}

/// Runs one episode. Decisions that fail the grammar end the episode, since
/// the format reward is already lost.
pub fn run_episode<F>(spec: &EnvSpec, mut decide: F) -> Result<Episode, EnvError>
where
    F: FnMut(&EnvState, &PromptView<'_>) -> Decision,
{
    let (mut env, instruction, first) = reset(spec)?;
    let tier = spec.complexity_tier()?;
    let mut history: Vec<(String, String)> = Vec::new();
    let mut steps = Vec::new();
    let mut decisions = Vec::new();
    let mut obs = first.clone();
    let mut format_ok = true;
    let mut cause = TerminationCause::StepLimit;
    let lists = spec.env_id.lists_admissible_actions();
    while !env.done() {
        let admissible = if lists {
            env.admissible_actions()
        } else {
            Vec::new()
        };
        let view = PromptView {
            instruction: &instruction,
            first_observation: &first,
            history: &history,
            admissible: lists.then_some(admissible.as_slice()),
            step: steps.len(),
        };
        let d = decide(&env, &view);
        let raw_text = crate::format::detokenize(&d.tokens);
        let Some(parsed) = d.parsed.clone() else {
            steps.push(TrajectoryStep {
                observation: obs.clone(),
                raw_text,
                level: None,
                action: String::new(),
                tokens: d.tokens.len(),
            });
            decisions.push(d);
            format_ok = false;
            cause = TerminationCause::Malformed;
            break;
        };
        let action = parsed.action_text();
        let out = env.step(&action)?;
        steps.push(TrajectoryStep {
            observation: std::mem::replace(&mut obs, out.observation.clone()),
            raw_text,
            level: Some(parsed.level),
            action: action.clone(),
            tokens: d.tokens.len(),
        });
        decisions.push(d);
        history.push((action, out.observation));
    }
    if env.success() {
        cause = TerminationCause::Success;
    }
    Ok(Episode {
        trajectory: Trajectory {
            instruction,
            steps,
            reward: terminal_reward(env.success(), format_ok),
            env_score: env.score(),
            tier,
            seed: spec.seed,
            env: spec.env_id,
            task_id: spec.task_id,
            family: env.family().to_string(),
            termination_cause: cause,
        },
        decisions,
    })
}

/// Samples one step from the policy; failures become unparsed decisions.
pub fn policy_decision(
    policy: &Policy,
    view: &PromptView<'_>,
    opts: &RolloutOptions,
    rng: &mut impl Rng,
) -> Decision {
    let ctx = match render_prompt(&policy.vocab, view, &opts.limits) {
        Ok(c) => c,
        Err(_) => {
            return Decision {
                prompt: Vec::new(),
                output: Vec::new(),
                logprobs: Vec::new(),
                tokens: Vec::new(),
                parsed: None,
            }
        }
    };
    let params = SampleParams {
        temperature: opts.temperature,
        budget: opts.max_response_tokens,
    };
    let sample = match policy.sample_step(&ctx, params, None, rng) {
        Ok(s) => s,
        Err(PolicyError::BudgetExhausted { partial, .. }) => *partial,
        Err(PolicyError::ContextOverflow { .. }) => Default::default(),
    };
    let tokens = policy.vocab.decode(&sample.ids);
    let parsed = parse_tokens(&tokens).ok();
    Decision {
        prompt: ctx.ids,
        output: sample.ids,
        logprobs: sample.model_logprobs,
        tokens,
        parsed,
    }
}

pub fn run_policy_episode(
    policy: &Policy,
    spec: &EnvSpec,
    opts: &RolloutOptions,
    rng: &mut impl Rng,
) -> Result<Episode, EnvError> {
    run_episode(spec, |_, view| policy_decision(policy, view, opts, rng))
}

/// Follows the scripted oracle.
pub fn run_oracle_episode(spec: &EnvSpec) -> Result<Episode, EnvError> {
    run_episode(spec, |env, _| {
        Decision::scripted(&env.oracle_action().unwrap_or_else(|_| "look".into()))
    })
}

/// Picks uniformly among admissible actions.
pub fn run_random_episode(spec: &EnvSpec, rng: &mut impl Rng) -> Result<Episode, EnvError> {
    run_episode(spec, |env, _| {
        let acts = env.admissible_actions();
        let a = if acts.is_empty() {
            "look".to_string()
        } else {
            acts[rng.random_range(0..acts.len())].clone()
        };
        Decision::scripted(&a)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;
    use rand::SeedableRng;

    #[test]
    fn oracle_episodes_succeed() {
        for env in [EnvId::GridHouse, EnvId::MiniLab] {
            let ep = run_oracle_episode(&EnvSpec::new(env, 5, 1)).unwrap();
            assert_eq!(ep.trajectory.reward.total, 1);
            assert_eq!(ep.trajectory.termination_cause, TerminationCause::Success);
            assert!(ep
                .trajectory
                .steps
                .iter()
                .all(|s| s.level == Some(CognitiveLevel::L1)));
        }
    }

    #[test]
    fn malformed_output_ends_the_episode_with_zero_reward() {
        let spec = EnvSpec::new(EnvId::GridHouse, 0, 0);
        let mut n = 0;
        let ep = run_episode(&spec, |env, _| {
            n += 1;
            if n == 2 {
                Decision {
                    parsed: None,
                    tokens: vec!["<level>".into()],
                    ..Decision::scripted("look")
                }
            } else {
                Decision::scripted(&env.oracle_action().unwrap())
            }
        })
        .unwrap();
        assert_eq!(ep.trajectory.horizon(), 2);
        assert_eq!(ep.trajectory.reward.format, 0);
        assert_eq!(ep.trajectory.termination_cause, TerminationCause::Malformed);
    }

    #[test]
    fn random_play_hits_the_step_limit() {
        let spec = EnvSpec::new(EnvId::GridHouse, 3, 0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let ep = run_random_episode(&spec, &mut rng).unwrap();
        assert!(ep.trajectory.horizon() <= 30);
    }
}
