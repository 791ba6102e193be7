//! Expert trajectory collection and supervised dataset construction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{
    reset, tier_of, EnvError, EnvId, EnvSpec, ThinkFacts, NOTHING_HAPPENED, NO_KNOWN_ACTION,
};
use crate::format::{tokenize, CognitiveLevel, StructuredStep};
use crate::policy::{render_prompt, PolicyError, PromptLimits, PromptView, Vocabulary};
use crate::trajectory::{terminal_reward, TerminationCause, Trajectory, TrajectoryStep};

use super::templates::render_think;

/// Oracle-side information about one expert step that the trajectory log does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertStep {
    pub admissible: Vec<String>,
    pub facts: ThinkFacts,
}

/// A successful oracle rollout. Trajectory steps hold observations and actions only.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertEpisode {
    pub trajectory: Trajectory,
    pub extras: Vec<ExpertStep>,
}

impl ExpertEpisode {
    /// `(action, following observation)` pairs before step `t`.
    pub fn history(&self, t: usize) -> Vec<(String, String)> {
        let s = &self.trajectory.steps;
        (0..t)
            .map(|j| (s[j].action.clone(), s[j + 1].observation.clone()))
            .collect()
    }
}

/// Rolls the oracle on each task and keeps the successful runs.
pub fn collect_expert_trajectories(
    env: EnvId,
    task_ids: &[usize],
    seed: u64,
) -> Result<Vec<ExpertEpisode>, EnvError> {
    let mut out = Vec::with_capacity(task_ids.len());
    for &task_id in task_ids {
        let spec = EnvSpec::new(env, task_id, seed);
        let (mut state, instruction, mut obs) = reset(&spec)?;
        let mut steps = Vec::new();
        let mut extras = Vec::new();
        while !state.done() {
            let action = state.oracle_action()?;
            extras.push(ExpertStep {
                admissible: state.admissible_actions(),
                facts: state.think_facts(),
            });
            let next = state.step(&action)?;
            steps.push(TrajectoryStep {
                observation: std::mem::replace(&mut obs, next.observation),
                raw_text: String::new(),
                level: None,
                action,
                tokens: 0,
            });
        }
        if !state.success() {
            continue;
        }
        let tier = tier_of(steps.len());
        out.push(ExpertEpisode {
            trajectory: Trajectory {
                instruction,
                steps,
                reward: terminal_reward(true, true),
                env_score: state.score(),
                tier,
                seed,
                env,
                task_id,
                family: state.family().to_string(),
                termination_cause: TerminationCause::Success,
            },
            extras,
        });
    }
    Ok(out)
}

/// One supervised example: rendered prompt and the structured target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CosftExample {
    pub prompt_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    pub level: CognitiveLevel,
    pub env_id: EnvId,
    pub task_id: usize,
    pub step_index: usize,
}

impl CosftExample {
    pub fn target(&self) -> StructuredStep {
        crate::format::parse_tokens(&self.target_tokens).expect("dataset targets are well formed")
    }
}

/// How the think block of each target is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThinkStyle {
    /// Level template filled from environment facts.
    Template,
    /// Empty think block under L1 (no-think samples for the AdaptThink baseline).
    Empty,
}

/// Up to `n` admissible actions including `chosen`, shuffled.
fn candidates(adm: &[String], chosen: &str, n: usize, rng: &mut impl Rng) -> Vec<String> {
    let mut others: Vec<String> = adm
        .iter()
        .filter(|a| a.as_str() != chosen)
        .cloned()
        .collect();
    others.shuffle(rng);
    others.truncate(n.saturating_sub(1));
    others.push(chosen.to_string());
    others.shuffle(rng);
    others
}

/// Builds one example per expert step, choosing each step's level and think
/// style with `choose(episode, step_index, rng)`.
pub fn build_dataset_with<F>(
    episodes: &[ExpertEpisode],
    vocab: &Vocabulary,
    limits: &PromptLimits,
    seed: u64,
    mut choose: F,
) -> Result<Vec<CosftExample>, PolicyError>
where
    F: FnMut(&ExpertEpisode, usize, &mut ChaCha8Rng) -> (CognitiveLevel, ThinkStyle),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for ep in episodes {
        let traj = &ep.trajectory;
        let first = traj
            .steps
            .first()
            .map(|s| s.observation.as_str())
            .unwrap_or("");
        for (t, step) in traj.steps.iter().enumerate() {
            let (level, style) = choose(ep, t, &mut rng);
            let extra = &ep.extras[t];
            let history = ep.history(t);
            let listed = traj
                .env
                .lists_admissible_actions()
                .then_some(extra.admissible.as_slice());
            let view = PromptView {
                instruction: &traj.instruction,
                first_observation: first,
                history: &history,
                admissible: listed,
                step: t,
            };
            let ctx = render_prompt(vocab, &view, limits)?;
            let cands = candidates(&extra.admissible, &step.action, 3, &mut rng);
            let think = match style {
                ThinkStyle::Template => render_think(level, &extra.facts, &cands, &step.action),
                ThinkStyle::Empty => String::new(),
            };
            let target = StructuredStep::new(level, tokenize(&think), tokenize(&step.action));
            out.push(CosftExample {
                prompt_tokens: vocab.decode(&ctx.ids),
                target_tokens: target.raw,
                level,
                env_id: traj.env,
                task_id: traj.task_id,
                step_index: t,
            });
        }
    }
    Ok(out)
}

/// Level drawn uniformly per step.
pub fn build_balanced_dataset(
    episodes: &[ExpertEpisode],
    vocab: &Vocabulary,
    limits: &PromptLimits,
    seed: u64,
) -> Result<Vec<CosftExample>, PolicyError> {
    build_dataset_with(episodes, vocab, limits, seed, |_, _, rng| {
        (
            CognitiveLevel::ALL[rng.random_range(0..4)],
            ThinkStyle::Template,
        )
    })
}

/// Fixed heuristic teacher: deep thinking at the start and after failures,
/// situational awareness when the options changed, instinct otherwise.
pub fn expert_level(ep: &ExpertEpisode, t: usize) -> CognitiveLevel {
    if t == 0 {
        return CognitiveLevel::L4;
    }
    let obs = &ep.trajectory.steps[t].observation;
    if obs.starts_with(NOTHING_HAPPENED) || obs.starts_with(NO_KNOWN_ACTION) {
        return CognitiveLevel::L3;
    }
    if ep.extras[t].admissible.len() != ep.extras[t - 1].admissible.len() {
        return CognitiveLevel::L2;
    }
    CognitiveLevel::L1
}

pub fn build_expert_selected_dataset(
    episodes: &[ExpertEpisode],
    vocab: &Vocabulary,
    limits: &PromptLimits,
    seed: u64,
) -> Result<Vec<CosftExample>, PolicyError> {
    build_dataset_with(episodes, vocab, limits, seed, |ep, t, _| {
        (expert_level(ep, t), ThinkStyle::Template)
    })
}

/// Half no-think steps (empty think under L1), half full L4 thinking.
pub fn build_adaptthink_dataset(
    episodes: &[ExpertEpisode],
    vocab: &Vocabulary,
    limits: &PromptLimits,
    seed: u64,
) -> Result<Vec<CosftExample>, PolicyError> {
    build_dataset_with(episodes, vocab, limits, seed, |_, _, rng| {
        if rng.random_bool(0.5) {
            (CognitiveLevel::L1, ThinkStyle::Empty)
        } else {
            (CognitiveLevel::L4, ThinkStyle::Template)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::validate_sft_target;

    fn limits() -> PromptLimits {
        PromptLimits {
            history_window: 6,
            context_len: 512,
            response_reserve: 128,
        }
    }

    #[test]
    fn expert_runs_succeed_and_are_deterministic() {
        let ids: Vec<usize> = (0..20).collect();
        let a = collect_expert_trajectories(EnvId::GridHouse, &ids, 3).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|e| e.trajectory.reward.task == 1));
        assert_eq!(
            a,
            collect_expert_trajectories(EnvId::GridHouse, &ids, 3).unwrap()
        );
        assert!(collect_expert_trajectories(EnvId::GridHouse, &[], 3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn cycling_levels_follow_the_chooser() {
        let eps = collect_expert_trajectories(EnvId::GridHouse, &[0], 1).unwrap();
        let v = Vocabulary::standard();
        let mut i = 0;
        let data = build_dataset_with(&eps, &v, &limits(), 0, |_, _, _| {
            i += 1;
            (CognitiveLevel::ALL[(i - 1) % 4], ThinkStyle::Template)
        })
        .unwrap();
        let levels: Vec<CognitiveLevel> = data.iter().take(4).map(|e| e.level).collect();
        assert_eq!(levels, CognitiveLevel::ALL);
        assert!(build_balanced_dataset(&[], &v, &limits(), 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn targets_are_valid_and_prompts_known() {
        let ids: Vec<usize> = (0..30).collect();
        let v = Vocabulary::standard();
        for env in [EnvId::GridHouse, EnvId::MiniLab] {
            let eps = collect_expert_trajectories(env, &ids, 5).unwrap();
            let data = build_balanced_dataset(&eps, &v, &limits(), 9).unwrap();
            for ex in &data {
                let raw = crate::format::detokenize(&ex.target_tokens);
                validate_sft_target(&raw).unwrap_or_else(|e| panic!("{raw}: {e}"));
                let all = ex.prompt_tokens.iter().chain(&ex.target_tokens);
                assert!(
                    all.clone().all(|t| v.id(t).is_some()),
                    "unknown token in {raw}"
                );
            }
        }
    }

    #[test]
    fn expert_heuristic_levels() {
        let ids: Vec<usize> = (0..12).collect();
        let eps = collect_expert_trajectories(EnvId::GridHouse, &ids, 2).unwrap();
        let v = Vocabulary::standard();
        let data = build_expert_selected_dataset(&eps, &v, &limits(), 0).unwrap();
        for ex in data.iter().filter(|e| e.step_index == 0) {
            assert_eq!(ex.level, CognitiveLevel::L4);
        }
        assert!(data.iter().any(|e| e.level == CognitiveLevel::L1));
        let mut ep = eps[0].clone();
        ep.trajectory.steps[1].observation = NOTHING_HAPPENED.to_string();
        assert_eq!(expert_level(&ep, 1), CognitiveLevel::L3);
    }

    #[test]
    fn adaptthink_mix_is_half_empty() {
        let ids: Vec<usize> = (0..60).collect();
        let eps = collect_expert_trajectories(EnvId::GridHouse, &ids, 2).unwrap();
        let data = build_adaptthink_dataset(&eps, &Vocabulary::standard(), &limits(), 4).unwrap();
        let empty =
            data.iter().filter(|e| e.target().is_no_think()).count() as f64 / data.len() as f64;
        assert!((empty - 0.5).abs() < 0.1, "{empty}");
    }
}
