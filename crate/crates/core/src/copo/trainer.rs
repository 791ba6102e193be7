//! The RL loop: snapshot, roll out groups, score, expand, update.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrainConfig;
use crate::envs::{EnvError, EnvId, EnvSpec, Split};
use crate::format::CognitiveLevel;
use crate::policy::optim::{clip_grad_norm, Adam};
use crate::policy::{Policy, PolicyModel};
use crate::trajectory::TerminationCause;

use super::adaptthink::adaptthink_reward;
use super::advantage::group_advantages;
use super::expansion::{
    expand_group, rescore_confidences, CognitiveGroup, ExpandOptions, ExpansionRecord,
};
use super::loss::{surrogate_loss, LossError, LossOptions, TrajectoryTerm};
use super::rollout::{run_policy_episode, Episode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Copo,
    Grpo,
    Adaptthink,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Copo => "copo",
            Algo::Grpo => "grpo",
            Algo::Adaptthink => "adaptthink",
        })
    }
}

impl FromStr for Algo {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copo" => Ok(Algo::Copo),
            "grpo" => Ok(Algo::Grpo),
            "adaptthink" => Ok(Algo::Adaptthink),
            other => Err(format!("unknown algorithm {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("loss became non-finite at iteration {iteration}")]
    DivergenceDetected { iteration: usize },
}

impl From<(usize, LossError)> for TrainError {
    fn from((iteration, _): (usize, LossError)) -> Self {
        TrainError::DivergenceDetected { iteration }
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub mean_tokens: f64,
    pub mean_steps: f64,
    /// Share of each level among well-formed rollout steps.
    pub level_histogram: [f64; 4],
    pub malformed_rate: f64,
    pub mean_kl: f64,
    pub loss: f64,
    pub clip_fraction: f64,
    pub groups_updated: usize,
    pub expanded_steps: usize,
    pub flagged_variants: usize,
    pub grad_norm: f64,
}

/// Derives an independent stream seed from a list of indices.
pub fn stream_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    h
}

/// RL tasks used for training.
pub fn task_pool(env: EnvId, cfg: &TrainConfig) -> Vec<usize> {
    let all: Vec<usize> = env.split(Split::Rl).collect();
    if cfg.task_pool > 0 {
        all.into_iter().take(cfg.task_pool).collect()
    } else {
        all
    }
}

/// Everything collected for one trajectory before the update.
struct Item {
    term: TrajectoryTerm,
    /// Expanded steps with their prompts (CoPO successes only).
    groups: Vec<(Vec<usize>, CognitiveGroup)>,
    advantage: f64,
}

fn reward_of(algo: Algo, ep: &Episode, delta: f64) -> f64 {
    match algo {
        Algo::Adaptthink => adaptthink_reward(&ep.trajectory, delta).unwrap_or(0.0),
        _ => f64::from(ep.trajectory.reward.total),
    }
}

fn original_term(ep: &Episode, policy: &Policy, advantage: f64) -> TrajectoryTerm {
    TrajectoryTerm::from_steps(
        ep.decisions.iter().map(|d| {
            let span = policy.action_span(&d.output).unwrap_or(0..0);
            (
                d.prompt.as_slice(),
                d.output.as_slice(),
                d.logprobs.as_slice(),
                span,
            )
        }),
        advantage,
    )
}

/// Runs `cfg.iterations` iterations from `init`, which also serves as the KL
/// reference; `on_iteration` receives each iteration's metrics and expansion
/// records as soon as they are final.
pub fn train(
    cfg: &TrainConfig,
    env: EnvId,
    init: &Policy,
    algo: Algo,
    on_iteration: impl FnMut(&IterationMetrics, &[ExpansionRecord]),
) -> Result<Policy, TrainError> {
    train_from(cfg, env, init, &init.model, algo, on_iteration)
}

/// [`train`] with a KL reference other than the starting point.
pub fn train_from(
    cfg: &TrainConfig,
    env: EnvId,
    init: &Policy,
    reference: &PolicyModel,
    algo: Algo,
    mut on_iteration: impl FnMut(&IterationMetrics, &[ExpansionRecord]),
) -> Result<Policy, TrainError> {
    let pool = task_pool(env, cfg);
    let mut policy = init.clone();
    let mut adam = Adam::new(policy.model.num_params(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let think = Some(policy.tags.think_pair());
    let rollout = cfg.rollout(cfg.rollout_temperature);
    let expand = ExpandOptions {
        temperature: cfg.rollout_temperature,
        max_response_tokens: cfg.max_response_tokens,
        metric: cfg.confidence_metric,
    };
    let loss_opts = LossOptions {
        clip_epsilon: cfg.clip_epsilon,
        kl_beta: cfg.kl_beta,
        kl_all_tokens: cfg.kl_all_tokens,
    };
    for it in 0..cfg.iterations {
        let old = policy.clone();
        let tasks: Vec<usize> = (0..cfg.groups_per_rollout)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect();
        let mut groups: Vec<Vec<Episode>> = Vec::with_capacity(tasks.len());
        for (g, &task) in tasks.iter().enumerate() {
            let spec = EnvSpec::new(env, task, cfg.env_seed);
            let mut members = Vec::with_capacity(cfg.group_size);
            for m in 0..cfg.group_size {
                let mut ep_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[
                    cfg.seed, it as u64, g as u64, m as u64, 1,
                ]));
                members.push(run_policy_episode(&old, &spec, &rollout, &mut ep_rng)?);
            }
            groups.push(members);
        }

        let mut items = Vec::new();
        let mut records = Vec::new();
        let mut groups_updated = 0;
        for (g, members) in groups.iter().enumerate() {
            let rewards: Vec<f64> = members
                .iter()
                .map(|e| reward_of(algo, e, cfg.adaptthink_delta))
                .collect();
            let adv = group_advantages(&rewards, cfg.std_guard).expect("group_size is validated");
            if adv.iter().all(|a| *a == 0.0) {
                continue;
            }
            groups_updated += 1;
            for (m, ep) in members.iter().enumerate() {
                let a = adv[m];
                if algo == Algo::Copo && ep.trajectory.reward.success() {
                    let mut expanded = Vec::new();
                    for (t, d) in ep.decisions.iter().enumerate() {
                        let level = d.parsed.as_ref().expect("successful steps parse").level;
                        let mut x_rng = ChaCha8Rng::seed_from_u64(stream_seed(&[
                            cfg.seed, it as u64, g as u64, m as u64, t as u64, 2,
                        ]));
                        let group = expand_group(
                            &old,
                            &d.prompt,
                            &d.output,
                            level,
                            t,
                            a,
                            cfg.softmax_temperature,
                            cfg.std_guard,
                            &expand,
                            &mut x_rng,
                        );
                        records.push(ExpansionRecord {
                            iteration: it,
                            group: g,
                            member: m,
                            step: t,
                            original_level: level,
                            trajectory_advantage: a,
                            confidences: group.confidences(),
                            c_norm: group.c_norm,
                            weights: group.weights,
                            advantages: group.advantages,
                            flagged: [0, 1, 2, 3].map(|k| group.variants[k].flagged),
                            variant_tokens: [0, 1, 2, 3].map(|k| group.variants[k].output.len()),
                        });
                        expanded.push((d.prompt.clone(), group));
                    }
                    let term = TrajectoryTerm::from_groups(
                        expanded.iter().map(|(p, g)| (p.as_slice(), g)),
                    );
                    items.push(Item {
                        term,
                        groups: expanded,
                        advantage: a,
                    });
                } else {
                    items.push(Item {
                        term: original_term(ep, &old, a),
                        groups: Vec::new(),
                        advantage: a,
                    });
                }
            }
        }

        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut kl_sum, mut clip_sum, mut norm_sum, mut batches) =
            (0.0, 0.0, 0.0, 0.0, 0);
        for chunk in order.chunks(cfg.mini_batch_size) {
            if cfg.recompute_confidence && algo == Algo::Copo {
                for &i in chunk {
                    let item = &mut items[i];
                    if item.groups.is_empty() {
                        continue;
                    }
                    for (prompt, group) in &mut item.groups {
                        rescore_confidences(&policy, prompt, group, cfg.confidence_metric);
                        group.reweight(item.advantage, cfg.softmax_temperature, cfg.std_guard);
                    }
                    item.term = TrajectoryTerm::from_groups(
                        item.groups.iter().map(|(p, g)| (p.as_slice(), g)),
                    );
                }
            }
            let terms: Vec<TrajectoryTerm> = chunk.iter().map(|&i| items[i].term.clone()).collect();
            let (stats, mut grad) =
                surrogate_loss(&policy.model, reference, &terms, &loss_opts, think)
                    .map_err(|e| TrainError::from((it, e)))?;
            norm_sum += clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.step(&mut policy.model.theta, &grad);
            loss_sum += stats.loss;
            kl_sum += stats.mean_kl;
            clip_sum += stats.clip_fraction;
            batches += 1;
        }

        let eps: Vec<&Episode> = groups.iter().flatten().collect();
        let n = eps.len() as f64;
        let mut hist = [0usize; 4];
        for e in &eps {
            for l in e.trajectory.levels().into_iter().flatten() {
                hist[l.index()] += 1;
            }
        }
        let steps_ok: usize = hist.iter().sum();
        let per = |x: f64| if batches > 0 { x / batches as f64 } else { 0.0 };
        let metrics = IterationMetrics {
            iteration: it,
            success_rate: eps.iter().filter(|e| e.trajectory.reward.success()).count() as f64 / n,
            mean_reward: eps
                .iter()
                .map(|e| reward_of(algo, e, cfg.adaptthink_delta))
                .sum::<f64>()
                / n,
            mean_tokens: eps
                .iter()
                .map(|e| e.trajectory.total_tokens() as f64)
                .sum::<f64>()
                / n,
            mean_steps: eps
                .iter()
                .map(|e| e.trajectory.horizon() as f64)
                .sum::<f64>()
                / n,
            level_histogram: hist.map(|c| {
                if steps_ok > 0 {
                    c as f64 / steps_ok as f64
                } else {
                    0.0
                }
            }),
            malformed_rate: eps
                .iter()
                .filter(|e| e.trajectory.termination_cause == TerminationCause::Malformed)
                .count() as f64
                / n,
            mean_kl: per(kl_sum),
            loss: per(loss_sum),
            clip_fraction: per(clip_sum),
            groups_updated,
            expanded_steps: records.len(),
            flagged_variants: records
                .iter()
                .map(|r| r.flagged.iter().filter(|f| **f).count())
                .sum(),
            grad_norm: per(norm_sum),
        };
        on_iteration(&metrics, &records);
    }
    Ok(policy)
}

/// Level shares from a histogram of counts.
pub fn shares(counts: &[usize; 4]) -> [f64; 4] {
    let total: usize = counts.iter().sum();
    counts.map(|c| {
        if total > 0 {
            c as f64 / total as f64
        } else {
            0.0
        }
    })
}

/// Count of each level in a sequence.
pub fn level_counts<'a>(levels: impl IntoIterator<Item = &'a CognitiveLevel>) -> [usize; 4] {
    let mut c = [0; 4];
    for l in levels {
        c[l.index()] += 1;
    }
    c
}
