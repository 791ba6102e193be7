//! Evaluation runs and their reports.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::copo::rollout::{
    run_oracle_episode, run_policy_episode, run_random_episode, Episode, RolloutOptions,
};
use crate::copo::trainer::stream_seed;
use crate::envs::{EnvId, EnvSpec, Split, Tier};
use crate::format::CognitiveLevel;
use crate::policy::Policy;
use crate::trajectory::Trajectory;

/// Who acts during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Agent<'a> {
    Policy(&'a Policy),
    Oracle,
    /// Uniform over the admissible actions.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub task_id: usize,
    pub tier: Tier,
    pub family: String,
    pub success: bool,
    pub score: f64,
    pub steps: usize,
    pub tokens: usize,
    /// Per-step level; `None` for a malformed step.
    pub levels: Vec<Option<CognitiveLevel>>,
    /// Set when the episode could not be run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Aggregates over rows; `None` fields mean there were no rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub episodes: usize,
    pub success_rate: Option<f64>,
    pub mean_score: Option<f64>,
    pub mean_tokens: Option<f64>,
    pub level_counts: [usize; 4],
    pub level_histogram: Option<[f64; 4]>,
}

impl Aggregates {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a EpisodeRow>) -> Self {
        let rows: Vec<&EpisodeRow> = rows.into_iter().collect();
        let n = rows.len();
        let mean = |f: &dyn Fn(&EpisodeRow) -> f64| {
            (n > 0).then(|| rows.iter().map(|r| f(r)).sum::<f64>() / n as f64)
        };
        let mut counts = [0usize; 4];
        for l in rows.iter().flat_map(|r| r.levels.iter().flatten()) {
            counts[l.index()] += 1;
        }
        let total: usize = counts.iter().sum();
        Self {
            episodes: n,
            success_rate: mean(&|r| f64::from(u8::from(r.success))),
            mean_score: mean(&|r| r.score),
            mean_tokens: mean(&|r| r.tokens as f64),
            level_counts: counts,
            level_histogram: (total > 0).then(|| counts.map(|c| c as f64 / total as f64)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: EnvId,
    pub seed: u64,
    pub env_seed: u64,
    pub temperature: f64,
    pub rows: Vec<EpisodeRow>,
    pub aggregates: Aggregates,
    /// Aggregates per task family, keyed by family name.
    pub families: BTreeMap<String, Aggregates>,
}

impl EvalReport {
    pub fn from_rows(
        env: EnvId,
        seed: u64,
        env_seed: u64,
        temperature: f64,
        rows: Vec<EpisodeRow>,
    ) -> Self {
        let mut families: BTreeMap<String, Vec<&EpisodeRow>> = BTreeMap::new();
        for r in &rows {
            families.entry(r.family.clone()).or_default().push(r);
        }
        let families = families
            .into_iter()
            .map(|(k, v)| (k, Aggregates::from_rows(v)))
            .collect();
        Self {
            env,
            seed,
            env_seed,
            temperature,
            aggregates: Aggregates::from_rows(&rows),
            families,
            rows,
        }
    }

    pub fn task_ids(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.task_id).collect()
    }
}

fn row_of(t: &Trajectory) -> EpisodeRow {
    EpisodeRow {
        task_id: t.task_id,
        tier: t.tier,
        family: t.family.clone(),
        success: t.reward.success(),
        score: t.env_score,
        steps: t.horizon(),
        tokens: t.total_tokens(),
        levels: t.levels(),
        error: None,
    }
}

/// The first `n` tasks of the evaluation split (wrapping around if `n` is larger).
pub fn eval_tasks(env: EnvId, n: usize) -> Vec<usize> {
    let split: Vec<usize> = env.split(Split::Eval).collect();
    (0..n).map(|i| split[i % split.len()]).collect()
}

/// Runs one episode per task. Each episode draws from its own seeded stream,
/// so results do not depend on evaluation order.
pub fn evaluate(
    agent: Agent<'_>,
    env: EnvId,
    tasks: &[usize],
    env_seed: u64,
    opts: &RolloutOptions,
    seed: u64,
) -> (EvalReport, Vec<Trajectory>) {
    let mut rows = Vec::with_capacity(tasks.len());
    let mut trajs = Vec::with_capacity(tasks.len());
    for (i, &task) in tasks.iter().enumerate() {
        let spec = EnvSpec::new(env, task, env_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[seed, i as u64, task as u64]));
        let result: Result<Episode, _> = match agent {
            Agent::Policy(p) => run_policy_episode(p, &spec, opts, &mut rng),
            Agent::Oracle => run_oracle_episode(&spec),
            Agent::Random => run_random_episode(&spec, &mut rng),
        };
        match result {
            Ok(ep) => {
                rows.push(row_of(&ep.trajectory));
                trajs.push(ep.trajectory);
            }
            Err(e) => rows.push(EpisodeRow {
                task_id: task,
                tier: Tier::Short,
                family: String::new(),
                success: false,
                score: 0.0,
                steps: 0,
                tokens: 0,
                levels: Vec::new(),
                error: Some(e.to_string()),
            }),
        }
    }
    (
        EvalReport::from_rows(env, seed, env_seed, opts.temperature, rows),
        trajs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PromptLimits;

    fn opts() -> RolloutOptions {
        RolloutOptions {
            limits: PromptLimits {
                history_window: 6,
                context_len: 320,
                response_reserve: 96,
            },
            temperature: 0.4,
            max_response_tokens: 96,
        }
    }

    #[test]
    fn oracle_is_perfect_and_random_is_poor() {
        let tasks = eval_tasks(EnvId::GridHouse, 100);
        let (oracle, _) = evaluate(Agent::Oracle, EnvId::GridHouse, &tasks, 0, &opts(), 1);
        assert_eq!(oracle.aggregates.success_rate, Some(1.0));
        let (random, _) = evaluate(Agent::Random, EnvId::GridHouse, &tasks, 0, &opts(), 1);
        assert!(
            random.aggregates.success_rate.unwrap() < 0.05,
            "{:?}",
            random.aggregates
        );
        let (empty, _) = evaluate(Agent::Oracle, EnvId::GridHouse, &[], 0, &opts(), 1);
        assert_eq!(empty.aggregates.success_rate, None);
        assert_eq!(empty.aggregates.level_histogram, None);
    }

    #[test]
    fn unknown_tasks_are_recorded_not_fatal() {
        let (r, _) = evaluate(
            Agent::Oracle,
            EnvId::GridHouse,
            &[5000, 1000],
            0,
            &opts(),
            1,
        );
        assert!(r.rows[0].error.is_some());
        assert!(r.rows[1].success);
    }
}
