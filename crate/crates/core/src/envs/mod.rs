//! Seeded toy text environments and their scripted oracle experts.
//!
//! Both environments are deterministic state machines: the world is generated
//! from `(task_id, seed)` and every transition is a pure function of the state
//! and the action text.

mod gridhouse;
mod minilab;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gridhouse::{GridHouse, GRIDHOUSE_FAMILIES};
pub use minilab::{MiniLab, MINILAB_TYPES};

/// Observation returned for an inadmissible GridHouse action.
pub const NOTHING_HAPPENED: &str = "Nothing happened";
/// Observation returned for an inadmissible MiniLab action.
pub const NO_KNOWN_ACTION: &str = "No known action matches that input .";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    GridHouse,
    MiniLab,
}

impl EnvId {
    pub fn max_steps(self) -> usize {
        match self {
            EnvId::GridHouse => 30,
            EnvId::MiniLab => 100,
        }
    }

    pub fn suite_size(self) -> usize {
        match self {
            EnvId::GridHouse => 1200,
            EnvId::MiniLab => 900,
        }
    }

    /// Task-id range reserved for a data split.
    pub fn split(self, split: Split) -> Range<usize> {
        let n = self.suite_size();
        let (a, b) = match split {
            Split::Sft => (0, n / 2),
            Split::Rl => (n / 2, n * 5 / 6),
            Split::Eval => (n * 5 / 6, n),
        };
        a..b
    }

    /// Whether admissible actions are listed to the agent.
    pub fn lists_admissible_actions(self) -> bool {
        matches!(self, EnvId::GridHouse)
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvId::GridHouse => "gridhouse",
            EnvId::MiniLab => "minilab",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gridhouse" => Ok(EnvId::GridHouse),
            "minilab" => Ok(EnvId::MiniLab),
            other => Err(format!("unknown environment {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Sft,
    Rl,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Short,
    Medium,
    Long,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Short, Tier::Medium, Tier::Long];
}

/// Complexity tier from an oracle solution length: `<=20` Short, `<=50` Medium, else Long.
pub fn tier_of(oracle_len: usize) -> Tier {
    match oracle_len {
        0..=20 => Tier::Short,
        21..=50 => Tier::Medium,
        _ => Tier::Long,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("unknown task {task_id} for {env}")]
    UnknownTask { env: EnvId, task_id: usize },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("no solution from the current state")]
    NoSolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: EnvId,
    pub task_id: usize,
    pub seed: u64,
}

impl EnvSpec {
    pub fn new(env_id: EnvId, task_id: usize, seed: u64) -> Self {
        Self {
            env_id,
            task_id,
            seed,
        }
    }

    pub fn max_steps(&self) -> usize {
        self.env_id.max_steps()
    }

    /// Tier from the length of a full oracle rollout.
    pub fn complexity_tier(&self) -> Result<Tier, EnvError> {
        Ok(tier_of(oracle_solution(self)?.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: String,
    pub admissible_actions: Vec<String>,
    pub done: bool,
    /// Normalized task score in `[0, 1]`.
    pub score: f64,
}

/// Outcome of the previous action, as far as the agent can tell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LastOutcome {
    Start,
    Worked,
    NoEffect,
}

/// Ground-truth facts used to render templated thinking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThinkFacts {
    pub location: String,
    pub holding: Vec<String>,
    /// Short goal phrase, e.g. `put hot apple in bedroom drawer`.
    pub goal: String,
    /// The fact the next oracle decision hinges on, e.g. `apple is in kitchen`.
    pub key_fact: String,
    pub last_outcome: LastOutcome,
}

/// A running environment instance.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvState {
    GridHouse(GridHouse),
    MiniLab(MiniLab),
}

macro_rules! dispatch {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            EnvState::GridHouse($e) => $body,
            EnvState::MiniLab($e) => $body,
        }
    };
}

impl EnvState {
    pub fn spec(&self) -> EnvSpec {
        dispatch!(self, e => e.spec())
    }

    pub fn instruction(&self) -> &str {
        dispatch!(self, e => e.instruction())
    }

    /// Task category name (GridHouse family or MiniLab task type).
    pub fn family(&self) -> &'static str {
        dispatch!(self, e => e.family())
    }

    pub fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
        dispatch!(self, e => e.step(action))
    }

    pub fn oracle_action(&self) -> Result<String, EnvError> {
        dispatch!(self, e => e.oracle_action())
    }

    pub fn admissible_actions(&self) -> Vec<String> {
        dispatch!(self, e => e.admissible_actions())
    }

    pub fn think_facts(&self) -> ThinkFacts {
        dispatch!(self, e => e.think_facts())
    }

    pub fn done(&self) -> bool {
        dispatch!(self, e => e.done())
    }

    pub fn success(&self) -> bool {
        dispatch!(self, e => e.success())
    }

    pub fn score(&self) -> f64 {
        dispatch!(self, e => e.score())
    }

    pub fn step_counter(&self) -> usize {
        dispatch!(self, e => e.step_counter())
    }
}

/// Builds the initial state; returns it with the instruction and first observation.
pub fn reset(spec: &EnvSpec) -> Result<(EnvState, String, String), EnvError> {
    if spec.task_id >= spec.env_id.suite_size() {
        return Err(EnvError::UnknownTask {
            env: spec.env_id,
            task_id: spec.task_id,
        });
    }
    let (state, obs) = match spec.env_id {
        EnvId::GridHouse => {
            let (g, obs) = GridHouse::new(spec.task_id, spec.seed);
            (EnvState::GridHouse(g), obs)
        }
        EnvId::MiniLab => {
            let (m, obs) = MiniLab::new(spec.task_id, spec.seed);
            (EnvState::MiniLab(m), obs)
        }
    };
    let instruction = state.instruction().to_string();
    Ok((state, instruction, obs))
}

/// Follows the oracle from reset to the end; returns the action sequence.
pub fn oracle_solution(spec: &EnvSpec) -> Result<Vec<String>, EnvError> {
    let (mut env, _, _) = reset(spec)?;
    let mut actions = Vec::new();
    while !env.done() {
        let a = env.oracle_action()?;
        env.step(&a)?;
        actions.push(a);
    }
    if env.success() {
        Ok(actions)
    } else {
        Err(EnvError::NoSolution)
    }
}

/// Seeds a per-task generator from `(task_id, seed)`.
pub(crate) fn task_rng(task_id: usize, seed: u64, salt: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mixed = (task_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ seed.rotate_left(29)
        ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    rand_chacha::ChaCha8Rng::seed_from_u64(mixed)
}

/// One row of the task catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub env: EnvId,
    pub task_id: usize,
    pub family: String,
    pub tier: Tier,
    pub oracle_len: usize,
    pub instruction: String,
}

pub fn catalogue(
    env: EnvId,
    seed: u64,
    task_ids: impl IntoIterator<Item = usize>,
) -> Result<Vec<CatalogEntry>, EnvError> {
    task_ids
        .into_iter()
        .map(|task_id| {
            let spec = EnvSpec::new(env, task_id, seed);
            let (state, instruction, _) = reset(&spec)?;
            let len = oracle_solution(&spec)?.len();
            Ok(CatalogEntry {
                env,
                task_id,
                family: state.family().to_string(),
                tier: tier_of(len),
                oracle_len: len,
                instruction,
            })
        })
        .collect()
}

/// Vocabulary words used by both environments.
pub fn env_words() -> Vec<&'static str> {
    let mut words = gridhouse::words();
    words.extend(minilab::words());
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tier_boundaries() {
        assert_eq!(tier_of(12), Tier::Short);
        assert_eq!(tier_of(20), Tier::Short);
        assert_eq!(tier_of(21), Tier::Medium);
        assert_eq!(tier_of(50), Tier::Medium);
        assert_eq!(tier_of(51), Tier::Long);
        assert_eq!(tier_of(94), Tier::Long);
    }

    #[test]
    fn unknown_task_is_rejected() {
        for env in [EnvId::GridHouse, EnvId::MiniLab] {
            let err = reset(&EnvSpec::new(env, 1_000_000, 0)).unwrap_err();
            assert!(matches!(err, EnvError::UnknownTask { .. }));
        }
    }

    #[test]
    fn splits_partition_the_suite() {
        for env in [EnvId::GridHouse, EnvId::MiniLab] {
            let a = env.split(Split::Sft);
            let b = env.split(Split::Rl);
            let c = env.split(Split::Eval);
            assert_eq!(a.start, 0);
            assert_eq!(a.end, b.start);
            assert_eq!(b.end, c.start);
            assert_eq!(c.end, env.suite_size());
        }
    }
}
