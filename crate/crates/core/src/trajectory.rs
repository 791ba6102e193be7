//! Trajectories, terminal rewards and the line-delimited trajectory log.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::envs::{EnvId, Tier};
use crate::format::{parse_structured, CognitiveLevel};

/// Terminal reward `total = task * format`, each factor binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct RewardBreakdown {
    pub task: u8,
    pub format: u8,
    pub total: u8,
}

impl RewardBreakdown {
    pub fn success(&self) -> bool {
        self.total == 1
    }
}

pub fn terminal_reward(task_success: bool, format_ok: bool) -> RewardBreakdown {
    let task = u8::from(task_success);
    let format = u8::from(format_ok);
    RewardBreakdown {
        task,
        format,
        total: task * format,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    /// Goal reached.
    Success,
    /// Step limit hit before the goal.
    #[default]
    StepLimit,
    /// Stopped at a step whose output failed the grammar.
    Malformed,
}

/// One recorded step: what the agent saw and what it emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub observation: String,
    pub raw_text: String,
    /// Parsed level, `None` when the output failed the grammar.
    pub level: Option<CognitiveLevel>,
    /// Action text sent to the environment.
    pub action: String,
    /// Number of generated output tokens.
    #[serde(default)]
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub instruction: String,
    pub steps: Vec<TrajectoryStep>,
    pub reward: RewardBreakdown,
    pub env_score: f64,
    pub tier: Tier,
    pub seed: u64,
    pub env: EnvId,
    pub task_id: usize,
    pub family: String,
    pub termination_cause: TerminationCause,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.steps.iter().map(|s| s.tokens).sum()
    }

    pub fn levels(&self) -> Vec<Option<CognitiveLevel>> {
        self.steps.iter().map(|s| s.level).collect()
    }
}

/// Returns 1 iff every step parses; writes the result into `reward.format`.
pub fn validate_trajectory_format(traj: &mut Trajectory) -> u8 {
    let ok = traj
        .steps
        .iter()
        .all(|s| parse_structured(&s.raw_text).is_ok());
    traj.reward = terminal_reward(traj.reward.task == 1, ok);
    traj.reward.format
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(input: R) -> std::io::Result<Vec<T>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}
