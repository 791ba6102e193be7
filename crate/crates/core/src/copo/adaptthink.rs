//! Reward for the think/no-think baseline: a small bonus per skipped think block.

use thiserror::Error;

use crate::format::parse_structured;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trajectory has no steps")]
pub struct EmptyTrajectory;

/// `delta * (share of steps with an empty think block) + R`.
pub fn adaptthink_reward(traj: &Trajectory, delta: f64) -> Result<f64, EmptyTrajectory> {
    if traj.steps.is_empty() {
        return Err(EmptyTrajectory);
    }
    let no_think = traj
        .steps
        .iter()
        .filter(|s| {
            parse_structured(&s.raw_text)
                .map(|p| p.is_no_think())
                .unwrap_or(false)
        })
        .count();
    Ok(no_think as f64 * delta / traj.steps.len() as f64 + f64::from(traj.reward.total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvId, Tier};
    use crate::format::CognitiveLevel;
    use crate::trajectory::{terminal_reward, TerminationCause, TrajectoryStep};

    fn traj(empty: usize, total: usize, success: bool) -> Trajectory {
        let step = |think: &str| TrajectoryStep {
            observation: "o".into(),
            raw_text: format!("<level>1</level><think>{think}</think><action>look</action>"),
            level: Some(CognitiveLevel::L1),
            action: "look".into(),
            tokens: 0,
        };
        Trajectory {
            instruction: "x".into(),
            steps: (0..total)
                .map(|i| step(if i < empty { "" } else { "hmm" }))
                .collect(),
            reward: terminal_reward(success, true),
            env_score: 0.0,
            tier: Tier::Short,
            seed: 0,
            env: EnvId::GridHouse,
            task_id: 0,
            family: "pick".into(),
            termination_cause: TerminationCause::Success,
        }
    }

    #[test]
    fn formula_cases() {
        assert!((adaptthink_reward(&traj(4, 10, true), 0.05).unwrap() - 1.02).abs() < 1e-12);
        assert_eq!(adaptthink_reward(&traj(0, 10, true), 0.05).unwrap(), 1.0);
        assert!((adaptthink_reward(&traj(5, 5, false), 0.05).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(
            adaptthink_reward(&traj(0, 0, true), 0.05),
            Err(EmptyTrajectory)
        );
    }
}
