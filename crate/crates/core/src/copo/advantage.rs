//! Group-relative advantages and confidence-weighted redistribution across levels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdvantageError {
    #[error("a group needs at least two members, got {0}")]
    GroupTooSmall(usize),
    #[error("confidence needs at least one action token")]
    EmptyAction,
}

/// How sure the model is of the action tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMetric {
    #[default]
    MeanLogProb,
    MaxLogProb,
    MinLogProb,
    NegEntropy,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes with the population deviation; all zeros when it falls below `guard`.
fn standardize(x: &[f64], guard: f64) -> Vec<f64> {
    let (mean, std) = mean_std(x);
    if std < guard {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

/// Trajectory advantages within one group of rollouts on the same task.
pub fn group_advantages(rewards: &[f64], guard: f64) -> Result<Vec<f64>, AdvantageError> {
    if rewards.len() < 2 {
        return Err(AdvantageError::GroupTooSmall(rewards.len()));
    }
    Ok(standardize(rewards, guard))
}

/// Confidence of an action from its token log-probabilities; `dists` holds
/// the full next-token log-distribution at each action position and is only
/// read by [`ConfidenceMetric::NegEntropy`].
pub fn confidence(
    metric: ConfidenceMetric,
    logprobs: &[f64],
    dists: &[Vec<f64>],
) -> Result<f64, AdvantageError> {
    if logprobs.is_empty() {
        return Err(AdvantageError::EmptyAction);
    }
    Ok(match metric {
        ConfidenceMetric::MeanLogProb => logprobs.iter().sum::<f64>() / logprobs.len() as f64,
        ConfidenceMetric::MaxLogProb => logprobs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ConfidenceMetric::MinLogProb => logprobs.iter().copied().fold(f64::INFINITY, f64::min),
        ConfidenceMetric::NegEntropy => {
            if dists.is_empty() {
                return Err(AdvantageError::EmptyAction);
            }
            let h: f64 = dists
                .iter()
                .map(|lp| {
                    -lp.iter()
                        .filter(|x| x.is_finite())
                        .map(|x| x.exp() * x)
                        .sum::<f64>()
                })
                .sum();
            -h / dists.len() as f64
        }
    })
}

/// Standardizes the four per-level confidences.
pub fn normalize_confidences(c: &[f64; 4], guard: f64) -> [f64; 4] {
    let v = standardize(c, guard);
    [v[0], v[1], v[2], v[3]]
}

/// Softmax of `m * c_norm`.
pub fn confidence_weights(c_norm: &[f64; 4], m: f64) -> [f64; 4] {
    let s = c_norm.map(|x| m * x);
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = s.map(|x| (x - max).exp());
    let z: f64 = e.iter().sum();
    e.map(|x| x / z)
}

/// Per-level step advantages for a successful trajectory.
pub fn step_advantages(a_traj: f64, weights: &[f64; 4]) -> [f64; 4] {
    weights.map(|g| g * a_traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(group_advantages(&[1.0; 4], 1e-8).unwrap(), vec![0.0; 4]);
        assert_eq!(
            group_advantages(&[1.0, 0.0], 1e-8).unwrap(),
            vec![1.0, -1.0]
        );
        let a = group_advantages(&[1.0, 0.0, 0.0, 0.0], 1e-8).unwrap();
        for (x, y) in a.iter().zip([1.7321, -0.5774, -0.5774, -0.5774]) {
            assert!((x - y).abs() < 1e-4);
        }
        assert_eq!(
            group_advantages(&[1.0], 1e-8),
            Err(AdvantageError::GroupTooSmall(1))
        );
        let w = confidence_weights(&normalize_confidences(&[1.0, 0.0, 0.0, 0.0], 1e-8), 2.0);
        for (x, y) in w.iter().zip([0.9713, 0.00958, 0.00958, 0.00958]) {
            assert!((x - y).abs() < 1e-3, "{w:?}");
        }
        assert_eq!(confidence_weights(&[0.0; 4], 2.0), [0.25; 4]);
        let s = step_advantages(1.2, &[0.25; 4]);
        assert!(s.iter().all(|x| (x - 0.3).abs() < 1e-12));
    }

    #[test]
    fn confidence_metrics() {
        let lp = [-1.0, -3.0];
        assert_eq!(
            confidence(ConfidenceMetric::MeanLogProb, &lp, &[]).unwrap(),
            -2.0
        );
        assert_eq!(
            confidence(ConfidenceMetric::MaxLogProb, &lp, &[]).unwrap(),
            -1.0
        );
        assert_eq!(
            confidence(ConfidenceMetric::MinLogProb, &lp, &[]).unwrap(),
            -3.0
        );
        assert_eq!(
            confidence(ConfidenceMetric::MeanLogProb, &[0.0, 0.0], &[]).unwrap(),
            0.0
        );
        let v = 7usize;
        let uniform = vec![-(v as f64).ln(); v];
        let ne = confidence(ConfidenceMetric::NegEntropy, &[-1.0], &[uniform]).unwrap();
        assert!((ne + (v as f64).ln()).abs() < 1e-12);
        assert_eq!(
            confidence(ConfidenceMetric::MeanLogProb, &[], &[]),
            Err(AdvantageError::EmptyAction)
        );
    }

    #[test]
    fn weights_ignore_location_and_scale() {
        let c = [-0.3, -1.2, -0.05, -2.0];
        let w = confidence_weights(&normalize_confidences(&c, 1e-8), 2.0);
        let shifted = confidence_weights(&normalize_confidences(&c.map(|x| x + 5.0), 1e-8), 2.0);
        let scaled = confidence_weights(&normalize_confidences(&c.map(|x| x * 3.0), 1e-8), 2.0);
        for k in 0..4 {
            assert!((w[k] - shifted[k]).abs() < 1e-12);
            assert!((w[k] - scaled[k]).abs() < 1e-12);
        }
        let order = |x: &[f64; 4]| {
            let mut i = [0, 1, 2, 3];
            i.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
            i
        };
        assert_eq!(order(&w), order(&c));
        let small = confidence_weights(&normalize_confidences(&c, 1e-8), 1e-9);
        assert!(small.iter().all(|x| (x - 0.25).abs() < 1e-6));
    }
}
