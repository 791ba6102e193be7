//! Reinforcement learning: rollouts, advantages, expansion, losses and the training loop.

pub mod adaptthink;
pub mod advantage;
pub mod expansion;
pub mod loss;
pub mod rollout;
pub mod trainer;

pub use adaptthink::adaptthink_reward;
pub use advantage::{
    confidence, confidence_weights, group_advantages, normalize_confidences, step_advantages,
    ConfidenceMetric,
};
pub use expansion::{expand_group, CognitiveGroup, ExpansionRecord, Variant};
pub use loss::{surrogate_loss, LossOptions, TrajectoryTerm};
pub use trainer::{train, train_from, Algo, IterationMetrics, TrainError};
