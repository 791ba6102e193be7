//! Evaluation, level-distribution analysis, run comparison and plot tables.

pub mod analysis;
pub mod eval;

pub use analysis::{
    compare_runs, emit_plot_data, level_distribution, profile_report, profile_trajectories,
    Comparison, DistributionProfile, SuiteMismatch,
};
pub use eval::{eval_tasks, evaluate, Agent, Aggregates, EpisodeRow, EvalReport};
pub mod runs;

pub use runs::{cosft_from_config, evaluate_policy, run_training, RunError, RunSummary};
