//! Level-annotated supervised data built from oracle runs, and the SFT loop.

pub mod dataset;
pub mod templates;
pub mod train;

pub use dataset::{
    build_adaptthink_dataset, build_balanced_dataset, build_dataset_with,
    build_expert_selected_dataset, collect_expert_trajectories, expert_level, CosftExample,
    ExpertEpisode, ExpertStep, ThinkStyle,
};
pub use templates::{render_think, slot_headers};
pub use train::{train_cosft, CosftError, SftOptions};

/// Words the templates may emit, for the vocabulary.
pub fn template_words() -> Vec<&'static str> {
    templates::words()
}
