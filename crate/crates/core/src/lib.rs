//! Confidence-guided cognitive-level selection for text agents.

pub mod config;
pub mod copo;
pub mod cosft;
pub mod envs;
pub mod format;
pub mod harness;
pub mod policy;
pub mod trajectory;
