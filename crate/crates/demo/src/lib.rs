//! wasm-bindgen bindings for the static page in `www/`.
//!
//! Everything crosses the boundary as numbers, `Float64Array`s or JSON
//! strings, so the same functions are testable natively.

use cognilab::copo::advantage::{
    confidence_weights, group_advantages, normalize_confidences, step_advantages,
};
use cognilab::envs::{reset, EnvId, EnvSpec, EnvState, Split};
use serde_json::json;
use wasm_bindgen::prelude::*;

const GUARD: f64 = 1e-8;

/// Normalized confidences, softmax weights and per-level advantages as JSON.
#[wasm_bindgen]
pub fn explore_confidences(
    c1: f64,
    c2: f64,
    c3: f64,
    c4: f64,
    m: f64,
    trajectory_advantage: f64,
) -> String {
    let c_norm = normalize_confidences(&[c1, c2, c3, c4], GUARD);
    let weights = confidence_weights(&c_norm, m.max(1e-6));
    let advantages = step_advantages(trajectory_advantage, &weights);
    json!({ "c_norm": c_norm, "weights": weights, "advantages": advantages }).to_string()
}

/// Standardized rewards of one group; empty when the group has fewer than two members.
#[wasm_bindgen]
pub fn group_advantages_of(rewards: Vec<f64>) -> Vec<f64> {
    group_advantages(&rewards, GUARD).unwrap_or_default()
}

/// A GridHouse episode driven from the page.
#[wasm_bindgen]
pub struct Playground {
    state: EnvState,
    instruction: String,
    log: Vec<(String, String)>,
    first: String,
    score: f64,
}

#[wasm_bindgen]
impl Playground {
    /// Starts evaluation task `index` (wrapping around the split).
    #[wasm_bindgen(constructor)]
    pub fn new(index: usize) -> Playground {
        let split = EnvId::GridHouse.split(Split::Eval);
        let task = split.start + index % split.len();
        let (state, instruction, first) =
            reset(&EnvSpec::new(EnvId::GridHouse, task, 0)).expect("evaluation tasks exist");
        Playground {
            state,
            instruction,
            log: Vec::new(),
            first,
            score: 0.0,
        }
    }

    /// Applies an action; returns the resulting observation.
    pub fn act(&mut self, action: &str) -> String {
        match self.state.step(action) {
            Ok(out) => {
                self.score = out.score;
                self.log.push((action.to_string(), out.observation.clone()));
                out.observation
            }
            Err(e) => e.to_string(),
        }
    }

    /// Next action of the scripted expert, or an empty string once done.
    pub fn hint(&self) -> String {
        self.state.oracle_action().unwrap_or_default()
    }

    /// Current view of the episode as JSON.
    pub fn view(&self) -> String {
        json!({
            "task": self.state.spec().task_id,
            "family": self.state.family(),
            "instruction": self.instruction,
            "first_observation": self.first,
            "history": self.log,
            "admissible": if self.state.done() { Vec::new() } else { self.state.admissible_actions() },
            "done": self.state.done(),
            "success": self.state.success(),
            "score": self.score,
            "steps": self.state.step_counter(),
            "max_steps": EnvId::GridHouse.max_steps(),
        })
        .to_string()
    }
}
