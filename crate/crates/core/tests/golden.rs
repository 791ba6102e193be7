//! Observation transcripts pinned under `tests/fixtures/v1`.
//!
//! Regenerate with `COGNILAB_BLESS=1 cargo test --test golden` after an
//! intentional change to environment text, then bump the fixture version.

use std::path::PathBuf;

use cognilab::envs::{reset, EnvId, EnvSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Transcript {
    env: EnvId,
    task_id: usize,
    seed: u64,
    instruction: String,
    initial_observation: String,
    /// `(action, observation, score)` per step.
    steps: Vec<(String, String, f64)>,
    success: bool,
}

fn record(env: EnvId, task_id: usize, probe: Option<&str>) -> Transcript {
    let spec = EnvSpec::new(env, task_id, 0);
    let (mut state, instruction, initial_observation) = reset(&spec).unwrap();
    let mut steps = Vec::new();
    if let Some(a) = probe {
        let out = state.step(a).unwrap();
        steps.push((a.to_string(), out.observation, out.score));
    }
    while !state.done() {
        let a = state.oracle_action().unwrap();
        let out = state.step(&a).unwrap();
        steps.push((a, out.observation, out.score));
    }
    Transcript {
        env,
        task_id,
        seed: 0,
        instruction,
        initial_observation,
        steps,
        success: state.success(),
    }
}

fn check(name: &str, t: Transcript) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/v1")
        .join(format!("{name}.json"));
    if std::env::var_os("COGNILAB_BLESS").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&t).unwrap() + "\n").unwrap();
        return;
    }
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let want: Transcript = serde_json::from_str(&text).unwrap();
    assert_eq!(t, want, "{name} drifted from its fixture");
}

#[test]
fn gridhouse_oracle_transcripts() {
    for task in [0, 1, 2, 3, 4, 5, 1000] {
        check(
            &format!("gridhouse_{task}"),
            record(EnvId::GridHouse, task, None),
        );
    }
}

#[test]
fn gridhouse_inadmissible_probe() {
    let t = record(EnvId::GridHouse, 0, Some("dance wildly"));
    assert_eq!(t.steps[0].1, "Nothing happened");
    check("gridhouse_0_inadmissible", t);
}

#[test]
fn minilab_oracle_transcripts() {
    for task in [0, 1, 2, 450, 800] {
        check(
            &format!("minilab_{task}"),
            record(EnvId::MiniLab, task, None),
        );
    }
}

#[test]
fn minilab_unknown_action_probe() {
    let t = record(EnvId::MiniLab, 0, Some("dance wildly"));
    assert_eq!(t.steps[0].1, cognilab::envs::NO_KNOWN_ACTION);
    check("minilab_0_inadmissible", t);
}
