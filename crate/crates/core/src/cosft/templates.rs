//! Level-specific thinking templates filled from environment facts.

use crate::envs::{LastOutcome, ThinkFacts};
use crate::format::{CognitiveLevel, L1_THINK};

/// Slot headers in schema order for each level.
pub fn slot_headers(level: CognitiveLevel) -> &'static [&'static str] {
    match level {
        CognitiveLevel::L1 => &[],
        CognitiveLevel::L2 => &["Current state:", "Available actions:", "Reasoning:"],
        CognitiveLevel::L3 => &[
            "Goal:",
            "Current state:",
            "Available actions:",
            "Reflection:",
            "Reasoning:",
        ],
        CognitiveLevel::L4 => &[
            "Goal:",
            "Current state:",
            "Available actions:",
            "Reflection:",
            "Evaluation:",
            "Reasoning:",
        ],
    }
}

fn state(f: &ThinkFacts) -> String {
    let holding = if f.holding.is_empty() {
        "holding nothing".to_string()
    } else {
        format!("holding {}", f.holding.join(" and "))
    };
    format!("in {}, {holding}", f.location)
}

fn reflection(f: &ThinkFacts) -> &'static str {
    match f.last_outcome {
        LastOutcome::Start => "no action taken yet",
        LastOutcome::Worked => "the last action worked",
        LastOutcome::NoEffect => "the last action failed, try another",
    }
}

/// Renders the think text for `level`.
///
/// `candidates` are admissible actions to mention (the chosen one included);
/// `chosen` is the action the step ends with.
pub fn render_think(
    level: CognitiveLevel,
    facts: &ThinkFacts,
    candidates: &[String],
    chosen: &str,
) -> String {
    if level == CognitiveLevel::L1 {
        return L1_THINK.to_string();
    }
    let mut parts = Vec::new();
    for header in slot_headers(level) {
        let body = match *header {
            "Goal:" => facts.goal.clone(),
            "Current state:" => state(facts),
            "Available actions:" => candidates.join(", "),
            "Reflection:" => reflection(facts).to_string(),
            "Evaluation:" => {
                let others: Vec<String> = candidates
                    .iter()
                    .filter(|c| c.as_str() != chosen)
                    .map(|c| format!("{c} does not help"))
                    .collect();
                if others.is_empty() {
                    "only one option fits".to_string()
                } else {
                    others.join(", ")
                }
            }
            "Reasoning:" => facts.key_fact.clone(),
            _ => unreachable!("unknown slot"),
        };
        parts.push(format!("{header} {body}."));
    }
    parts.join(" ")
}

pub(crate) fn words() -> Vec<&'static str> {
    vec![
        "Goal",
        "Current",
        "state",
        "Available",
        "actions",
        "Reflection",
        "Evaluation",
        "Reasoning",
        "Okay",
        "I",
        "think",
        "have",
        "finished",
        "thinking",
        "in",
        "holding",
        "nothing",
        "and",
        "no",
        "action",
        "taken",
        "yet",
        "the",
        "last",
        "worked",
        "failed",
        "try",
        "another",
        "does",
        "not",
        "help",
        "only",
        "one",
        "option",
        "fits",
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{parse_structured, StructuredStep};

    fn facts() -> ThinkFacts {
        ThinkFacts {
            location: "hallway".into(),
            holding: vec![],
            goal: "put hot apple in bedroom drawer".into(),
            key_fact: "apple is in kitchen".into(),
            last_outcome: LastOutcome::Start,
        }
    }

    #[test]
    fn headers_appear_once_in_order() {
        let cands = vec!["look".to_string(), "go to kitchen".to_string()];
        for level in CognitiveLevel::ALL {
            let text = render_think(level, &facts(), &cands, "go to kitchen");
            let mut last = 0;
            for h in slot_headers(level) {
                assert_eq!(text.matches(h).count(), 1, "{h} in {text}");
                let at = text.find(h).unwrap();
                assert!(at >= last);
                last = at;
            }
            let step = StructuredStep::from_text(level, &text, "go to kitchen");
            assert!(parse_structured(&step.raw_text()).is_ok());
        }
    }

    #[test]
    fn l1_is_the_fixed_sentence() {
        assert_eq!(
            render_think(CognitiveLevel::L1, &facts(), &[], "look"),
            L1_THINK
        );
    }

    #[test]
    fn deeper_levels_are_longer() {
        let cands = vec![
            "look".to_string(),
            "go to kitchen".to_string(),
            "go to bedroom".to_string(),
        ];
        let lens: Vec<usize> = CognitiveLevel::ALL
            .iter()
            .map(|l| {
                crate::format::tokenize(&render_think(*l, &facts(), &cands, "go to kitchen")).len()
            })
            .collect();
        assert!(lens.windows(2).all(|w| w[0] < w[1]), "{lens:?}");
    }
}
