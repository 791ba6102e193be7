//! Prompt rendering with a sliding interaction history.

use crate::format::tokenize;

use super::vocab::{Vocabulary, BOS};
use super::PolicyError;

/// Rendered prompt, ready to feed to the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptContext {
    pub ids: Vec<usize>,
    /// History pairs actually included after truncation.
    pub history_kept: usize,
}

/// Everything the agent may see at one decision point.
#[derive(Debug, Clone, Copy)]
pub struct PromptView<'a> {
    pub instruction: &'a str,
    pub first_observation: &'a str,
    /// `(action, observation that followed)` for every past step.
    pub history: &'a [(String, String)],
    /// Listed actions (GridHouse) or `None` (MiniLab).
    pub admissible: Option<&'a [String]>,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PromptLimits {
    pub history_window: usize,
    pub context_len: usize,
    /// Tokens kept free for the response.
    pub response_reserve: usize,
}

fn render(view: &PromptView<'_>, keep: usize) -> Vec<String> {
    let mut t = vec![BOS.to_string(), "task".into(), ":".into()];
    t.extend(tokenize(view.instruction));
    t.extend(["start".to_string(), ":".to_string()]);
    t.extend(tokenize(view.first_observation));
    for (act, obs) in &view.history[view.history.len() - keep..] {
        t.extend(["act".to_string(), ":".to_string()]);
        t.extend(tokenize(act));
        t.extend(["obs".to_string(), ":".to_string()]);
        t.extend(tokenize(obs));
    }
    t.extend(["step".to_string(), view.step.min(100).to_string()]);
    if let Some(acts) = view.admissible {
        t.extend(["actions".to_string(), ":".to_string()]);
        for (i, a) in acts.iter().enumerate() {
            if i > 0 {
                t.push(",".into());
            }
            t.extend(tokenize(a));
        }
    }
    t
}

/// Renders the prompt, dropping the oldest history pairs until it fits.
pub fn render_prompt(
    vocab: &Vocabulary,
    view: &PromptView<'_>,
    limits: &PromptLimits,
) -> Result<PromptContext, PolicyError> {
    let budget = limits.context_len.saturating_sub(limits.response_reserve);
    let mut keep = limits.history_window.min(view.history.len());
    loop {
        let tokens = render(view, keep);
        if tokens.len() <= budget {
            return Ok(PromptContext {
                ids: vocab.encode_tokens(&tokens),
                history_kept: keep,
            });
        }
        if keep == 0 {
            return Err(PolicyError::ContextOverflow {
                len: tokens.len(),
                limit: budget,
            });
        }
        keep -= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(history: &[(String, String)]) -> PromptView<'_> {
        PromptView {
            instruction: "put apple in bedroom drawer",
            first_observation: "you are in hallway . apple is in kitchen .",
            history,
            admissible: None,
            step: history.len(),
        }
    }

    fn history(n: usize) -> Vec<(String, String)> {
        (0..n)
            .map(|i| ("look".to_string(), format!("you are in hallway . step {i}")))
            .collect()
    }

    #[test]
    fn keeps_the_most_recent_pairs() {
        let v = Vocabulary::standard();
        let h = history(9);
        let limits = PromptLimits {
            history_window: 6,
            context_len: 512,
            response_reserve: 100,
        };
        let p = render_prompt(&v, &view(&h), &limits).unwrap();
        assert_eq!(p.history_kept, 6);
        let text = v.decode(&p.ids).join(" ");
        assert!(text.contains("step 8"));
        assert!(!text.contains("step 2 "));
        assert!(text.contains("step 3"));
    }

    #[test]
    fn truncates_to_fit_and_reports_overflow() {
        let v = Vocabulary::standard();
        let h = history(6);
        let mut limits = PromptLimits {
            history_window: 6,
            context_len: 60,
            response_reserve: 10,
        };
        let p = render_prompt(&v, &view(&h), &limits).unwrap();
        assert!(p.ids.len() <= 50);
        assert!(p.history_kept < 6);
        limits.context_len = 20;
        assert!(matches!(
            render_prompt(&v, &view(&h), &limits),
            Err(PolicyError::ContextOverflow { .. })
        ));
    }
}
