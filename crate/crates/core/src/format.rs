//! Structured step grammar: `<level>K</level><think>T</think><action>A</action>`.
//!
//! Text is handled as a token sequence. Tags are atomic tokens, words are split
//! on whitespace, and the punctuation marks in [`PUNCTUATION`] are split off as
//! tokens of their own. [`detokenize`] produces the canonical spelling, so
//! `detokenize(tokenize(s)) == s` for any canonically spelled `s`.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LEVEL_OPEN: &str = "<level>";
pub const LEVEL_CLOSE: &str = "</level>";
pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ACTION_OPEN: &str = "<action>";
pub const ACTION_CLOSE: &str = "</action>";

pub const TAGS: [&str; 6] = [
    LEVEL_OPEN,
    LEVEL_CLOSE,
    THINK_OPEN,
    THINK_CLOSE,
    ACTION_OPEN,
    ACTION_CLOSE,
];

/// Fixed thinking text for instinctive responses.
pub const L1_THINK: &str = "Okay, I think I have finished thinking.";

pub const PUNCTUATION: [char; 6] = [',', '.', ':', ';', '?', '!'];

/// Reasoning depth chosen at a step, shallowest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CognitiveLevel {
    L1,
    L2,
    L3,
    L4,
}

impl CognitiveLevel {
    pub const ALL: [CognitiveLevel; 4] = [Self::L1, Self::L2, Self::L3, Self::L4];

    /// Zero-based index, `L1 -> 0`.
    pub fn index(self) -> usize {
        self as usize
    }

    /// One-based level number as written inside the level tag.
    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn from_number(n: u8) -> Option<Self> {
        n.checked_sub(1).and_then(|i| Self::from_index(i as usize))
    }

    pub fn digit(self) -> &'static str {
        ["1", "2", "3", "4"][self.index()]
    }

    fn from_digit(s: &str) -> Option<Self> {
        match s {
            "1" => Some(Self::L1),
            "2" => Some(Self::L2),
            "3" => Some(Self::L3),
            "4" => Some(Self::L4),
            _ => None,
        }
    }
}

impl fmt::Display for CognitiveLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.number())
    }
}

pub fn is_tag(token: &str) -> bool {
    TAGS.contains(&token)
}

/// Splits text into tag, word and punctuation tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut rest = text;
    let flush = |word: &mut String, tokens: &mut Vec<String>| {
        if !word.is_empty() {
            tokens.push(std::mem::take(word));
        }
    };
    while let Some(c) = rest.chars().next() {
        if c == '<' {
            if let Some(tag) = TAGS.iter().find(|t| rest.starts_with(**t)) {
                flush(&mut word, &mut tokens);
                tokens.push((*tag).to_string());
                rest = &rest[tag.len()..];
                continue;
            }
        }
        if c.is_whitespace() {
            flush(&mut word, &mut tokens);
        } else if PUNCTUATION.contains(&c) {
            flush(&mut word, &mut tokens);
            tokens.push(c.to_string());
        } else {
            word.push(c);
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut tokens);
    tokens
}

fn is_punct(token: &str) -> bool {
    let mut chars = token.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if PUNCTUATION.contains(&c))
}

/// Canonical spelling of a token sequence.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut prev_tag = true;
    for tok in tokens {
        let tok = tok.as_ref();
        let tag = is_tag(tok);
        if !out.is_empty() && !tag && !prev_tag && !is_punct(tok) {
            out.push(' ');
        }
        out.push_str(tok);
        prev_tag = tag;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    MissingTag,
    TagOrder,
    BadLevel,
    EmptyAction,
    /// Content outside the three tag blocks.
    TrailingContent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("format violation {kind:?} at token {position}")]
pub struct FormatViolation {
    pub kind: ViolationKind,
    /// Index of the first offending token (or the sequence length when input ran out).
    pub position: usize,
}

/// One parsed decision step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredStep {
    pub level: CognitiveLevel,
    pub think: Vec<String>,
    pub action: Vec<String>,
    /// Full canonical token sequence of the step.
    pub raw: Vec<String>,
    /// Range of `raw` strictly inside the action tags.
    pub action_span: Range<usize>,
}

impl StructuredStep {
    /// Builds a step from its parts. Panics if `action` is empty.
    pub fn new(level: CognitiveLevel, think: Vec<String>, action: Vec<String>) -> Self {
        assert!(
            !action.is_empty(),
            "structured step needs a non-empty action"
        );
        let mut raw = Vec::with_capacity(think.len() + action.len() + 7);
        raw.extend(
            [LEVEL_OPEN, level.digit(), LEVEL_CLOSE, THINK_OPEN]
                .iter()
                .map(|s| s.to_string()),
        );
        raw.extend(think.iter().cloned());
        raw.push(THINK_CLOSE.to_string());
        raw.push(ACTION_OPEN.to_string());
        let start = raw.len();
        raw.extend(action.iter().cloned());
        let action_span = start..raw.len();
        raw.push(ACTION_CLOSE.to_string());
        Self {
            level,
            think,
            action,
            raw,
            action_span,
        }
    }

    pub fn from_text(level: CognitiveLevel, think: &str, action: &str) -> Self {
        Self::new(level, tokenize(think), tokenize(action))
    }

    pub fn raw_text(&self) -> String {
        detokenize(&self.raw)
    }

    pub fn think_text(&self) -> String {
        detokenize(&self.think)
    }

    pub fn action_text(&self) -> String {
        detokenize(&self.action)
    }

    /// Token span of the thinking content inside `raw`.
    pub fn think_span(&self) -> Range<usize> {
        4..4 + self.think.len()
    }

    /// True when the think block is empty (`<think></think>`).
    pub fn is_no_think(&self) -> bool {
        self.think.is_empty()
    }

    pub fn has_canonical_l1_think(&self) -> bool {
        self.think == tokenize(L1_THINK)
    }
}

fn violation(kind: ViolationKind, position: usize) -> FormatViolation {
    FormatViolation { kind, position }
}

/// Parses a token sequence against the step grammar.
///
/// Any thinking content (including none) is accepted at every level; the fixed
/// L1 sentence is checked separately by [`validate_sft_target`].
pub fn parse_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<StructuredStep, FormatViolation> {
    let toks: Vec<&str> = tokens.iter().map(|t| t.as_ref()).collect();
    let n = toks.len();

    let expect_tag = |pos: usize, tag: &str| -> Result<(), FormatViolation> {
        match toks.get(pos) {
            None => Err(violation(ViolationKind::MissingTag, n)),
            Some(t) if *t == tag => Ok(()),
            Some(t) if is_tag(t) => {
                if toks.contains(&tag) {
                    Err(violation(ViolationKind::TagOrder, pos))
                } else {
                    Err(violation(ViolationKind::MissingTag, pos))
                }
            }
            Some(_) => Err(violation(ViolationKind::TrailingContent, pos)),
        }
    };
    // Words up to the next tag, which must be `close`.
    let block = |start: usize, close: &str| -> Result<usize, FormatViolation> {
        let end = (start..n).find(|&i| is_tag(toks[i])).unwrap_or(n);
        match toks.get(end) {
            None => Err(violation(ViolationKind::MissingTag, n)),
            Some(t) if *t == close => Ok(end),
            Some(_) => {
                if toks[end..].contains(&close) {
                    Err(violation(ViolationKind::TagOrder, end))
                } else {
                    Err(violation(ViolationKind::MissingTag, end))
                }
            }
        }
    };

    expect_tag(0, LEVEL_OPEN)?;
    let level_end = (1..n).find(|&i| is_tag(toks[i])).unwrap_or(n);
    if level_end == 1 {
        return Err(violation(ViolationKind::BadLevel, 1));
    }
    let level = CognitiveLevel::from_digit(toks[1]).ok_or(violation(ViolationKind::BadLevel, 1))?;
    if level_end > 2 {
        return Err(violation(ViolationKind::BadLevel, 2));
    }
    expect_tag(2, LEVEL_CLOSE)?;
    expect_tag(3, THINK_OPEN)?;
    let think_end = block(4, THINK_CLOSE)?;
    expect_tag(think_end + 1, ACTION_OPEN)?;
    let action_start = think_end + 2;
    let action_end = block(action_start, ACTION_CLOSE)?;
    if action_end == action_start {
        return Err(violation(ViolationKind::EmptyAction, action_start));
    }
    if action_end + 1 < n {
        return Err(violation(ViolationKind::TrailingContent, action_end + 1));
    }
    let own = |r: Range<usize>| toks[r].iter().map(|s| s.to_string()).collect::<Vec<_>>();
    Ok(StructuredStep {
        level,
        think: own(4..think_end),
        action: own(action_start..action_end),
        raw: own(0..n),
        action_span: action_start..action_end,
    })
}

/// Tokenizes and parses raw model output text.
pub fn parse_structured(raw: &str) -> Result<StructuredStep, FormatViolation> {
    parse_tokens(&tokenize(raw))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SftTargetError {
    #[error(transparent)]
    Format(#[from] FormatViolation),
    #[error("level 1 target must think exactly {L1_THINK:?}")]
    NonCanonicalL1,
}

/// Stricter check used for supervised targets: the grammar must hold and an
/// L1 step must carry the fixed sentence byte-for-byte.
pub fn validate_sft_target(raw: &str) -> Result<StructuredStep, SftTargetError> {
    let step = parse_structured(raw)?;
    if step.raw_text() != raw {
        return Err(SftTargetError::Format(violation(
            ViolationKind::TrailingContent,
            0,
        )));
    }
    if step.level == CognitiveLevel::L1 && step.think_text() != L1_THINK {
        return Err(SftTargetError::NonCanonicalL1);
    }
    Ok(step)
}
