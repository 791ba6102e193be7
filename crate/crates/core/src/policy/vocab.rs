//! Closed word-level vocabulary.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::format::{tokenize, CognitiveLevel, PUNCTUATION, TAGS};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Words used by the prompt renderer.
pub const PROMPT_WORDS: [&str; 6] = ["task", "start", "act", "obs", "step", "actions"];

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from distinct words; duplicates are dropped keeping first occurrence.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for w in [PAD, BOS, EOS, UNK]
            .into_iter()
            .map(String::from)
            .chain(words.into_iter().map(Into::into))
        {
            if !index.contains_key(&w) {
                index.insert(w.clone(), tokens.len());
                tokens.push(w);
            }
        }
        Self { tokens, index }
    }

    /// The project vocabulary: tags, level digits, numbers, punctuation,
    /// prompt words, template words and both environments' word lists.
    pub fn standard() -> Self {
        let mut words: Vec<String> = TAGS.iter().map(|s| s.to_string()).collect();
        words.extend(CognitiveLevel::ALL.iter().map(|l| l.digit().to_string()));
        words.extend((0..=100).map(|n| n.to_string()));
        words.extend(PUNCTUATION.iter().map(|c| c.to_string()));
        words.extend(PROMPT_WORDS.iter().map(|s| s.to_string()));
        words.extend(crate::cosft::template_words().into_iter().map(String::from));
        words.extend(crate::envs::env_words().into_iter().map(String::from));
        Self::from_words(words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn pad(&self) -> usize {
        0
    }

    pub fn bos(&self) -> usize {
        1
    }

    pub fn eos(&self) -> usize {
        2
    }

    pub fn unk(&self) -> usize {
        3
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(self.unk()))
            .collect()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.encode_tokens(&tokenize(text))
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::detokenize;

    #[test]
    fn tags_are_single_tokens() {
        let v = Vocabulary::standard();
        for tag in TAGS {
            assert_eq!(v.encode(tag).len(), 1);
            assert_ne!(v.encode(tag)[0], v.unk());
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let v = Vocabulary::standard();
        let text = "<level>2</level><think>Current state: in kitchen, holding apple.</think><action>heat apple with microwave</action>";
        let ids = v.encode(text);
        assert!(!ids.contains(&v.unk()));
        assert_eq!(detokenize(&v.decode(&ids)), detokenize(&tokenize(text)));
    }

    #[test]
    fn vocabulary_is_small_and_stable() {
        let v = Vocabulary::standard();
        assert!(v.len() < 600, "{}", v.len());
        assert_eq!(v.hash(), Vocabulary::standard().hash());
        assert_eq!(v.token(v.bos()), BOS);
        let other = Vocabulary::from_words(["a", "b"]);
        assert_ne!(v.hash(), other.hash());
    }
}
