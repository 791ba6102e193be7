//! Checkpoint documents: architecture, vocabulary hash and parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, Policy, PolicyModel, Vocabulary};

const FORMAT: &str = "cognilab-checkpoint-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("vocabulary hash mismatch: checkpoint {found}, runtime {expected}")]
    VocabMismatch { found: String, expected: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Document {
    format: String,
    config: ModelConfig,
    vocab_hash: String,
    params: Vec<f64>,
}

pub fn to_string(policy: &Policy) -> String {
    let doc = Document {
        format: FORMAT.to_string(),
        config: policy.model.config.clone(),
        vocab_hash: policy.vocab.hash(),
        params: policy.model.theta.clone(),
    };
    serde_json::to_string(&doc).expect("checkpoint serializes")
}

pub fn from_str(text: &str, vocab: Vocabulary) -> Result<Policy, CheckpointError> {
    let doc: Document =
        serde_json::from_str(text).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    if doc.format != FORMAT {
        return Err(CheckpointError::Malformed(format!(
            "unknown format {:?}",
            doc.format
        )));
    }
    let expected = vocab.hash();
    if doc.vocab_hash != expected {
        return Err(CheckpointError::VocabMismatch {
            found: doc.vocab_hash,
            expected,
        });
    }
    let model = PolicyModel::from_parts(doc.config, doc.params).ok_or_else(|| {
        CheckpointError::Malformed("parameter count does not match the architecture".into())
    })?;
    if model.config.vocab_size != vocab.len() {
        return Err(CheckpointError::Malformed(
            "vocabulary size does not match".into(),
        ));
    }
    Ok(Policy::new(model, vocab))
}

pub fn save(policy: &Policy, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_string(policy)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Policy, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_str(&text, Vocabulary::standard())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy() -> Policy {
        let vocab = Vocabulary::standard();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            n_layers: 1,
            n_heads: 1,
            d_ff: 8,
            context_len: 16,
            ignore_think: false,
        };
        Policy::new(PolicyModel::new(cfg, 7), vocab)
    }

    #[test]
    fn round_trip_is_exact() {
        let p = policy();
        let back = from_str(&to_string(&p), Vocabulary::standard()).unwrap();
        assert_eq!(back, p);
        assert_eq!(to_string(&back), to_string(&p));
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let p = policy();
        let mut words: Vec<String> = Vocabulary::standard().tokens()[4..].to_vec();
        words.push("zebra".into());
        let other = Vocabulary::from_words(words);
        assert!(matches!(
            from_str(&to_string(&p), other),
            Err(CheckpointError::VocabMismatch { .. })
        ));
    }
}
