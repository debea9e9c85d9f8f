use std::collections::HashMap;

use crate::corpus::LabeledExample;
use crate::error::{Error, Result};

pub const NULL_INDEX: u32 = 0;
pub const UNK_INDEX: u32 = 1;
pub const NULL_TOKEN: &str = "<null>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercased token ↔ dense index map. Index 0 is padding, 1 is unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Keeps training tokens seen at least `min_freq` times, ordered by
    /// descending frequency then lexicographically.
    pub fn build(examples: &[LabeledExample], min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ex in examples {
            for t in ex.arg1.iter().chain(&ex.arg2) {
                *counts.entry(t.to_lowercase()).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq.max(1) && t != NULL_TOKEN && t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(
            [NULL_TOKEN.to_string(), UNK_TOKEN.to_string()]
                .into_iter()
                .chain(kept.into_iter().map(|(t, _)| t))
                .collect(),
        )
        .expect("specials are in place")
    }

    /// `tokens[0]` and `tokens[1]` must be the padding and unknown markers.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != NULL_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Checkpoint("vocabulary must start with <null> and <unk>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> u32 {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: u32) -> &str {
        &self.tokens[index as usize]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.tokens.join("\n").into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Checkpoint(format!("vocabulary: {e}")))?;
        Self::from_tokens(text.split('\n').map(str::to_string).collect())
    }
}
