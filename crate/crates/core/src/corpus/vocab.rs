use std::collections::{BTreeSet, HashMap};

use super::PrimitiveKind;
use crate::error::{DimoError, Result};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const SEP: u32 = 2;
pub const NULL: u32 = 3;
pub const SPECIALS: [&str; 4] = ["[PAD]", "[MASK]", "[SEP]", "[NULL]"];

pub const VOCAB_VERSION: &str = "dimo-vocab-v1";

/// Words that can appear in generated captions, after the four specials.
const WORDS: &[&str] = &[
    // subjects
    "a", "person", "someone", "the", "man", "woman", "figure", "somebody", "an", "actor",
    "dancer", "child", "athlete", "individual", "human",
    // verbs, one per primitive
    "walks", "runs", "jumps", "pivots", "spins", "waves", "squats", "stands",
    // complements
    "forward", "ahead", "around", "fast", "quickly", "up", "high", "left", "right", "hello",
    "goodbye", "down", "low", "still", "idle",
    // connectives
    "then", "and", "afterwards",
];

/// Closed caption vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TextVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    verbs: Vec<bool>,
}

impl TextVocab {
    /// The vocabulary the corpus generator writes captions in.
    pub fn standard() -> Self {
        let tokens = SPECIALS.iter().chain(WORDS).map(|s| s.to_string()).collect();
        Self::from_tokens(tokens).expect("built-in vocabulary is valid")
    }

    /// Builds a vocabulary from tokens in id order. Specials must occupy ids 0–3;
    /// verb flags come from the primitive verb table.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4].iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(DimoError::Format("vocabulary must start with [PAD] [MASK] [SEP] [NULL]".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(DimoError::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        let verbs = tokens
            .iter()
            .map(|t| PrimitiveKind::ALL.iter().any(|k| k.verb() == t))
            .collect();
        Ok(TextVocab { tokens, index, verbs })
    }

    /// Vocabulary file: one token per line, id order.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn is_verb(&self, id: u32) -> bool {
        self.verbs.get(id as usize).copied().unwrap_or(false)
    }

    pub fn is_special(&self, id: u32) -> bool {
        id < SPECIALS.len() as u32
    }

    /// Whitespace-split, lowercased, right-padded with `[PAD]` (or truncated) to `max_len`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<Vec<u32>> {
        let mut ids = Vec::with_capacity(max_len);
        for word in text.split_whitespace() {
            let w = word.to_lowercase();
            let id = self.id(&w).ok_or(DimoError::Vocabulary(w))?;
            ids.push(id);
        }
        ids.truncate(max_len);
        ids.resize(max_len, PAD);
        Ok(ids)
    }

    /// Non-special tokens joined by spaces.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| !self.is_special(id) && (id as usize) < self.tokens.len())
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Distinct verb tokens in `ids`.
    pub fn verb_set(&self, ids: &[u32]) -> BTreeSet<u32> {
        ids.iter().copied().filter(|&id| self.is_verb(id)).collect()
    }
}

/// Counts tokens that are not `[PAD]`.
pub fn content_len(ids: &[u32]) -> usize {
    ids.iter().filter(|&&id| id != PAD).count()
}
