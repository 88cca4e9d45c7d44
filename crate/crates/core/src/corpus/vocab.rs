use std::collections::HashMap;

use super::{Dialogue, SlotSchema};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const SEP: &str = "<sep>";

/// Dense token index. Specials come first (padding, unknown, separator,
/// then one symbol per slot); corpus tokens follow by descending frequency,
/// ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    specials: usize,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>, specials: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            index,
            specials,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special_count(&self) -> usize {
        self.specials
    }

    pub fn pad(&self) -> usize {
        0
    }

    pub fn unk(&self) -> usize {
        1
    }

    /// Index of `token`, falling back to the unknown token.
    pub fn index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk())
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index(t)).collect()
    }
}

pub fn build_vocab<'a>(schema: &SlotSchema, dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Vocab {
    let mut specials = vec![PAD.to_string(), UNK.to_string(), SEP.to_string()];
    specials.extend(schema.names().map(SlotSchema::symbol));
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for d in dialogues {
        for t in &d.turns {
            for tok in &t.tokens {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
    }
    let mut words: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(w, _)| !specials.iter().any(|s| s == w))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let n_special = specials.len();
    let mut tokens = specials;
    tokens.extend(words.into_iter().map(|(w, _)| w.to_string()));
    Vocab::from_tokens(tokens, n_special)
}
