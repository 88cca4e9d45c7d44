use crate::corpus::{Speaker, TrainingInstance, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InputError {
    #[error("history has {tokens} tokens but {roles} roles")]
    RoleLength { tokens: usize, roles: usize },
    #[error("token index {index} outside vocabulary of {vocab}")]
    TokenRange { index: usize, vocab: usize },
    #[error("history has no valid positions")]
    Empty,
    #[error("dropout mark {index} outside history of {len}")]
    MarkRange { index: usize, len: usize },
    #[error("mask lengths disagree with history length {0}")]
    MaskLength(usize),
}

/// A history as vocabulary indices, with a validity mask (false at padding)
/// and the positions whose word embedding is zeroed by targeted dropout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInput {
    pub tokens: Vec<usize>,
    pub roles: Vec<Speaker>,
    pub valid: Vec<bool>,
    pub zeroed: Vec<bool>,
}

impl EncodedInput {
    pub fn new(vocab: &Vocab, tokens: &[String], roles: &[Speaker], marks: &[usize]) -> Result<Self, InputError> {
        if tokens.len() != roles.len() {
            return Err(InputError::RoleLength {
                tokens: tokens.len(),
                roles: roles.len(),
            });
        }
        if tokens.is_empty() {
            return Err(InputError::Empty);
        }
        let mut zeroed = vec![false; tokens.len()];
        for &m in marks {
            *zeroed.get_mut(m).ok_or(InputError::MarkRange {
                index: m,
                len: tokens.len(),
            })? = true;
        }
        Ok(Self {
            tokens: vocab.encode(tokens),
            roles: roles.to_vec(),
            valid: vec![true; tokens.len()],
            zeroed,
        })
    }

    pub fn from_instance(vocab: &Vocab, inst: &TrainingInstance, marks: &[usize]) -> Result<Self, InputError> {
        Self::new(vocab, &inst.tokens, &inst.roles, marks)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Prepends `n` padding positions.
    pub fn pad_left(&self, n: usize, pad: usize) -> Self {
        let prefix = |v: &[usize]| std::iter::repeat_n(pad, n).chain(v.iter().copied()).collect();
        let flags = |v: &[bool], fill: bool| std::iter::repeat_n(fill, n).chain(v.iter().copied()).collect();
        Self {
            tokens: prefix(&self.tokens),
            roles: std::iter::repeat_n(Speaker::User, n)
                .chain(self.roles.iter().copied())
                .collect(),
            valid: flags(&self.valid, false),
            zeroed: flags(&self.zeroed, false),
        }
    }

    pub fn check(&self, vocab_size: usize) -> Result<(), InputError> {
        let n = self.tokens.len();
        if self.roles.len() != n {
            return Err(InputError::RoleLength {
                tokens: n,
                roles: self.roles.len(),
            });
        }
        if self.valid.len() != n || self.zeroed.len() != n {
            return Err(InputError::MaskLength(n));
        }
        if !self.valid.iter().any(|&v| v) {
            return Err(InputError::Empty);
        }
        if let Some(&index) = self.tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(InputError::TokenRange {
                index,
                vocab: vocab_size,
            });
        }
        Ok(())
    }
}
