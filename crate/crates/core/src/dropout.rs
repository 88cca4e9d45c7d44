//! Targeted feature dropout.
//!
//! For each training instance with a pointable gold value, one Bernoulli(p)
//! draw decides whether every occurrence of that value in the history has
//! its word embedding zeroed for the whole run. The model then has to locate
//! the value from context alone, as it must for unseen values at test time.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{find_occurrences, normalize_value, GoldClass, Split, TrainingInstance};
use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DropoutError {
    #[error("dropout probability must lie in [0, 1], got {0}")]
    Probability(f64),
    #[error("instance {0} is not from the training split")]
    NotTraining(String),
}

/// Positions to zero, keyed by instance id. Instances that were not selected
/// are absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DropoutPlan {
    pub p: f64,
    pub seed: u64,
    pub corpus_digest: String,
    pub marks: BTreeMap<String, Vec<usize>>,
}

impl DropoutPlan {
    pub fn marks_for(&self, id: &str) -> &[usize] {
        self.marks.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn selected(&self) -> usize {
        self.marks.len()
    }

    /// Union of the marks of every instance at `turn` of `dialogue_id`, over
    /// all slots. Instances sharing a turn share the history, so positions
    /// agree.
    pub fn turn_marks(&self, dialogue_id: &str, turn: usize) -> Vec<usize> {
        let prefix = format!("{dialogue_id}:{turn}:");
        let mut out: Vec<usize> = self
            .marks
            .range(prefix.clone()..)
            .take_while(|(k, _)| k.starts_with(&prefix))
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Token positions covered by any occurrence of `value`.
pub fn occurrence_positions(tokens: &[String], value: &str) -> Vec<usize> {
    let len = normalize_value(value).split_whitespace().count();
    let mut out: Vec<usize> = find_occurrences(tokens, value)
        .into_iter()
        .flat_map(|s| s..s + len)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

pub fn apply_targeted_dropout(
    instances: &[TrainingInstance],
    p: f64,
    seed: u64,
    corpus_digest: &str,
) -> Result<DropoutPlan, DropoutError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DropoutError::Probability(p));
    }
    let mut plan = DropoutPlan {
        p,
        seed,
        corpus_digest: corpus_digest.to_string(),
        marks: BTreeMap::new(),
    };
    for inst in instances {
        if inst.split != Split::Train {
            return Err(DropoutError::NotTraining(inst.id.clone()));
        }
        if inst.gold_class != GoldClass::Other || inst.gold_span.is_none() {
            continue;
        }
        let mut rng = rng::stream(seed, &format!("targeted-dropout/{}", inst.id));
        if rng.gen::<f64>() < p {
            let positions = occurrence_positions(&inst.tokens, &inst.gold_value);
            if !positions.is_empty() {
                plan.marks.insert(inst.id.clone(), positions);
            }
        }
    }
    Ok(plan)
}
