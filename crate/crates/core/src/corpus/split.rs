use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Corpus, Dialogue, GoldClass};
use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("fraction must lie strictly between 0 and 1, got {0}")]
    Fraction(f64),
    #[error("slot {0} is not in the schema")]
    UnknownSlot(String),
    #[error("selecting {selected} of {total} value types would remove every type")]
    RemovesAll { selected: usize, total: usize },
}

/// Before/after statistics of an OOV split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub slot: String,
    pub value_types_before: usize,
    pub value_types_after: usize,
    pub removed_types: Vec<String>,
    pub train_instances_before: usize,
    pub train_instances_after: usize,
    pub test_instances: usize,
    /// Share of test instances with a pointable gold value outside the
    /// reduced training inventory (percent).
    pub test_oov_rate_before: f64,
    pub test_oov_rate_after: f64,
}

impl fmt::Display for SplitStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<32}{:>10}{:>10}", "", "original", "new")?;
        writeln!(
            f,
            "{:<32}{:>10}{:>10}",
            format!("#{} types in train", self.slot),
            self.value_types_before,
            self.value_types_after
        )?;
        writeln!(
            f,
            "{:<32}{:>10}{:>10}",
            "#train instances", self.train_instances_before, self.train_instances_after
        )?;
        writeln!(
            f,
            "{:<32}{:>10}{:>10}",
            "#test instances", self.test_instances, self.test_instances
        )?;
        writeln!(
            f,
            "{:<32}{:>10.1}{:>10.1}",
            format!("OOV {} types in test (%)", self.slot),
            self.test_oov_rate_before,
            self.test_oov_rate_after
        )?;
        write!(f, "removed types: {}", self.removed_types.len())
    }
}

fn slot_instances(dialogues: &[Dialogue], slot: &str) -> usize {
    dialogues
        .iter()
        .flat_map(|d| &d.states)
        .filter(|s| s.slot == slot)
        .count()
}

fn oov_rate(dialogues: &[Dialogue], slot: &str, inventory: &BTreeSet<String>) -> f64 {
    let mut pointable = 0usize;
    let mut unknown = 0usize;
    for s in dialogues.iter().flat_map(|d| &d.states) {
        if s.slot == slot && GoldClass::of_value(&s.value) == GoldClass::Other {
            pointable += 1;
            if !inventory.contains(&s.value) {
                unknown += 1;
            }
        }
    }
    if pointable == 0 {
        0.0
    } else {
        100.0 * unknown as f64 / pointable as f64
    }
}

fn strip(dialogues: &[Dialogue], slot: &str, removed: &BTreeSet<String>) -> Vec<Dialogue> {
    dialogues
        .iter()
        .filter_map(|d| {
            let states: Vec<_> = d
                .states
                .iter()
                .filter(|s| !(s.slot == slot && removed.contains(&s.value)))
                .cloned()
                .collect();
            (!states.is_empty()).then(|| Dialogue { states, ..d.clone() })
        })
        .collect()
}

/// Marks `ceil(fraction * types)` training value types of `slot` as unknown
/// and drops every train/dev instance whose gold value is one of them.
/// Test splits are left untouched.
pub fn make_oov_split(
    corpus: &Corpus,
    slot: &str,
    fraction: f64,
    seed: u64,
) -> Result<(Corpus, SplitStats), SplitError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SplitError::Fraction(fraction));
    }
    if corpus.schema.index_of(slot).is_none() {
        return Err(SplitError::UnknownSlot(slot.to_string()));
    }
    let types: Vec<String> = corpus.value_inventory(slot).into_iter().collect();
    let selected = (fraction * types.len() as f64).ceil() as usize;
    if selected >= types.len() {
        return Err(SplitError::RemovesAll {
            selected,
            total: types.len(),
        });
    }
    let mut shuffled = types.clone();
    shuffled.shuffle(&mut rng::stream(seed, &format!("oov-split/{slot}")));
    let removed: BTreeSet<String> = shuffled.into_iter().take(selected).collect();

    let reduced = Corpus::new(
        corpus.schema.clone(),
        strip(&corpus.train, slot, &removed),
        strip(&corpus.dev, slot, &removed),
        corpus.test.clone(),
        corpus.oov_test.clone(),
    );
    let before_inv = corpus.value_inventory(slot);
    let after_inv = reduced.value_inventory(slot);
    let stats = SplitStats {
        slot: slot.to_string(),
        value_types_before: types.len(),
        value_types_after: after_inv.len(),
        removed_types: removed.into_iter().collect(),
        train_instances_before: slot_instances(&corpus.train, slot),
        train_instances_after: slot_instances(&reduced.train, slot),
        test_instances: slot_instances(&corpus.test, slot),
        test_oov_rate_before: oov_rate(&corpus.test, slot, &before_inv),
        test_oov_rate_after: oov_rate(&corpus.test, slot, &after_inv),
    };
    Ok((reduced, stats))
}
