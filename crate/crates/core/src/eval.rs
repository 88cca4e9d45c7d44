//! Per-slot and joint accuracy, with the known/unknown value breakdown.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_value, Corpus, Dialogue, GoldClass, Split, TrainingInstance, Vocab};
use crate::model::{EncodedInput, ModelError, SlotValue, Tracker};
use crate::trainer::{self, TrainConfig, TrainError};

/// Predictions keyed by `(dialogue id, turn)`, then slot.
pub type Predictions = BTreeMap<(String, usize), BTreeMap<String, SlotValue>>;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no prediction for slot {slot} at turn {turn} of dialogue {dialogue}")]
    MissingPrediction {
        dialogue: String,
        turn: usize,
        slot: String,
    },
    #[error("slot {0} is not in the corpus schema")]
    UnknownSlot(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotReport {
    pub slot: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub known_total: usize,
    pub known_correct: usize,
    pub known_accuracy: f64,
    pub unknown_total: usize,
    pub unknown_correct: usize,
    pub unknown_accuracy: f64,
    /// Turns whose gold value is `none` or `dontcare`.
    pub non_pointable_total: usize,
    pub non_pointable_correct: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub slots: Vec<SlotReport>,
    pub joint_total: usize,
    pub joint_correct: usize,
    pub joint_accuracy: f64,
    /// Free-form run settings echoed into the report (dropout p, seeds).
    pub config: BTreeMap<String, String>,
}

/// `correct / total`, or 0 when there is nothing to score.
pub fn ratio(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

impl EvalReport {
    pub fn slot(&self, name: &str) -> Option<&SlotReport> {
        self.slots.iter().find(|s| s.slot == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const TSV_HEADER: &'static str =
        "split\tslot\tp\taccuracy\tknown_accuracy\tunknown_accuracy\tknown_total\tunknown_total\tjoint_accuracy";

    /// One summary row per slot.
    pub fn tsv_rows(&self) -> Vec<String> {
        let p = self.config.get("p").map(String::as_str).unwrap_or("-");
        self.slots
            .iter()
            .map(|s| {
                format!(
                    "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{:.4}",
                    self.split,
                    s.slot,
                    p,
                    s.accuracy,
                    s.known_accuracy,
                    s.unknown_accuracy,
                    s.known_total,
                    s.unknown_total,
                    self.joint_accuracy
                )
            })
            .collect()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "split {}", self.split)?;
        writeln!(
            f,
            "{:<12}{:>8}{:>10}{:>10}{:>10}",
            "slot", "turns", "overall", "known", "unknown"
        )?;
        for s in &self.slots {
            writeln!(
                f,
                "{:<12}{:>8}{:>10.4}{:>10.4}{:>10.4}",
                s.slot, s.total, s.accuracy, s.known_accuracy, s.unknown_accuracy
            )?;
        }
        write!(f, "joint {:.4} over {} turns", self.joint_accuracy, self.joint_total)
    }
}

/// Scores `predictions` against the gold states of `dialogues` for `slots`.
/// A pointable gold value is unknown when its normalized form is missing
/// from that slot's training inventory.
pub fn score(
    predictions: &Predictions,
    dialogues: &[Dialogue],
    slots: &[String],
    inventories: &BTreeMap<String, BTreeSet<String>>,
    split: &str,
) -> Result<EvalReport, EvalError> {
    let normalized: BTreeMap<&str, BTreeSet<String>> = inventories
        .iter()
        .map(|(k, v)| (k.as_str(), v.iter().map(|x| normalize_value(x)).collect()))
        .collect();
    let mut reports: Vec<SlotReport> = slots
        .iter()
        .map(|s| SlotReport {
            slot: s.clone(),
            ..SlotReport::default()
        })
        .collect();
    let (mut joint_total, mut joint_correct) = (0, 0);
    for d in dialogues {
        for turn in d.tracked_turns() {
            let mut any = false;
            let mut all = true;
            for (k, slot) in slots.iter().enumerate() {
                let Some(gold) = d.gold(turn, slot) else { continue };
                any = true;
                let predicted = predictions
                    .get(&(d.id.clone(), turn))
                    .and_then(|m| m.get(slot))
                    .ok_or_else(|| EvalError::MissingPrediction {
                        dialogue: d.id.clone(),
                        turn,
                        slot: slot.clone(),
                    })?;
                let ok = *predicted == SlotValue::from_gold(gold);
                all &= ok;
                let r = &mut reports[k];
                r.total += 1;
                r.correct += ok as usize;
                match GoldClass::of_value(gold) {
                    GoldClass::Other => {
                        let known = normalized
                            .get(slot.as_str())
                            .is_some_and(|inv| inv.contains(&normalize_value(gold)));
                        if known {
                            r.known_total += 1;
                            r.known_correct += ok as usize;
                        } else {
                            r.unknown_total += 1;
                            r.unknown_correct += ok as usize;
                        }
                    }
                    _ => {
                        r.non_pointable_total += 1;
                        r.non_pointable_correct += ok as usize;
                    }
                }
            }
            if any {
                joint_total += 1;
                joint_correct += all as usize;
            }
        }
    }
    for r in &mut reports {
        r.accuracy = ratio(r.correct, r.total);
        r.known_accuracy = ratio(r.known_correct, r.known_total);
        r.unknown_accuracy = ratio(r.unknown_correct, r.unknown_total);
    }
    Ok(EvalReport {
        split: split.to_string(),
        slots: reports,
        joint_total,
        joint_correct,
        joint_accuracy: ratio(joint_correct, joint_total),
        config: BTreeMap::new(),
    })
}

/// Runs `tracker` over every instance, in parallel. Output order matches input.
pub fn predict_instances(
    tracker: &Tracker,
    vocab: &Vocab,
    slot_index: usize,
    instances: &[TrainingInstance],
) -> Result<Vec<SlotValue>, ModelError> {
    instances
        .par_iter()
        .map(|inst| {
            let input = EncodedInput::from_instance(vocab, inst, &[])?;
            Ok(tracker.predict(&input, &inst.tokens, slot_index)?.value)
        })
        .collect()
}

/// Slot accuracy of `tracker` on prepared instances.
pub fn instance_accuracy(
    tracker: &Tracker,
    vocab: &Vocab,
    slot_index: usize,
    instances: &[TrainingInstance],
) -> Result<f64, ModelError> {
    let predicted = predict_instances(tracker, vocab, slot_index, instances)?;
    let correct = predicted
        .iter()
        .zip(instances)
        .filter(|(p, inst)| **p == SlotValue::from_gold(&inst.gold_value))
        .count();
    Ok(ratio(correct, instances.len()))
}

/// One trained tracker per slot, sharing a vocabulary.
pub struct SlotModel<'a> {
    pub slot: String,
    pub tracker: &'a Tracker,
    pub vocab: &'a Vocab,
}

/// Predicts every tracked turn of `split` with the given slot models.
pub fn predict_split(models: &[SlotModel<'_>], corpus: &Corpus, split: Split) -> Result<Predictions, EvalError> {
    let mut out = Predictions::new();
    for m in models {
        let slot_index = corpus
            .schema
            .index_of(&m.slot)
            .ok_or_else(|| EvalError::UnknownSlot(m.slot.clone()))?;
        let instances = corpus.instances(split, &m.slot, m.tracker.config.max_history);
        let values = predict_instances(m.tracker, m.vocab, slot_index, &instances)?;
        for (inst, v) in instances.into_iter().zip(values) {
            out.entry((inst.dialogue_id, inst.turn))
                .or_default()
                .insert(m.slot.clone(), v);
        }
    }
    Ok(out)
}

/// Training inventories per slot, as used by `score`.
pub fn inventories(corpus: &Corpus, slots: &[String]) -> BTreeMap<String, BTreeSet<String>> {
    slots.iter().map(|s| (s.clone(), corpus.value_inventory(s))).collect()
}

/// Predicts and scores `split` in one go.
pub fn evaluate(models: &[SlotModel<'_>], corpus: &Corpus, split: Split) -> Result<EvalReport, EvalError> {
    let predictions = predict_split(models, corpus, split)?;
    let slots: Vec<String> = models.iter().map(|m| m.slot.clone()).collect();
    score(
        &predictions,
        corpus.split(split),
        &slots,
        &inventories(corpus, &slots),
        split.name(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub report: EvalReport,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("dropout probability {0} outside [0, 1]")]
    Probability(f64),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Trains one model of `base.slot` per dropout probability and scores each
/// on `split`. Everything but `p` is shared, seeds included.
pub fn sweep(corpus: &Corpus, ps: &[f64], base: &TrainConfig, split: Split) -> Result<Vec<SweepRow>, SweepError> {
    if let Some(&p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(SweepError::Probability(p));
    }
    let mut rows = Vec::with_capacity(ps.len());
    for &p in ps {
        let config = TrainConfig { p, ..base.clone() };
        let outcome = trainer::train_slot(corpus, &config)?;
        let model = SlotModel {
            slot: config.slot.clone(),
            tracker: &outcome.best.tracker,
            vocab: &outcome.best.vocab,
        };
        let mut report = evaluate(&[model], corpus, split)?;
        report.config.insert("p".into(), p.to_string());
        report.config.insert("seed".into(), config.seed.to_string());
        report
            .config
            .insert("best_epoch".into(), outcome.best.epoch.to_string());
        rows.push(SweepRow { p, report });
    }
    Ok(rows)
}

/// Dropout probability against known and unknown accuracy of one slot.
pub fn sweep_table(rows: &[SweepRow], slot: &str) -> String {
    let mut out = format!(
        "{:>6}{:>10}{:>10}{:>10}{:>8}\n",
        "p", "known", "unknown", "overall", "n_unk"
    );
    for r in rows {
        if let Some(s) = r.report.slot(slot) {
            out.push_str(&format!(
                "{:>6}{:>10.4}{:>10.4}{:>10.4}{:>8}\n",
                r.p, s.known_accuracy, s.unknown_accuracy, s.accuracy, s.unknown_total
            ));
        }
    }
    out
}
