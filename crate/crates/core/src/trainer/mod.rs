//! Minibatch training of one slot tracker with Adam and dev-set selection.

mod checkpoint;
mod run_dir;

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{adam_step, AdamConfig, AdamState, AutogradError, Gradients, Tape};
use crate::corpus::{Corpus, Split, TrainingInstance, Vocab};
use crate::dropout::{apply_targeted_dropout, DropoutError, DropoutPlan};
use crate::eval;
use crate::model::{Dropout, EncodedInput, ModelConfig, ModelError, Tracker};
use crate::rng;

pub use checkpoint::{Checkpoint, CheckpointMismatch};
pub use run_dir::RunDir;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub slot: String,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without dev improvement before stopping; 0 disables.
    pub patience: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Targeted dropout probability.
    pub p: f64,
    /// Keep probability of standard dropout; 1 disables it.
    pub keep_prob: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            slot: "food".into(),
            seed: 1,
            batch_size: 50,
            epochs: 30,
            patience: 5,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            p: 0.0,
            keep_prob: 0.5,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(TrainError::Config(format!("dropout p {} outside [0, 1]", self.p)));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(TrainError::Config(format!(
                "keep probability {} outside (0, 1]",
                self.keep_prob
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.clip_norm.is_nan() || self.clip_norm <= 0.0
        {
            return Err(TrainError::Config(
                "learning rate and clip norm must be positive".into(),
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Dev accuracy of the tracked slot; `None` without a dev split.
    pub dev_accuracy: Option<f64>,
    /// Mean joint loss on dev without any dropout.
    pub dev_loss: Option<f64>,
    pub steps: u64,
    pub grad_norm: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training split has no instances for slot {0}")]
    EmptyTrain(String),
    #[error("slot {0} is not in the corpus schema")]
    UnknownSlot(String),
    #[error("dropout plan was built for corpus {plan}, not {corpus}")]
    PlanMismatch { plan: String, corpus: String },
    #[error(transparent)]
    Dropout(#[from] DropoutError),
    #[error("cannot resume: {0}")]
    Resume(#[from] CheckpointMismatch),
    #[error("non-finite parameters after step {0}")]
    NonFinite(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Checkpoint(#[from] crate::autograd::CheckpointError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: TrainLog,
}

/// Called after every epoch with the new record, the latest checkpoint and
/// whether it is the new best.
pub type EpochHook<'a> = dyn FnMut(&EpochRecord, &Checkpoint, bool) -> Result<(), TrainError> + 'a;

struct Prepared {
    slot_index: usize,
    train: Vec<(TrainingInstance, EncodedInput)>,
    dev: Vec<TrainingInstance>,
}

fn prepare(corpus: &Corpus, plan: &DropoutPlan, config: &TrainConfig) -> Result<Prepared, TrainError> {
    config.validate()?;
    let slot_index = corpus
        .schema
        .index_of(&config.slot)
        .ok_or_else(|| TrainError::UnknownSlot(config.slot.clone()))?;
    let digest = corpus.digest();
    if !plan.marks.is_empty() && plan.corpus_digest != digest {
        return Err(TrainError::PlanMismatch {
            plan: plan.corpus_digest.clone(),
            corpus: digest,
        });
    }
    let max_history = config.model.max_history;
    let train: Vec<_> = corpus
        .instances(Split::Train, &config.slot, max_history)
        .into_iter()
        .map(|inst| {
            let input = EncodedInput::from_instance(
                &corpus.vocabulary,
                &inst,
                &plan.turn_marks(&inst.dialogue_id, inst.turn),
            )
            .map_err(ModelError::from)?;
            Ok((inst, input))
        })
        .collect::<Result<_, TrainError>>()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain(config.slot.clone()));
    }
    let dev = corpus.instances(Split::Dev, &config.slot, max_history);
    Ok(Prepared { slot_index, train, dev })
}

/// The targeted-dropout plan for `config.slot` at `config.p`, seeded by
/// `config.seed`.
pub fn build_plan(corpus: &Corpus, config: &TrainConfig) -> Result<DropoutPlan, TrainError> {
    let instances: Vec<_> = corpus
        .schema
        .names()
        .flat_map(|slot| corpus.instances(Split::Train, slot, config.model.max_history))
        .collect();
    Ok(apply_targeted_dropout(
        &instances,
        config.p,
        rng::derive_seed(config.seed, "targeted-dropout"),
        &corpus.digest(),
    )?)
}

/// Builds the plan from `config` and trains.
pub fn train_slot(corpus: &Corpus, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let plan = build_plan(corpus, config)?;
    train(corpus, &plan, config)
}

/// Trains from fresh parameters for `config.epochs` epochs, or until dev
/// accuracy has not improved for `config.patience` epochs.
pub fn train(corpus: &Corpus, plan: &DropoutPlan, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_hook(corpus, plan, config, &mut |_, _, _| Ok(()))
}

pub fn train_with_hook(
    corpus: &Corpus,
    plan: &DropoutPlan,
    config: &TrainConfig,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome, TrainError> {
    let prepared = prepare(corpus, plan, config)?;
    let tracker = Tracker::new(
        config.model.clone(),
        corpus.vocabulary.len(),
        corpus.schema.len(),
        rng::derive_seed(config.seed, &format!("model/{}", config.slot)),
    );
    let adam = AdamState::new(&tracker.params, config.adam());
    let start = Checkpoint::fresh(config.clone(), corpus, plan, tracker, adam);
    run(start.clone(), start, &prepared, &corpus.vocabulary, config, hook)
}

/// Continues training from `last` up to `config.epochs` total epochs.
/// `best` is the best checkpoint so far; it defaults to `last`.
pub fn resume(
    last: Checkpoint,
    best: Option<Checkpoint>,
    corpus: &Corpus,
    plan: &DropoutPlan,
    config: &TrainConfig,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome, TrainError> {
    last.check_compatible(config, corpus, plan)?;
    let best = best.unwrap_or_else(|| last.clone());
    best.check_compatible(config, corpus, plan)?;
    let prepared = prepare(corpus, plan, config)?;
    let mut last = last;
    last.config.epochs = config.epochs;
    last.config.patience = config.patience;
    run(last, best, &prepared, &corpus.vocabulary, config, hook)
}

/// Mean joint loss without dropout, teacher-forced like training.
pub fn mean_loss(
    tracker: &Tracker,
    vocab: &Vocab,
    slot_index: usize,
    instances: &[TrainingInstance],
) -> Result<f64, ModelError> {
    let losses: Vec<f64> = instances
        .par_iter()
        .map(|inst| {
            let input = EncodedInput::from_instance(vocab, inst, &[])?;
            let mut tape = Tape::new(&tracker.params);
            let loss = tracker.instance_loss(&mut tape, &input, slot_index, inst.gold_class, inst.gold_span, None)?;
            Ok(tape.scalar(loss))
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Visiting order of the training instances in `epoch`.
pub fn epoch_order(seed: u64, slot: &str, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &format!("shuffle/{slot}/{epoch}")));
    order
}

fn run(
    mut state: Checkpoint,
    mut best: Checkpoint,
    prepared: &Prepared,
    vocab: &Vocab,
    config: &TrainConfig,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome, TrainError> {
    let mut log = TrainLog::default();
    let mut grads = Gradients::zeros_like(&state.tracker.params);
    while state.epoch < config.epochs && (config.patience == 0 || state.stale_epochs < config.patience) {
        let epoch = state.epoch + 1;
        let timer = Instant::now();
        let order = epoch_order(config.seed, &config.slot, epoch, prepared.train.len());
        let mut dropout_rng = rng::stream(config.seed, &format!("std-dropout/{}/{epoch}", config.slot));
        let mut total_loss = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            grads.zero();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let (inst, input) = &prepared.train[i];
                let mut tape = Tape::new(&state.tracker.params);
                let mut dropout = Dropout {
                    rng: &mut dropout_rng,
                    keep: config.keep_prob,
                };
                let standard = (config.keep_prob < 1.0).then_some(&mut dropout);
                let loss = state.tracker.instance_loss(
                    &mut tape,
                    input,
                    prepared.slot_index,
                    inst.gold_class,
                    inst.gold_span,
                    standard,
                )?;
                total_loss += tape.scalar(loss);
                tape.backward_into(loss, weight, &mut grads)?;
            }
            norm_sum += grads.clip_global_norm(config.clip_norm);
            batches += 1;
            adam_step(&mut state.tracker.params, &grads, &mut state.adam)?;
            if !state.tracker.params.is_finite() {
                return Err(TrainError::NonFinite(state.adam.step_count));
            }
        }
        state.epoch = epoch;
        let dev = if prepared.dev.is_empty() {
            None
        } else {
            let accuracy = eval::instance_accuracy(&state.tracker, vocab, prepared.slot_index, &prepared.dev)?;
            let loss = mean_loss(&state.tracker, vocab, prepared.slot_index, &prepared.dev)?;
            Some((accuracy, loss))
        };
        // Higher accuracy wins, ties go to lower dev loss. Without a dev split
        // the latest epoch is always the selection.
        let improved = dev.is_none_or(|(a, l)| a > state.best_dev || (a == state.best_dev && l < state.best_dev_loss));
        if improved {
            if let Some((a, l)) = dev {
                state.best_dev = a;
                state.best_dev_loss = l;
            }
            state.best_epoch = epoch;
            state.stale_epochs = 0;
        } else {
            state.stale_epochs += 1;
        }
        let dev_accuracy = dev.map(|d| d.0);
        let record = EpochRecord {
            epoch,
            train_loss: total_loss / prepared.train.len() as f64,
            dev_accuracy,
            dev_loss: dev.map(|d| d.1),
            steps: state.adam.step_count,
            grad_norm: norm_sum / batches as f64,
            wall_seconds: timer.elapsed().as_secs_f64(),
        };
        log::info!(
            "{} epoch {epoch}: loss {:.5} dev {:?}",
            config.slot,
            record.train_loss,
            dev_accuracy
        );
        if improved {
            best = state.clone();
        }
        hook(&record, &state, improved)?;
        log.records.push(record);
    }
    Ok(TrainOutcome { best, last: state, log })
}

#[cfg(test)]
mod tests;
