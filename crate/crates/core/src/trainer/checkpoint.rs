use std::path::Path;

use crate::autograd::{AdamConfig, AdamState, CheckpointError, CheckpointFile, ParamStore, Tensor};
use crate::corpus::{Corpus, SlotSchema, Vocab};
use crate::dropout::DropoutPlan;
use crate::model::Tracker;
use crate::rng;

use super::{TrainConfig, TrainError};

/// Full training state: enough to predict, and to resume bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub schema: SlotSchema,
    pub vocab: Vocab,
    pub corpus_digest: String,
    pub plan_digest: String,
    pub tracker: Tracker,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub best_dev: f64,
    pub best_dev_loss: f64,
    pub best_epoch: usize,
    pub stale_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointMismatch {
    #[error("checkpoint was trained on corpus {expected}, got {found}")]
    Corpus { expected: String, found: String },
    #[error("checkpoint used dropout plan {expected}, got {found}")]
    Plan { expected: String, found: String },
    #[error("config field {0} differs from the checkpoint")]
    Config(&'static str),
}

pub fn plan_digest(plan: &DropoutPlan) -> String {
    rng::digest_hex(&serde_json::to_vec(plan).expect("plan serializes"))
}

fn config_digest(schema: &SlotSchema, vocab: &Vocab, tracker: &Tracker) -> String {
    let mut bytes = serde_json::to_vec(schema).expect("schema serializes");
    bytes.extend(serde_json::to_vec(&tracker.config).expect("config serializes"));
    for t in vocab.tokens() {
        bytes.extend_from_slice(t.as_bytes());
        bytes.push(0);
    }
    rng::digest_hex(&bytes)
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serializes")
}

fn missing(what: &str) -> CheckpointError {
    CheckpointError::Missing(what.to_string())
}

fn bad(what: &str, msg: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Parse {
        line: 0,
        message: format!("{what}: {msg}"),
    }
}

impl Checkpoint {
    pub(super) fn fresh(
        config: TrainConfig,
        corpus: &Corpus,
        plan: &DropoutPlan,
        tracker: Tracker,
        adam: AdamState,
    ) -> Self {
        Self {
            config,
            schema: corpus.schema.clone(),
            vocab: corpus.vocabulary.clone(),
            corpus_digest: corpus.digest(),
            plan_digest: plan_digest(plan),
            tracker,
            adam,
            epoch: 0,
            best_dev: f64::NEG_INFINITY,
            best_dev_loss: f64::INFINITY,
            best_epoch: 0,
            stale_epochs: 0,
        }
    }

    pub fn slot_index(&self) -> usize {
        self.schema
            .index_of(&self.config.slot)
            .expect("checkpoint slot is in its schema")
    }

    /// Rejects resuming with a different corpus, plan, or any config value
    /// other than the epoch budget and patience.
    pub fn check_compatible(
        &self,
        config: &TrainConfig,
        corpus: &Corpus,
        plan: &DropoutPlan,
    ) -> Result<(), CheckpointMismatch> {
        let digest = corpus.digest();
        if digest != self.corpus_digest {
            return Err(CheckpointMismatch::Corpus {
                expected: self.corpus_digest.clone(),
                found: digest,
            });
        }
        let pd = plan_digest(plan);
        if pd != self.plan_digest {
            return Err(CheckpointMismatch::Plan {
                expected: self.plan_digest.clone(),
                found: pd,
            });
        }
        let c = &self.config;
        let checks: [(&'static str, bool); 8] = [
            ("slot", c.slot == config.slot),
            ("seed", c.seed == config.seed),
            ("batch_size", c.batch_size == config.batch_size),
            ("learning_rate", c.learning_rate == config.learning_rate),
            ("clip_norm", c.clip_norm == config.clip_norm),
            ("p", c.p == config.p),
            ("keep_prob", c.keep_prob == config.keep_prob),
            ("model", c.model == config.model),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((field, _)) => Err(CheckpointMismatch::Config(field)),
            None => Ok(()),
        }
    }

    pub fn to_file(&self) -> CheckpointFile {
        let meta = vec![
            ("train-config".to_string(), json(&self.config)),
            ("schema".into(), json(&self.schema)),
            ("corpus-digest".into(), self.corpus_digest.clone()),
            ("plan-digest".into(), self.plan_digest.clone()),
            ("epoch".into(), self.epoch.to_string()),
            ("best-dev".into(), format!("{:?}", self.best_dev)),
            ("best-dev-loss".into(), format!("{:?}", self.best_dev_loss)),
            ("best-epoch".into(), self.best_epoch.to_string()),
            ("stale-epochs".into(), self.stale_epochs.to_string()),
            ("adam-config".into(), json(&self.adam.config)),
            ("adam-step".into(), self.adam.step_count.to_string()),
            ("vocab-specials".into(), self.vocab.special_count().to_string()),
        ];
        let mut tensors = Vec::new();
        for (id, name, t) in self.tracker.params.iter() {
            tensors.push((format!("param/{name}"), t.clone()));
            tensors.push((format!("adam.m/{name}"), self.adam.first_moment[id.index()].clone()));
            tensors.push((format!("adam.v/{name}"), self.adam.second_moment[id.index()].clone()));
        }
        CheckpointFile {
            seed: self.config.seed,
            config_digest: config_digest(&self.schema, &self.vocab, &self.tracker),
            meta,
            lists: vec![("vocab".into(), self.vocab.tokens().to_vec())],
            tensors,
        }
    }

    pub fn from_file(file: &CheckpointFile) -> Result<Self, CheckpointError> {
        let meta = |k: &str| file.meta(k).ok_or_else(|| missing(k));
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CheckpointError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| bad(key, e))
        }
        let config: TrainConfig = serde_json::from_str(meta("train-config")?).map_err(|e| bad("train-config", e))?;
        let schema: SlotSchema = serde_json::from_str(meta("schema")?).map_err(|e| bad("schema", e))?;
        let adam_config: AdamConfig = serde_json::from_str(meta("adam-config")?).map_err(|e| bad("adam-config", e))?;
        let tokens = file.list("vocab").ok_or_else(|| missing("vocab"))?.to_vec();
        let vocab = Vocab::from_tokens(tokens, parse("vocab-specials", meta("vocab-specials")?)?);

        let template = Tracker::new(config.model.clone(), vocab.len(), schema.len(), 0);
        let mut params = ParamStore::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        let tensor = |key: String| -> Result<Tensor, CheckpointError> {
            file.tensor(&key).cloned().ok_or_else(|| missing(&key))
        };
        for (_, name, _) in template.params.iter() {
            params.insert(name, tensor(format!("param/{name}"))?);
            first.push(tensor(format!("adam.m/{name}"))?);
            second.push(tensor(format!("adam.v/{name}"))?);
        }
        let tracker = Tracker::from_params(config.model.clone(), vocab.len(), schema.len(), params)
            .map_err(|e| bad("parameters", e))?;
        if config_digest(&schema, &vocab, &tracker) != file.config_digest {
            return Err(bad(
                "config-digest",
                "does not match schema, vocabulary and model config",
            ));
        }
        if schema.index_of(&config.slot).is_none() {
            return Err(bad("train-config", format!("slot {} not in schema", config.slot)));
        }
        let adam = AdamState {
            config: adam_config,
            step_count: parse("adam-step", meta("adam-step")?)?,
            first_moment: first,
            second_moment: second,
        };
        Ok(Self {
            config,
            schema,
            vocab,
            corpus_digest: meta("corpus-digest")?.to_string(),
            plan_digest: meta("plan-digest")?.to_string(),
            tracker,
            adam,
            epoch: parse("epoch", meta("epoch")?)?,
            best_dev: parse("best-dev", meta("best-dev")?)?,
            best_dev_loss: parse("best-dev-loss", meta("best-dev-loss")?)?,
            best_epoch: parse("best-epoch", meta("best-epoch")?)?,
            stale_epochs: parse("stale-epochs", meta("stale-epochs")?)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(self.to_file().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Ok(Self::from_file(&CheckpointFile::load(path)?)?)
    }
}
