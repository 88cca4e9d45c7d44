//! Dialogue data model, value normalization, span labeling and vocabulary.

mod generate;
mod io;
mod split;
mod vocab;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use generate::{generate_synthetic, GenerateError, GeneratorConfig, Inventories, Templates, Tracking};
pub use io::{load_corpus, parse_dialogue, parse_unlabeled, save_corpus, write_dialogue, CorpusError};
pub use split::{make_oov_split, SplitError, SplitStats};
pub use vocab::{build_vocab, Vocab, PAD, SEP, UNK};

pub const NONE_VALUE: &str = "none";
pub const DONTCARE_VALUE: &str = "dontcare";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn index(self) -> usize {
        match self {
            Speaker::User => 0,
            Speaker::System => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "user" => Some(Speaker::User),
            "system" => Some(Speaker::System),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::System => "system",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub speaker: Speaker,
    pub tokens: Vec<String>,
}

impl Turn {
    pub fn new(speaker: Speaker, text: &str) -> Self {
        Self {
            speaker,
            tokens: text.split_whitespace().map(str::to_lowercase).collect(),
        }
    }
}

/// Gold value of one slot after one user turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRecord {
    pub turn: usize,
    pub slot: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    pub states: Vec<StateRecord>,
}

impl Dialogue {
    /// Gold value of `slot` at `turn`, if that turn is tracked.
    pub fn gold(&self, turn: usize, slot: &str) -> Option<&str> {
        self.states
            .iter()
            .find(|s| s.turn == turn && s.slot == slot)
            .map(|s| s.value.as_str())
    }

    /// Turns that carry at least one state record, ascending.
    pub fn tracked_turns(&self) -> Vec<usize> {
        let mut turns: Vec<usize> = self.states.iter().map(|s| s.turn).collect();
        turns.sort_unstable();
        turns.dedup();
        turns
    }
}

/// The three-way decision of the gate classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoldClass {
    None,
    DontCare,
    Other,
}

impl GoldClass {
    pub const ALL: [GoldClass; 3] = [GoldClass::None, GoldClass::DontCare, GoldClass::Other];

    pub fn of_value(value: &str) -> Self {
        match value {
            NONE_VALUE => GoldClass::None,
            DONTCARE_VALUE => GoldClass::DontCare,
            _ => GoldClass::Other,
        }
    }

    pub fn index(self) -> usize {
        match self {
            GoldClass::None => 0,
            GoldClass::DontCare => 1,
            GoldClass::Other => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub non_pointable: Vec<String>,
}

/// Slot names and the non-pointable classes each one admits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub slots: Vec<SlotSpec>,
}

impl SlotSchema {
    pub fn new(names: &[&str]) -> Self {
        Self {
            slots: names
                .iter()
                .map(|n| SlotSpec {
                    name: n.to_string(),
                    non_pointable: vec![NONE_VALUE.into(), DONTCARE_VALUE.into()],
                })
                .collect(),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    pub fn index_of(&self, slot: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == slot)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Special token standing for the slot type, e.g. `<food>`.
    pub fn symbol(slot: &str) -> String {
        format!("<{slot}>")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
    OovTest,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Dev, Split::Test, Split::OovTest];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::OovTest => "oov_test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|sp| sp.name() == s)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub schema: SlotSchema,
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
    pub oov_test: Vec<Dialogue>,
    pub vocabulary: Vocab,
}

impl Corpus {
    /// Assembles a corpus, building the vocabulary from train and dev.
    pub fn new(
        schema: SlotSchema,
        train: Vec<Dialogue>,
        dev: Vec<Dialogue>,
        test: Vec<Dialogue>,
        oov_test: Vec<Dialogue>,
    ) -> Self {
        let vocabulary = build_vocab(&schema, train.iter().chain(&dev));
        Self {
            schema,
            train,
            dev,
            test,
            oov_test,
            vocabulary,
        }
    }

    pub fn split(&self, split: Split) -> &[Dialogue] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
            Split::OovTest => &self.oov_test,
        }
    }

    /// Distinct pointable gold values of `slot` among training states.
    pub fn value_inventory(&self, slot: &str) -> std::collections::BTreeSet<String> {
        self.train
            .iter()
            .flat_map(|d| &d.states)
            .filter(|s| s.slot == slot && GoldClass::of_value(&s.value) == GoldClass::Other)
            .map(|s| s.value.clone())
            .collect()
    }

    pub fn instances(&self, split: Split, slot: &str, max_history: usize) -> Vec<TrainingInstance> {
        extract_instances(self.split(split), split, slot, max_history)
    }

    /// Stable digest over the canonical serialization of every split.
    pub fn digest(&self) -> String {
        let mut bytes = serde_json::to_vec(&self.schema).expect("schema serializes");
        for split in Split::ALL {
            bytes.extend_from_slice(split.name().as_bytes());
            for d in self.split(split) {
                bytes.extend_from_slice(write_dialogue(d).as_bytes());
                bytes.push(b'\n');
            }
        }
        crate::rng::digest_hex(&bytes)
    }
}

/// One supervised example: a dialogue prefix and the gold value of one slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingInstance {
    pub id: String,
    pub split: Split,
    pub dialogue_id: String,
    pub turn: usize,
    pub tokens: Vec<String>,
    pub roles: Vec<Speaker>,
    pub slot: String,
    pub gold_value: String,
    pub gold_class: GoldClass,
    pub gold_span: Option<(usize, usize)>,
}

impl TrainingInstance {
    pub fn instance_id(dialogue_id: &str, turn: usize, slot: &str) -> String {
        format!("{dialogue_id}:{turn}:{slot}")
    }
}

/// Flattens turns `0..=turn` with a separator token between consecutive
/// turns, keeping at most the last `max_history` tokens.
pub fn flatten_history(turns: &[Turn], turn: usize, max_history: usize) -> (Vec<String>, Vec<Speaker>) {
    let mut tokens = Vec::new();
    let mut roles = Vec::new();
    for (i, t) in turns.iter().take(turn + 1).enumerate() {
        if i > 0 {
            tokens.push(SEP.to_string());
            roles.push(t.speaker);
        }
        tokens.extend(t.tokens.iter().cloned());
        roles.extend(std::iter::repeat_n(t.speaker, t.tokens.len()));
    }
    if tokens.len() > max_history {
        let cut = tokens.len() - max_history;
        tokens.drain(..cut);
        roles.drain(..cut);
    }
    (tokens, roles)
}

pub fn extract_instances(
    dialogues: &[Dialogue],
    split: Split,
    slot: &str,
    max_history: usize,
) -> Vec<TrainingInstance> {
    let mut out = Vec::new();
    for d in dialogues {
        let mut records: Vec<&StateRecord> = d.states.iter().filter(|s| s.slot == slot).collect();
        records.sort_by_key(|s| s.turn);
        for rec in records {
            if rec.turn >= d.turns.len() {
                continue;
            }
            let (tokens, roles) = flatten_history(&d.turns, rec.turn, max_history);
            let gold_class = GoldClass::of_value(&rec.value);
            let gold_span = match gold_class {
                GoldClass::Other => label_reference_span(&tokens, &rec.value),
                _ => None,
            };
            out.push(TrainingInstance {
                id: TrainingInstance::instance_id(&d.id, rec.turn, slot),
                split,
                dialogue_id: d.id.clone(),
                turn: rec.turn,
                tokens,
                roles,
                slot: slot.to_string(),
                gold_value: rec.value.clone(),
                gold_class,
                gold_span,
            });
        }
    }
    out
}

fn normalize_token(token: &str) -> &str {
    match token {
        "moderately" => "moderate",
        "centre" => "center",
        other => other,
    }
}

/// Canonical form of a value string: lowercased, trimmed, single-spaced,
/// with the two frequent spelling variants folded.
pub fn normalize_value(raw: &str) -> String {
    let lowered = raw.trim().to_lowercase();
    lowered
        .split_whitespace()
        .map(normalize_token)
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalized_tokens(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| normalize_value(t)).collect()
}

/// Start indices of every normalized token-sequence match of `value`.
pub fn find_occurrences(tokens: &[String], value: &str) -> Vec<usize> {
    let target: Vec<String> = normalize_value(value).split_whitespace().map(str::to_string).collect();
    if target.is_empty() || target.len() > tokens.len() {
        return Vec::new();
    }
    let norm = normalized_tokens(tokens);
    (0..=norm.len() - target.len())
        .filter(|&s| norm[s..s + target.len()] == target[..])
        .collect()
}

/// Inclusive `(start, end)` of the last occurrence of `value` in `tokens`.
pub fn label_reference_span(tokens: &[String], value: &str) -> Option<(usize, usize)> {
    let len = normalize_value(value).split_whitespace().count();
    find_occurrences(tokens, value)
        .last()
        .map(|&start| (start, start + len - 1))
}

/// Gold value counts over training states of `slot`, most frequent first.
/// `none` is not counted.
pub fn value_frequency_histogram(corpus: &Corpus, slot: &str) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for rec in corpus.train.iter().flat_map(|d| &d.states) {
        if rec.slot == slot && rec.value != NONE_VALUE {
            *counts.entry(rec.value.as_str()).or_default() += 1;
        }
    }
    let mut out: Vec<(String, usize)> = counts.into_iter().map(|(v, c)| (v.to_string(), c)).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Counts of gold classes among `instances`, keyed by class.
pub fn class_counts(instances: &[TrainingInstance]) -> HashMap<GoldClass, usize> {
    let mut counts = HashMap::new();
    for inst in instances {
        *counts.entry(inst.gold_class).or_default() += 1;
    }
    counts
}

#[cfg(test)]
mod tests;
