//! Synthetic restaurant-search dialogues with per-turn gold states.
//!
//! System turns are dialogue acts (`request slot food`, `api_call`), user
//! turns are filled templates. The `oov_test` split draws food and location
//! values exclusively from held-out inventories.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Dialogue, SlotSchema, Speaker, Split, StateRecord, Turn, DONTCARE_VALUE, NONE_VALUE};
use crate::rng;

pub const SLOTS: [&str; 3] = ["food", "location", "price"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerateError {
    #[error("inventory for {0} is empty")]
    EmptyInventory(String),
    #[error("held-out {slot} values also appear in the training inventory: {values:?}")]
    OovOverlap { slot: String, values: Vec<String> },
    #[error("no templates for {0}")]
    MissingTemplates(String),
}

/// Which user turns receive gold state records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tracking {
    /// Only turns answered by an `api_call` act.
    ApiCall,
    EveryTurn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inventories {
    pub food: Vec<String>,
    pub food_oov: Vec<String>,
    pub location: Vec<String>,
    pub location_oov: Vec<String>,
    pub price: Vec<String>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Inventories {
    fn regular(&self, slot: &str) -> &[String] {
        match slot {
            "food" => &self.food,
            "location" => &self.location,
            _ => &self.price,
        }
    }

    fn held_out(&self, slot: &str) -> &[String] {
        match slot {
            "food" => &self.food_oov,
            "location" => &self.location_oov,
            _ => &self.price,
        }
    }

    /// City-style locations with a disjoint held-out set.
    pub fn babi() -> Self {
        Self {
            food: strings(&[
                "british",
                "cantonese",
                "french",
                "indian",
                "italian",
                "japanese",
                "korean",
                "spanish",
                "thai",
                "vietnamese",
            ]),
            food_oov: strings(&[
                "ethiopian",
                "german",
                "greek",
                "mexican",
                "moroccan",
                "nepalese",
                "peruvian",
                "polish",
                "russian",
                "turkish",
            ]),
            location: strings(&[
                "bangkok", "beijing", "bombay", "hanoi", "london", "madrid", "paris", "rome", "seoul", "tokyo",
            ]),
            location_oov: strings(&[
                "amsterdam",
                "berlin",
                "cairo",
                "istanbul",
                "jakarta",
                "lima",
                "moscow",
                "oslo",
                "sydney",
                "toronto",
            ]),
            price: strings(&["cheap", "moderate", "expensive"]),
        }
    }

    /// Many food types (for skewed histograms) and town areas.
    pub fn dstc_like() -> Self {
        Self {
            food: strings(&[
                "italian",
                "chinese",
                "indian",
                "european",
                "british",
                "modern european",
                "international",
                "spanish",
                "thai",
                "french",
                "japanese",
                "turkish",
                "north american",
                "mediterranean",
                "vietnamese",
                "korean",
                "portuguese",
                "lebanese",
                "gastropub",
                "seafood",
                "asian oriental",
                "mexican",
                "african",
                "steakhouse",
            ]),
            food_oov: Vec::new(),
            location: strings(&["north", "south", "east", "west", "center"]),
            location_oov: Vec::new(),
            price: strings(&["cheap", "moderate", "expensive"]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    pub greetings: Vec<String>,
    pub opening_prefixes: Vec<String>,
    /// Per slot: phrases carrying the value (`{v}`) used in openings and revisions.
    pub clauses: BTreeMap<String, Vec<String>>,
    /// Per slot: answers to `request slot <slot>`.
    pub answers: BTreeMap<String, Vec<String>>,
    pub dontcare: BTreeMap<String, Vec<String>>,
    /// Revision frames around a clause (`{c}`).
    pub revisions: Vec<String>,
    pub closings: Vec<String>,
}

fn slot_map(entries: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
    entries.iter().map(|(k, v)| (k.to_string(), strings(v))).collect()
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            greetings: strings(&["hello", "hi", "good morning", "hello i need a restaurant", "hi there"]),
            opening_prefixes: strings(&[
                "i am looking for a restaurant",
                "can you book a table",
                "i would like to find a place",
                "may i have a table",
                "i need a restaurant",
            ]),
            clauses: slot_map(&[
                (
                    "food",
                    &[
                        "serving {v} food",
                        "with {v} cuisine",
                        "that serves {v} food",
                        "with {v} food",
                    ],
                ),
                (
                    "location",
                    &["in {v}", "in the {v} part of town", "located in {v}", "around {v}"],
                ),
                (
                    "price",
                    &["in the {v} price range", "that is {v} priced", "with {v} prices"],
                ),
            ]),
            answers: slot_map(&[
                (
                    "food",
                    &[
                        "{v} food",
                        "i want {v} food",
                        "{v} please",
                        "how about {v}",
                        "i would like {v} cuisine",
                        "{v} food please",
                    ],
                ),
                (
                    "location",
                    &[
                        "in {v}",
                        "{v} please",
                        "somewhere in {v}",
                        "i am in {v}",
                        "the {v} area",
                    ],
                ),
                (
                    "price",
                    &["{v} please", "something {v}", "a {v} one", "{v} price range"],
                ),
            ]),
            dontcare: slot_map(&[
                (
                    "food",
                    &["any food is fine", "i do not care about the food", "any kind of food"],
                ),
                (
                    "location",
                    &["anywhere is fine", "i do not care about the area", "any part of town"],
                ),
                (
                    "price",
                    &["any price is fine", "i do not care about the price", "any price range"],
                ),
            ]),
            revisions: strings(&[
                "actually i would prefer {c} instead",
                "can you make it {c} instead",
                "instead could it be {c}",
                "sorry i meant {c}",
            ]),
            closings: strings(&["thank you goodbye", "thanks", "that is all thank you", "great thanks"]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_oov_test: usize,
    pub inventories: Inventories,
    /// Zipf exponent over inventory order; 0 samples uniformly.
    pub value_skew: f64,
    pub dontcare_prob: f64,
    pub unstated_prob: f64,
    pub revision_prob: f64,
    /// Probability that a value mention is corrupted, mimicking recognition errors.
    pub noise_prob: f64,
    /// Probability of writing "moderately"/"centre" for "moderate"/"center".
    pub variant_prob: f64,
    pub tracking: Tracking,
    pub templates: Templates,
}

impl GeneratorConfig {
    /// API-call tracking, no non-pointable values, held-out OOV entities.
    pub fn babi(seed: u64) -> Self {
        Self {
            seed,
            n_train: 1000,
            n_dev: 200,
            n_test: 500,
            n_oov_test: 500,
            inventories: Inventories::babi(),
            value_skew: 0.0,
            dontcare_prob: 0.0,
            unstated_prob: 0.0,
            revision_prob: 0.3,
            noise_prob: 0.0,
            variant_prob: 0.3,
            tracking: Tracking::ApiCall,
            templates: Templates::default(),
        }
    }

    /// Every user turn tracked, skewed food frequencies, non-pointable values.
    pub fn dstc_like(seed: u64) -> Self {
        Self {
            seed,
            n_train: 800,
            n_dev: 200,
            n_test: 400,
            n_oov_test: 0,
            inventories: Inventories::dstc_like(),
            value_skew: 1.2,
            dontcare_prob: 0.1,
            unstated_prob: 0.15,
            revision_prob: 0.2,
            noise_prob: 0.0,
            variant_prob: 0.3,
            tracking: Tracking::EveryTurn,
            templates: Templates::default(),
        }
    }

    fn validate(&self) -> Result<(), GenerateError> {
        let inv = &self.inventories;
        for slot in SLOTS {
            if inv.regular(slot).is_empty() {
                return Err(GenerateError::EmptyInventory(slot.to_string()));
            }
            for (name, map) in [
                ("clauses", &self.templates.clauses),
                ("answers", &self.templates.answers),
                ("dontcare", &self.templates.dontcare),
            ] {
                if map.get(slot).is_none_or(Vec::is_empty) {
                    return Err(GenerateError::MissingTemplates(format!("{name}.{slot}")));
                }
            }
        }
        for (slot, held) in [("food", &inv.food_oov), ("location", &inv.location_oov)] {
            let regular: BTreeSet<&String> = inv.regular(slot).iter().collect();
            let overlap: Vec<String> = held.iter().filter(|v| regular.contains(v)).cloned().collect();
            if !overlap.is_empty() {
                return Err(GenerateError::OovOverlap {
                    slot: slot.to_string(),
                    values: overlap,
                });
            }
            if self.n_oov_test > 0 && held.is_empty() {
                return Err(GenerateError::EmptyInventory(format!("{slot}_oov")));
            }
        }
        let t = &self.templates;
        if t.greetings.is_empty() || t.opening_prefixes.is_empty() || t.revisions.is_empty() || t.closings.is_empty() {
            return Err(GenerateError::MissingTemplates("dialogue frame".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Goal {
    Value(String),
    DontCare,
    Unstated,
}

struct DialogueBuilder<'a> {
    config: &'a GeneratorConfig,
    rng: ChaCha8Rng,
    oov: bool,
    turns: Vec<Turn>,
    states: Vec<StateRecord>,
    current: BTreeMap<&'static str, String>,
}

fn pick<'s, R: Rng>(rng: &mut R, items: &'s [String]) -> &'s str {
    items.choose(rng).map(String::as_str).unwrap_or("")
}

fn zipf_weights(n: usize, skew: f64) -> Vec<f64> {
    (0..n).map(|i| 1.0 / ((i + 1) as f64).powf(skew)).collect()
}

fn corrupt(token: &str, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = token.chars().collect();
    if chars.len() < 4 {
        return format!("{token}h");
    }
    let drop = rng.gen_range(1..chars.len() - 1);
    chars
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != drop)
        .map(|(_, c)| c)
        .collect()
}

impl<'a> DialogueBuilder<'a> {
    fn inventory(&self, slot: &str) -> &'a [String] {
        if self.oov {
            self.config.inventories.held_out(slot)
        } else {
            self.config.inventories.regular(slot)
        }
    }

    fn sample_value(&mut self, slot: &str, avoid: Option<&str>) -> String {
        let inv = self.inventory(slot);
        let candidates: Vec<&String> = inv.iter().filter(|v| Some(v.as_str()) != avoid).collect();
        if candidates.is_empty() {
            return inv[0].clone();
        }
        let weights = zipf_weights(candidates.len(), self.config.value_skew);
        let dist = WeightedIndex::new(&weights).expect("positive weights");
        candidates[dist.sample(&mut self.rng)].clone()
    }

    /// Surface form of a value mention, possibly a spelling variant or corrupted.
    fn render_value(&mut self, value: &str) -> String {
        let mut words: Vec<String> = value.split_whitespace().map(str::to_string).collect();
        if self.rng.gen_bool(self.config.variant_prob.clamp(0.0, 1.0)) {
            for w in &mut words {
                match w.as_str() {
                    "moderate" => *w = "moderately".into(),
                    "center" => *w = "centre".into(),
                    _ => {}
                }
            }
        }
        if self.rng.gen_bool(self.config.noise_prob.clamp(0.0, 1.0)) {
            let i = self.rng.gen_range(0..words.len());
            words[i] = corrupt(&words[i], &mut self.rng);
        }
        words.join(" ")
    }

    fn fill(&mut self, template: &str, value: &str) -> String {
        let surface = self.render_value(value);
        template.replace("{v}", &surface)
    }

    fn clause(&mut self, slot: &str, value: &str) -> String {
        let templates = &self.config.templates.clauses[slot];
        let t = pick(&mut self.rng, templates).to_string();
        self.fill(&t, value)
    }

    fn system(&mut self, act: &str) {
        self.turns.push(Turn::new(Speaker::System, act));
    }

    fn user(&mut self, text: &str, track: bool) {
        self.turns.push(Turn::new(Speaker::User, text));
        if track && self.config.tracking == Tracking::EveryTurn {
            self.record();
        }
    }

    fn record(&mut self) {
        let turn = self.turns.len() - 1;
        for slot in SLOTS {
            let value = self
                .current
                .get(slot)
                .cloned()
                .unwrap_or_else(|| NONE_VALUE.to_string());
            self.states.push(StateRecord {
                turn,
                slot: slot.to_string(),
                value,
            });
        }
    }

    fn api_call(&mut self) {
        if self.config.tracking == Tracking::ApiCall {
            self.record();
        }
        self.system("api_call");
    }

    fn build(mut self, id: String) -> Dialogue {
        let cfg = self.config;
        let mut goals: Vec<(&'static str, Goal)> = Vec::new();
        for slot in SLOTS {
            let roll: f64 = self.rng.gen();
            let goal = if roll < cfg.unstated_prob {
                Goal::Unstated
            } else if roll < cfg.unstated_prob + cfg.dontcare_prob {
                Goal::DontCare
            } else {
                Goal::Value(self.sample_value(slot, None))
            };
            goals.push((slot, goal));
        }

        self.system("welcomemsg");
        let mut opening: Vec<(&'static str, String)> = goals
            .iter()
            .filter_map(|(s, g)| match g {
                Goal::Value(v) => Some((*s, v.clone())),
                _ => None,
            })
            .filter(|_| self.rng.gen_bool(0.5))
            .collect();
        opening.shuffle(&mut self.rng);
        if opening.is_empty() {
            let g = pick(&mut self.rng, &cfg.templates.greetings).to_string();
            self.user(&g, true);
        } else {
            let mut text = pick(&mut self.rng, &cfg.templates.opening_prefixes).to_string();
            for (slot, value) in &opening {
                let c = self.clause(slot, value);
                text.push(' ');
                text.push_str(&c);
                self.current.insert(slot, value.clone());
            }
            self.user(&text, true);
        }

        let mut pending: Vec<(&'static str, Goal)> = goals
            .iter()
            .filter(|(s, g)| *g != Goal::Unstated && !self.current.contains_key(s))
            .cloned()
            .collect();
        pending.shuffle(&mut self.rng);
        for (slot, goal) in pending {
            self.system(&format!("request slot {slot}"));
            let text = match &goal {
                Goal::Value(v) => {
                    let t = pick(&mut self.rng, &cfg.templates.answers[slot]).to_string();
                    let text = self.fill(&t, v);
                    self.current.insert(slot, v.clone());
                    text
                }
                _ => {
                    self.current.insert(slot, DONTCARE_VALUE.to_string());
                    pick(&mut self.rng, &cfg.templates.dontcare[slot]).to_string()
                }
            };
            self.user(&text, true);
        }
        self.api_call();

        if self.rng.gen_bool(cfg.revision_prob.clamp(0.0, 1.0)) {
            let revisable: Vec<&'static str> = goals
                .iter()
                .filter(|(_, g)| matches!(g, Goal::Value(_)))
                .map(|(s, _)| *s)
                .collect();
            if let Some(&slot) = revisable.choose(&mut self.rng) {
                let old = self.current.get(slot).cloned();
                let new = self.sample_value(slot, old.as_deref());
                let frame = pick(&mut self.rng, &cfg.templates.revisions).to_string();
                let c = self.clause(slot, &new);
                self.current.insert(slot, new);
                self.user(&frame.replace("{c}", &c), true);
                self.api_call();
            }
        }

        let closing = pick(&mut self.rng, &cfg.templates.closings).to_string();
        self.user(&closing, true);
        self.system("bye");

        Dialogue {
            id,
            turns: self.turns,
            states: self.states,
        }
    }
}

fn generate_split(config: &GeneratorConfig, split: Split, n: usize) -> Vec<Dialogue> {
    (0..n)
        .map(|i| {
            let builder = DialogueBuilder {
                config,
                rng: rng::stream(config.seed, &format!("data/{}/{i}", split.name())),
                oov: split == Split::OovTest,
                turns: Vec::new(),
                states: Vec::new(),
                current: BTreeMap::new(),
            };
            builder.build(format!("{}-{i:05}", split.name()))
        })
        .collect()
}

/// Deterministic corpus from `config`; `oov_test` uses only held-out
/// food and location values.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<Corpus, GenerateError> {
    config.validate()?;
    let schema = SlotSchema::new(&SLOTS);
    Ok(Corpus::new(
        schema,
        generate_split(config, Split::Train, config.n_train),
        generate_split(config, Split::Dev, config.n_dev),
        generate_split(config, Split::Test, config.n_test),
        generate_split(config, Split::OovTest, config.n_oov_test),
    ))
}
