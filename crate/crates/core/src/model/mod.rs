//! The tracker network.
//!
//! Tokens are embedded and concatenated with a speaker-role embedding, then
//! read by a bidirectional LSTM. A decoder LSTM started from the final
//! forward state points twice into the encoded history: first with the
//! slot-type embedding as input (start position), then with the embedding
//! of the word at the start position (end position). A three-way gate on
//! the final forward state decides between `none`, `dontcare` and deferring
//! to the pointer.

mod input;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::autograd::{lstm_cell, AutogradError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::{normalize_value, GoldClass, DONTCARE_VALUE, NONE_VALUE};
use crate::rng;

pub use input::{EncodedInput, InputError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub role_dim: usize,
    pub hidden: usize,
    pub attention: usize,
    pub init_scale: f64,
    pub max_history: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 100,
            role_dim: 8,
            hidden: 200,
            attention: 200,
            init_scale: 0.08,
            max_history: 540,
        }
    }
}

impl ModelConfig {
    /// Small network used by tests and quick synthetic runs.
    pub fn small() -> Self {
        Self {
            embed_dim: 24,
            role_dim: 4,
            hidden: 24,
            attention: 24,
            ..Self::default()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("slot index {0} out of range")]
    SlotIndex(usize),
    #[error("parameter {name}: {message}")]
    Params { name: String, message: String },
}

/// The tracker's output for one slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotValue {
    None,
    DontCare,
    Value(String),
}

impl SlotValue {
    pub fn from_gold(value: &str) -> Self {
        match GoldClass::of_value(value) {
            GoldClass::None => SlotValue::None,
            GoldClass::DontCare => SlotValue::DontCare,
            GoldClass::Other => SlotValue::Value(normalize_value(value)),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            SlotValue::None => NONE_VALUE,
            SlotValue::DontCare => DONTCARE_VALUE,
            SlotValue::Value(v) => v,
        }
    }
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ParamIds {
    word: ParamId,
    role: ParamId,
    slot_type: ParamId,
    enc_fw_w: ParamId,
    enc_fw_b: ParamId,
    enc_bw_w: ParamId,
    enc_bw_b: ParamId,
    dec_w: ParamId,
    dec_b: ParamId,
    att_wh: ParamId,
    att_wd: ParamId,
    att_v: ParamId,
    gate_w: ParamId,
    gate_b: ParamId,
}

pub const PARAM_NAMES: [&str; 14] = [
    "word_embedding",
    "role_embedding",
    "slot_type_embedding",
    "encoder.forward.weight",
    "encoder.forward.bias",
    "encoder.backward.weight",
    "encoder.backward.bias",
    "decoder.weight",
    "decoder.bias",
    "attention.w_h",
    "attention.w_d",
    "attention.v",
    "gate.weight",
    "gate.bias",
];

/// Standard (inverted) dropout applied in training mode.
pub struct Dropout<'r> {
    pub rng: &'r mut ChaCha8Rng,
    pub keep: f64,
}

impl Dropout<'_> {
    fn mask(&mut self, len: usize) -> Vec<f64> {
        let scale = 1.0 / self.keep;
        (0..len)
            .map(|_| if self.rng.gen_bool(self.keep) { scale } else { 0.0 })
            .collect()
    }
}

/// Embedded inputs at each position; `None` marks padding.
pub struct Embedded {
    /// Word-embedding part only, zeroed at targeted-dropout marks.
    pub words: Vec<Option<Var>>,
    /// Word and role embedding concatenated, after standard dropout.
    pub inputs: Vec<Option<Var>>,
}

pub struct EncoderOutput {
    /// `[T, 2 * hidden]`; rows at padding positions are zero.
    pub states: Var,
    pub forward: Vec<Option<Var>>,
    pub backward: Vec<Option<Var>>,
    pub final_forward: Var,
    pub valid: Vec<bool>,
    pub last_valid: usize,
}

/// How the second decoding step picks its input word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartInput {
    /// Teacher forcing with the gold start position.
    Gold(usize),
    Predicted,
}

pub struct PointerOutput {
    pub start_probs: Var,
    pub end_probs: Var,
    pub start: usize,
    pub end: usize,
}

pub struct ForwardOutput {
    pub encoder: EncoderOutput,
    pub gate: Var,
    pub pointer: Option<PointerOutput>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub value: SlotValue,
    pub gate: [f64; 3],
    pub start: Option<usize>,
    pub end: Option<usize>,
}

/// Value decision from the gate argmax and the pointer span. Returns `None`
/// when the end precedes the start.
pub fn decide(gate: GoldClass, span: Option<(usize, usize)>, tokens: &[String]) -> SlotValue {
    match gate {
        GoldClass::None => SlotValue::None,
        GoldClass::DontCare => SlotValue::DontCare,
        GoldClass::Other => match span {
            Some((s, e)) if e >= s && e < tokens.len() => SlotValue::Value(normalize_value(&tokens[s..=e].join(" "))),
            _ => SlotValue::None,
        },
    }
}

/// One parameter set for one tracked slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tracker {
    pub config: ModelConfig,
    pub params: ParamStore,
    ids: ParamIds,
    pub vocab_size: usize,
    pub n_slots: usize,
}

impl Tracker {
    /// Fresh parameters: `uniform(-init_scale, init_scale)` weights, zero
    /// biases, and zero rows for the padding and unknown tokens.
    pub fn new(config: ModelConfig, vocab_size: usize, n_slots: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "init");
        let s = config.init_scale;
        let (e, r, d, a) = (config.embed_dim, config.role_dim, config.hidden, config.attention);
        let mut p = ParamStore::new();
        let word = p.insert_uniform(PARAM_NAMES[0], &[vocab_size, e], s, &mut rng);
        for special in [0, 1] {
            if special < vocab_size {
                p.get_mut(word).row_mut(special).fill(0.0);
            }
        }
        let role = p.insert_uniform(PARAM_NAMES[1], &[2, r], s, &mut rng);
        let slot_type = p.insert_uniform(PARAM_NAMES[2], &[n_slots, e], s, &mut rng);
        let enc_fw_w = p.insert_uniform(PARAM_NAMES[3], &[e + r + d, 4 * d], s, &mut rng);
        let enc_fw_b = p.insert(PARAM_NAMES[4], Tensor::zeros(&[4 * d]));
        let enc_bw_w = p.insert_uniform(PARAM_NAMES[5], &[e + r + d, 4 * d], s, &mut rng);
        let enc_bw_b = p.insert(PARAM_NAMES[6], Tensor::zeros(&[4 * d]));
        let dec_w = p.insert_uniform(PARAM_NAMES[7], &[e + d, 4 * d], s, &mut rng);
        let dec_b = p.insert(PARAM_NAMES[8], Tensor::zeros(&[4 * d]));
        let att_wh = p.insert_uniform(PARAM_NAMES[9], &[2 * d, a], s, &mut rng);
        let att_wd = p.insert_uniform(PARAM_NAMES[10], &[d, a], s, &mut rng);
        let att_v = p.insert_uniform(PARAM_NAMES[11], &[a, 1], s, &mut rng);
        let gate_w = p.insert_uniform(PARAM_NAMES[12], &[d, 3], s, &mut rng);
        let gate_b = p.insert(PARAM_NAMES[13], Tensor::zeros(&[3]));
        let ids = ParamIds {
            word,
            role,
            slot_type,
            enc_fw_w,
            enc_fw_b,
            enc_bw_w,
            enc_bw_b,
            dec_w,
            dec_b,
            att_wh,
            att_wd,
            att_v,
            gate_w,
            gate_b,
        };
        Self {
            config,
            params: p,
            ids,
            vocab_size,
            n_slots,
        }
    }

    /// Rebuilds a tracker around loaded parameters, checking names and shapes.
    pub fn from_params(
        config: ModelConfig,
        vocab_size: usize,
        n_slots: usize,
        params: ParamStore,
    ) -> Result<Self, ModelError> {
        let template = Self::new(config, vocab_size, n_slots, 0);
        let mut store = ParamStore::new();
        for (_, name, expected) in template.params.iter() {
            let id = params.id_of(name).ok_or_else(|| ModelError::Params {
                name: name.to_string(),
                message: "missing".into(),
            })?;
            let t = params.get(id);
            if t.shape() != expected.shape() {
                return Err(ModelError::Params {
                    name: name.to_string(),
                    message: format!("shape {:?}, expected {:?}", t.shape(), expected.shape()),
                });
            }
            store.insert(name, t.clone());
        }
        Ok(Self {
            params: store,
            ..template
        })
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id_of(name)
    }

    pub fn embed_inputs(
        &self,
        tape: &mut Tape<'_>,
        input: &EncodedInput,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Embedded, ModelError> {
        input.check(self.vocab_size)?;
        let table = tape.param(self.ids.word);
        let roles = tape.param(self.ids.role);
        let mut words = Vec::with_capacity(input.len());
        let mut inputs = Vec::with_capacity(input.len());
        for i in 0..input.len() {
            if !input.valid[i] {
                words.push(None);
                inputs.push(None);
                continue;
            }
            let w = tape.embedding_lookup(table, input.tokens[i], input.zeroed[i])?;
            let r = tape.embedding_lookup(roles, input.roles[i].index(), false)?;
            let mut x = tape.concat(&[w, r])?;
            if let Some(d) = dropout.as_deref_mut() {
                let mask = d.mask(tape.value(x).len());
                x = tape.mul_const(x, mask)?;
            }
            words.push(Some(w));
            inputs.push(Some(x));
        }
        Ok(Embedded { words, inputs })
    }

    fn run_chain(
        &self,
        tape: &mut Tape<'_>,
        inputs: &[Option<Var>],
        order: impl Iterator<Item = usize>,
        weight: ParamId,
        bias: ParamId,
    ) -> Result<(Vec<Option<Var>>, Option<Var>), ModelError> {
        let d = self.config.hidden;
        let w = tape.param(weight);
        let b = tape.param(bias);
        let mut h = tape.constant(Tensor::zeros(&[d]));
        let mut c = tape.constant(Tensor::zeros(&[d]));
        let mut out = vec![None; inputs.len()];
        let mut last = None;
        for i in order {
            if let Some(x) = inputs[i] {
                let (h2, c2) = lstm_cell(tape, x, h, c, w, b)?;
                h = h2;
                c = c2;
                out[i] = Some(h);
                last = Some(h);
            }
        }
        Ok((out, last))
    }

    pub fn encode(
        &self,
        tape: &mut Tape<'_>,
        inputs: &[Option<Var>],
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<EncoderOutput, ModelError> {
        let valid: Vec<bool> = inputs.iter().map(Option::is_some).collect();
        let last_valid = valid
            .iter()
            .rposition(|&v| v)
            .ok_or(AutogradError::Empty { op: "encode" })?;
        let n = inputs.len();
        let (forward, final_forward) = self.run_chain(tape, inputs, 0..n, self.ids.enc_fw_w, self.ids.enc_fw_b)?;
        let (backward, _) = self.run_chain(tape, inputs, (0..n).rev(), self.ids.enc_bw_w, self.ids.enc_bw_b)?;
        let zero = tape.constant(Tensor::zeros(&[2 * self.config.hidden]));
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            match (forward[i], backward[i]) {
                (Some(f), Some(b)) => rows.push(tape.concat(&[f, b])?),
                _ => rows.push(zero),
            }
        }
        let mut states = tape.stack_rows(&rows)?;
        if let Some(d) = dropout {
            let mask = d.mask(tape.value(states).len());
            states = tape.mul_const(states, mask)?;
        }
        Ok(EncoderOutput {
            states,
            forward,
            backward,
            final_forward: final_forward.expect("at least one valid position"),
            valid,
            last_valid,
        })
    }

    fn project_states(&self, tape: &mut Tape<'_>, states: Var) -> Result<Var, ModelError> {
        let wh = tape.param(self.ids.att_wh);
        Ok(tape.affine(states, wh, None)?)
    }

    fn score(&self, tape: &mut Tape<'_>, projected: Var, decoder: Var) -> Result<Var, ModelError> {
        let wd = tape.param(self.ids.att_wd);
        let v = tape.param(self.ids.att_v);
        let q = tape.affine(decoder, wd, None)?;
        let z = tape.add_rows(projected, q)?;
        let z = tape.tanh(z);
        let s = tape.affine(z, v, None)?;
        let n = tape.value(s).len();
        Ok(tape.reshape(s, &[n])?)
    }

    /// Attention scores `v . tanh(W_h h_i + W_d d)` for every row of `states`.
    pub fn attend(&self, tape: &mut Tape<'_>, states: Var, decoder: Var) -> Result<Var, ModelError> {
        let projected = self.project_states(tape, states)?;
        self.score(tape, projected, decoder)
    }

    pub fn pointer_decode(
        &self,
        tape: &mut Tape<'_>,
        enc: &EncoderOutput,
        words: &[Option<Var>],
        slot: usize,
        start_input: StartInput,
    ) -> Result<PointerOutput, ModelError> {
        if slot >= self.n_slots {
            return Err(ModelError::SlotIndex(slot));
        }
        let d = self.config.hidden;
        let w = tape.param(self.ids.dec_w);
        let b = tape.param(self.ids.dec_b);
        let types = tape.param(self.ids.slot_type);
        let projected = self.project_states(tape, enc.states)?;

        let type_emb = tape.embedding_lookup(types, slot, false)?;
        let c_init = tape.constant(Tensor::zeros(&[d]));
        let (d0, c0) = lstm_cell(tape, type_emb, enc.final_forward, c_init, w, b)?;
        let u0 = self.score(tape, projected, d0)?;
        let a0 = tape.masked_softmax(u0, &enc.valid)?;
        let start = tape.value(a0).argmax_masked(&enc.valid).expect("valid position");

        let fed = match start_input {
            StartInput::Gold(s) => s,
            StartInput::Predicted => start,
        };
        let word = words
            .get(fed)
            .copied()
            .flatten()
            .ok_or(AutogradError::IndexOutOfRange {
                op: "pointer_decode",
                index: fed,
                len: words.len(),
            })?;
        let (d1, _) = lstm_cell(tape, word, d0, c0, w, b)?;
        let u1 = self.score(tape, projected, d1)?;
        let a1 = tape.masked_softmax(u1, &enc.valid)?;
        let end = tape.value(a1).argmax_masked(&enc.valid).expect("valid position");
        Ok(PointerOutput {
            start_probs: a0,
            end_probs: a1,
            start,
            end,
        })
    }

    pub fn classify_gate(
        &self,
        tape: &mut Tape<'_>,
        final_forward: Var,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var, ModelError> {
        let mut feature = final_forward;
        if let Some(d) = dropout {
            let mask = d.mask(self.config.hidden);
            feature = tape.mul_const(feature, mask)?;
        }
        let w = tape.param(self.ids.gate_w);
        let b = tape.param(self.ids.gate_b);
        let logits = tape.affine(feature, w, Some(b))?;
        Ok(tape.masked_softmax(logits, &[true; 3])?)
    }

    /// Full forward pass. With `StartInput::Gold` the pointer is teacher-forced;
    /// `run_pointer = false` skips the decoder entirely.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        input: &EncodedInput,
        slot: usize,
        start_input: StartInput,
        run_pointer: bool,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<ForwardOutput, ModelError> {
        let embedded = self.embed_inputs(tape, input, dropout.as_deref_mut())?;
        let encoder = self.encode(tape, &embedded.inputs, dropout.as_deref_mut())?;
        let gate = self.classify_gate(tape, encoder.final_forward, dropout)?;
        let pointer = if run_pointer {
            Some(self.pointer_decode(tape, &encoder, &embedded.words, slot, start_input)?)
        } else {
            None
        };
        Ok(ForwardOutput { encoder, gate, pointer })
    }

    /// `CE(gate) + [span] (CE(start) + CE(end))`.
    pub fn joint_loss(
        &self,
        tape: &mut Tape<'_>,
        out: &ForwardOutput,
        gold_class: GoldClass,
        gold_span: Option<(usize, usize)>,
    ) -> Result<Var, ModelError> {
        let mut loss = tape.cross_entropy(out.gate, gold_class.index())?;
        if let (Some((s, e)), Some(p)) = (gold_span, out.pointer.as_ref()) {
            let ls = tape.cross_entropy(p.start_probs, s)?;
            let le = tape.cross_entropy(p.end_probs, e)?;
            loss = tape.add(loss, ls)?;
            loss = tape.add(loss, le)?;
        }
        Ok(loss)
    }

    /// Builds the training loss for one instance on `tape`.
    pub fn instance_loss(
        &self,
        tape: &mut Tape<'_>,
        input: &EncodedInput,
        slot: usize,
        gold_class: GoldClass,
        gold_span: Option<(usize, usize)>,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var, ModelError> {
        let start_input = match gold_span {
            Some((s, _)) => StartInput::Gold(s),
            None => StartInput::Predicted,
        };
        let out = self.forward(tape, input, slot, start_input, gold_span.is_some(), dropout)?;
        self.joint_loss(tape, &out, gold_class, gold_span)
    }

    /// Inference: the gate decides, deferring to the pointer on `other`.
    /// `tokens` are the raw history strings aligned with `input`.
    pub fn predict(&self, input: &EncodedInput, tokens: &[String], slot: usize) -> Result<Prediction, ModelError> {
        if slot >= self.n_slots {
            return Err(ModelError::SlotIndex(slot));
        }
        let mut tape = Tape::new(&self.params);
        let embedded = self.embed_inputs(&mut tape, input, None)?;
        let encoder = self.encode(&mut tape, &embedded.inputs, None)?;
        let gate_var = self.classify_gate(&mut tape, encoder.final_forward, None)?;
        let gate_probs = tape.value(gate_var).data();
        let gate = [gate_probs[0], gate_probs[1], gate_probs[2]];
        let class = GoldClass::from_index(tape.value(gate_var).argmax());
        if class != GoldClass::Other {
            return Ok(Prediction {
                value: decide(class, None, tokens),
                gate,
                start: None,
                end: None,
            });
        }
        let p = self.pointer_decode(&mut tape, &encoder, &embedded.words, slot, StartInput::Predicted)?;
        Ok(Prediction {
            value: decide(class, Some((p.start, p.end)), tokens),
            gate,
            start: Some(p.start),
            end: Some(p.end),
        })
    }
}
