use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, Dialogue, SlotSchema, Speaker, Split, StateRecord, Turn};

pub const SCHEMA_FILE: &str = "schema.json";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{file}:{line}: malformed record: {message}")]
    Malformed { file: String, line: usize, message: String },
    #[error("{file}:{line}: unknown speaker role {speaker:?} in dialogue {dialogue}")]
    UnknownSpeaker {
        file: String,
        line: usize,
        dialogue: String,
        speaker: String,
    },
    #[error("{file}:{line}: dialogue {dialogue} has no gold state")]
    MissingState {
        file: String,
        line: usize,
        dialogue: String,
    },
    #[error("{file}:{line}: dialogue {dialogue}: {message}")]
    Invalid {
        file: String,
        line: usize,
        dialogue: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad schema manifest: {message}")]
    Schema { path: PathBuf, message: String },
}

#[derive(Serialize)]
struct TurnOut<'a> {
    speaker: &'a str,
    tokens: &'a [String],
}

#[derive(Serialize)]
struct DialogueOut<'a> {
    id: &'a str,
    turns: Vec<TurnOut<'a>>,
    states: &'a [StateRecord],
}

#[derive(Deserialize)]
struct TurnIn {
    speaker: String,
    tokens: Vec<String>,
}

#[derive(Deserialize)]
struct DialogueIn {
    id: String,
    turns: Vec<TurnIn>,
    #[serde(default)]
    states: Option<Vec<StateRecord>>,
}

/// One dialogue as a single canonical JSON line (no trailing newline).
pub fn write_dialogue(d: &Dialogue) -> String {
    let out = DialogueOut {
        id: &d.id,
        turns: d
            .turns
            .iter()
            .map(|t| TurnOut {
                speaker: t.speaker.as_str(),
                tokens: &t.tokens,
            })
            .collect(),
        states: &d.states,
    };
    serde_json::to_string(&out).expect("dialogue serializes")
}

/// Parses and validates one record. `file` and `line` only label errors.
pub fn parse_dialogue(
    text: &str,
    schema: Option<&SlotSchema>,
    file: &str,
    line: usize,
) -> Result<Dialogue, CorpusError> {
    parse_record(text, schema, file, line, true)
}

/// Like `parse_dialogue`, but a record without gold states is accepted.
pub fn parse_unlabeled(text: &str, schema: Option<&SlotSchema>, file: &str) -> Result<Dialogue, CorpusError> {
    parse_record(text, schema, file, 1, false)
}

fn parse_record(
    text: &str,
    schema: Option<&SlotSchema>,
    file: &str,
    line: usize,
    labeled: bool,
) -> Result<Dialogue, CorpusError> {
    let raw: DialogueIn = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
        file: file.to_string(),
        line,
        message: e.to_string(),
    })?;
    let invalid = |message: String| CorpusError::Invalid {
        file: file.to_string(),
        line,
        dialogue: raw.id.clone(),
        message,
    };
    let mut turns = Vec::with_capacity(raw.turns.len());
    for t in &raw.turns {
        let speaker = Speaker::parse(&t.speaker).ok_or_else(|| CorpusError::UnknownSpeaker {
            file: file.to_string(),
            line,
            dialogue: raw.id.clone(),
            speaker: t.speaker.clone(),
        })?;
        if t.tokens.is_empty() {
            return Err(invalid("empty turn".into()));
        }
        turns.push(Turn {
            speaker,
            tokens: t.tokens.clone(),
        });
    }
    let states = match &raw.states {
        Some(s) if !s.is_empty() => s.clone(),
        _ if !labeled => Vec::new(),
        _ => {
            return Err(CorpusError::MissingState {
                file: file.to_string(),
                line,
                dialogue: raw.id,
            })
        }
    };
    for s in &states {
        match turns.get(s.turn) {
            Some(t) if t.speaker == Speaker::User => {}
            Some(_) => return Err(invalid(format!("state at turn {} is not a user turn", s.turn))),
            None => return Err(invalid(format!("state refers to missing turn {}", s.turn))),
        }
        if let Some(schema) = schema {
            if schema.index_of(&s.slot).is_none() {
                return Err(invalid(format!("unknown slot {:?}", s.slot)));
            }
        }
    }
    Ok(Dialogue {
        id: raw.id,
        turns,
        states,
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.name()))
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let schema_path = dir.join(SCHEMA_FILE);
    let schema = serde_json::to_string_pretty(&corpus.schema).expect("schema serializes");
    fs::write(&schema_path, schema + "\n").map_err(io_err(&schema_path))?;
    for split in Split::ALL {
        let path = split_path(dir, split);
        let mut text = String::new();
        for d in corpus.split(split) {
            text.push_str(&write_dialogue(d));
            text.push('\n');
        }
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn load_schema(dir: &Path) -> Result<SlotSchema, CorpusError> {
    let path = dir.join(SCHEMA_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| CorpusError::Schema {
        path,
        message: e.to_string(),
    })
}

pub fn load_dialogues(path: &Path, schema: Option<&SlotSchema>) -> Result<Vec<Dialogue>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let label = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_dialogue(l, schema, &label, i + 1))
        .collect()
}

pub fn load_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let schema = load_schema(dir)?;
    let mut splits = Vec::with_capacity(4);
    for split in Split::ALL {
        splits.push(load_dialogues(&split_path(dir, split), Some(&schema))?);
    }
    let oov_test = splits.pop().unwrap_or_default();
    let test = splits.pop().unwrap_or_default();
    let dev = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok(Corpus::new(schema, train, dev, test, oov_test))
}
