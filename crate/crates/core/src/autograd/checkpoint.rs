//! Text checkpoint container.
//!
//! ```text
//! ptrdst-checkpoint v1
//! seed 7
//! config-digest 3f2a...
//! meta epoch 3
//! list vocab 2
//! <pad>
//! <unk>
//! param word_embedding 2 4
//! values
//! 1.0000000000000000e0 ...   one row per line, 17 significant digits
//! end
//! ```

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use super::Tensor;

pub const FORMAT_VERSION: &str = "v1";
const MAGIC: &str = "ptrdst-checkpoint";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported checkpoint version {0}")]
    Version(String),
    #[error("checkpoint is missing {0}")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Everything a checkpoint file carries, independent of what the arrays mean.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CheckpointFile {
    pub seed: u64,
    pub config_digest: String,
    pub meta: Vec<(String, String)>,
    pub lists: Vec<(String, Vec<String>)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn format_value(out: &mut String, x: f64) {
    // 16 digits after the point in scientific notation: 17 significant.
    let _ = write!(out, "{x:.16e}");
}

impl CheckpointFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn list(&self, name: &str) -> Option<&[String]> {
        self.lists.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(out, "config-digest {}", self.config_digest);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, items) in &self.lists {
            let _ = writeln!(out, "list {name} {}", items.len());
            for item in items {
                let _ = writeln!(out, "{item}");
            }
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "param {name} {}", dims.join(" "));
        }
        out.push_str("values\n");
        for (_, t) in &self.tensors {
            let (rows, _) = t.as_matrix_dims();
            for r in 0..rows {
                let row = t.row(r);
                for (j, &x) in row.iter().enumerate() {
                    if j > 0 {
                        out.push(' ');
                    }
                    format_value(&mut out, x);
                }
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, message: &str| CheckpointError::Parse {
            line,
            message: message.to_string(),
        };

        let (n, first) = lines.next().ok_or_else(|| err(1, "empty file"))?;
        let mut head = first.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(err(n, "not a ptrdst checkpoint"));
        }
        match head.next() {
            Some(FORMAT_VERSION) => {}
            Some(other) => return Err(CheckpointError::Version(other.to_string())),
            None => return Err(err(n, "missing version")),
        }

        let mut file = CheckpointFile::default();
        let mut seed = None;
        let mut digest = None;
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            let (n, line) = lines.next().ok_or_else(|| err(n, "unexpected end of header"))?;
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "seed" => {
                    seed = Some(rest.trim().parse().map_err(|_| err(n, "bad seed"))?);
                }
                "config-digest" => digest = Some(rest.trim().to_string()),
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    file.meta.push((k.to_string(), v.to_string()));
                }
                "list" => {
                    let mut parts = rest.split_whitespace();
                    let name = parts.next().ok_or_else(|| err(n, "list without name"))?;
                    let count: usize = parts
                        .next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| err(n, "list without count"))?;
                    let mut items = Vec::with_capacity(count);
                    for _ in 0..count {
                        let (_, item) = lines.next().ok_or_else(|| err(n, "truncated list"))?;
                        items.push(item.to_string());
                    }
                    file.lists.push((name.to_string(), items));
                }
                "param" => {
                    let mut parts = rest.split_whitespace();
                    let name = parts.next().ok_or_else(|| err(n, "param without name"))?;
                    let dims: Result<Vec<usize>, _> = parts.map(str::parse).collect();
                    let dims = dims.map_err(|_| err(n, "bad param shape"))?;
                    if dims.is_empty() {
                        return Err(err(n, "param without shape"));
                    }
                    shapes.push((name.to_string(), dims));
                }
                "values" => break,
                _ => return Err(err(n, &format!("unknown header key {key:?}"))),
            }
        }
        file.seed = seed.ok_or_else(|| CheckpointError::Missing("seed".into()))?;
        file.config_digest = digest.ok_or_else(|| CheckpointError::Missing("config-digest".into()))?;

        for (name, dims) in shapes {
            let tensor_rows = if dims.len() == 1 { 1 } else { dims[0] };
            let total: usize = dims.iter().product();
            let mut data = Vec::with_capacity(total);
            for _ in 0..tensor_rows {
                let (n, line) = lines
                    .next()
                    .ok_or_else(|| err(0, &format!("values for {name} truncated")))?;
                for tok in line.split_whitespace() {
                    data.push(tok.parse::<f64>().map_err(|_| err(n, "bad value"))?);
                }
            }
            let tensor = Tensor::new(dims, data).map_err(|e| err(0, &format!("{name}: {e}")))?;
            file.tensors.push((name, tensor));
        }
        match lines.next() {
            Some((_, "end")) => Ok(file),
            Some((n, _)) => Err(err(n, "expected end")),
            None => Err(CheckpointError::Missing("end marker".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
