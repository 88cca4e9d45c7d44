//! Command-line workflow: data generation, OOV splits, training, evaluation,
//! dropout sweeps, single-dialogue prediction and value statistics.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    flatten_history, generate_synthetic, load_corpus, make_oov_split, parse_unlabeled, save_corpus,
    value_frequency_histogram, Corpus, CorpusError, GenerateError, GeneratorConfig, Split, SplitError,
};
use crate::eval::{self, EvalError, EvalReport, SlotModel, SweepError};
use crate::model::{EncodedInput, ModelError};
use crate::trainer::{self, Checkpoint, RunDir, TrainConfig, TrainError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_SWEEP: [f64; 4] = [0.0, 0.05, 0.1, 0.2];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot read config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checkpoint schema for slot {0} does not match the corpus schema")]
    SchemaMismatch(String),
    #[error("no trained model under {0}")]
    NoModels(PathBuf),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Parser, Debug)]
#[command(name = "ptrdst", version, about = "Pointer-network dialogue state tracking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Babi,
    DstcLike,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hold out a fraction of one slot's value types from train and dev.
    MakeOovSplit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        slot: Option<String>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one tracker per slot into a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Defaults to every slot of the schema.
        #[arg(long)]
        slot: Option<String>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from the latest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score the best checkpoints of a run on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score one model per targeted-dropout probability.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        slot: Option<String>,
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read one dialogue record from stdin and print each slot's value after its last turn.
    Predict {
        #[arg(long)]
        run: PathBuf,
    },
    /// Value frequency histogram of one slot over the training split.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        slot: Option<String>,
    },
}

/// Generator knobs that may be overridden from the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: Option<usize>,
    pub n_dev: Option<usize>,
    pub n_test: Option<usize>,
    pub n_oov_test: Option<usize>,
    pub value_skew: Option<f64>,
    pub dontcare_prob: Option<f64>,
    pub unstated_prob: Option<f64>,
    pub revision_prob: Option<f64>,
    pub noise_prob: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub slot: Option<String>,
    pub fraction: Option<f64>,
    pub preset: Option<Preset>,
    pub p: Option<Vec<f64>>,
    pub data: DataConfig,
    pub train: Option<TrainConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed)
            .or(self.train.as_ref().map(|t| t.seed))
            .unwrap_or(TrainConfig::default().seed)
    }

    pub fn generator(&self, preset: Option<Preset>, seed: u64) -> GeneratorConfig {
        let mut g = match preset.or(self.preset).unwrap_or(Preset::Babi) {
            Preset::Babi => GeneratorConfig::babi(seed),
            Preset::DstcLike => GeneratorConfig::dstc_like(seed),
        };
        let d = &self.data;
        g.n_train = d.n_train.unwrap_or(g.n_train);
        g.n_dev = d.n_dev.unwrap_or(g.n_dev);
        g.n_test = d.n_test.unwrap_or(g.n_test);
        g.n_oov_test = d.n_oov_test.unwrap_or(g.n_oov_test);
        g.value_skew = d.value_skew.unwrap_or(g.value_skew);
        g.dontcare_prob = d.dontcare_prob.unwrap_or(g.dontcare_prob);
        g.unstated_prob = d.unstated_prob.unwrap_or(g.unstated_prob);
        g.revision_prob = d.revision_prob.unwrap_or(g.revision_prob);
        g.noise_prob = d.noise_prob.unwrap_or(g.noise_prob);
        g
    }

    /// Training config: file `[train]` table, then top-level keys, then flags.
    pub fn train_config(
        &self,
        seed: Option<u64>,
        slot: Option<&str>,
        p: Option<f64>,
        epochs: Option<usize>,
    ) -> TrainConfig {
        let mut c = self.train.clone().unwrap_or_default();
        c.seed = self.seed(seed);
        if let Some(s) = slot.map(str::to_string).or_else(|| self.slot.clone()) {
            c.slot = s;
        }
        if let Some(p) = p.or_else(|| self.p.as_ref().and_then(|v| (v.len() == 1).then(|| v[0]))) {
            c.p = p;
        }
        if let Some(e) = epochs {
            c.epochs = e;
        }
        c
    }
}

/// Record of one artifact-producing invocation, written before any work
/// starts and rewritten with `complete = true` once it succeeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_file: Option<PathBuf>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub input_digests: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub complete: bool,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn begin(
        dir: &Path,
        command: &str,
        config_file: Option<&Path>,
        config: serde_json::Value,
        seed: u64,
        input_digests: BTreeMap<String, String>,
    ) -> Result<Self, CliError> {
        let m = Self {
            command: command.to_string(),
            config_file: config_file.map(Path::to_path_buf),
            config,
            seeds: BTreeMap::from([("master".to_string(), seed)]),
            input_digests,
            outputs: Vec::new(),
            started_at: now(),
            finished_at: None,
            complete: false,
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        m.write(dir)?;
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    pub fn finish(mut self, dir: &Path, outputs: Vec<PathBuf>) -> Result<(), CliError> {
        self.outputs = outputs;
        self.finished_at = Some(now());
        self.complete = true;
        self.write(dir)
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config {
            path,
            message: e.to_string(),
        })
    }
}

fn to_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("config serializes")
}

fn write_text(path: PathBuf, text: &str) -> Result<PathBuf, CliError> {
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

fn parse_split(name: &str) -> Result<Split, CliError> {
    Split::parse(name).ok_or_else(|| CliError::Usage(format!("unknown split {name}")))
}

fn slots_of(corpus: &Corpus, slot: Option<&str>) -> Result<Vec<String>, CliError> {
    match slot {
        Some(s) if corpus.schema.index_of(s).is_none() => Err(SplitError::UnknownSlot(s.to_string()).into()),
        Some(s) => Ok(vec![s.to_string()]),
        None => Ok(corpus.schema.names().map(str::to_string).collect()),
    }
}

/// Best checkpoint of every slot trained under `run`, in schema order.
pub fn load_models(run: &Path) -> Result<Vec<Checkpoint>, CliError> {
    let mut out: Vec<Checkpoint> = Vec::new();
    let entries = fs::read_dir(run).map_err(io_err(run))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    for name in names {
        if let Some(best) = RunDir::open(run, &name).best()? {
            out.push(best);
        }
    }
    if out.is_empty() {
        return Err(CliError::NoModels(run.to_path_buf()));
    }
    let schema = out[0].schema.clone();
    out.sort_by_key(|c| schema.index_of(&c.config.slot));
    Ok(out)
}

fn gen_data(common: &Common, preset: Option<Preset>, out: &Path) -> Result<(), CliError> {
    let file = FileConfig::load(common.config.as_deref())?;
    let seed = file.seed(common.seed);
    let g = file.generator(preset, seed);
    let manifest = RunManifest::begin(
        out,
        "gen-data",
        common.config.as_deref(),
        serde_json::json!({ "preset": preset.or(file.preset).unwrap_or(Preset::Babi), "data": to_json(&file.data) }),
        seed,
        BTreeMap::new(),
    )?;
    let corpus = generate_synthetic(&g)?;
    save_corpus(&corpus, out)?;
    println!("corpus {} digest {}", out.display(), corpus.digest());
    for split in Split::ALL {
        println!("{:<10}{:>6} dialogues", split.name(), corpus.split(split).len());
    }
    manifest.finish(out, vec![out.to_path_buf()])
}

fn oov_split(
    common: &Common,
    corpus_dir: &Path,
    slot: Option<&str>,
    fraction: Option<f64>,
    out: &Path,
) -> Result<(), CliError> {
    let file = FileConfig::load(common.config.as_deref())?;
    let seed = file.seed(common.seed);
    let slot = slot
        .map(str::to_string)
        .or(file.slot.clone())
        .unwrap_or_else(|| "food".into());
    let fraction = fraction.or(file.fraction).unwrap_or(0.35);
    let corpus = load_corpus(corpus_dir)?;
    let manifest = RunManifest::begin(
        out,
        "make-oov-split",
        common.config.as_deref(),
        serde_json::json!({ "slot": slot, "fraction": fraction, "corpus": corpus_dir }),
        seed,
        BTreeMap::from([("corpus".to_string(), corpus.digest())]),
    )?;
    let (reduced, stats) = make_oov_split(&corpus, &slot, fraction, seed)?;
    save_corpus(&reduced, out)?;
    let stats_path = write_text(
        out.join("split-stats.json"),
        &(serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n"),
    )?;
    println!("{stats}");
    println!("corpus {} digest {}", out.display(), reduced.digest());
    manifest.finish(out, vec![out.to_path_buf(), stats_path])
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    common: &Common,
    corpus_dir: &Path,
    run: &Path,
    slot: Option<&str>,
    p: Option<f64>,
    epochs: Option<usize>,
    resume: bool,
) -> Result<(), CliError> {
    let file = FileConfig::load(common.config.as_deref())?;
    let corpus = load_corpus(corpus_dir)?;
    let slot = slot.map(str::to_string).or(file.slot.clone());
    let slots = slots_of(&corpus, slot.as_deref())?;
    let base = file.train_config(common.seed, None, p, epochs);
    base.validate()?;
    let manifest = RunManifest::begin(
        run,
        "train",
        common.config.as_deref(),
        serde_json::json!({ "slots": slots, "train": to_json(&base), "resume": resume }),
        base.seed,
        BTreeMap::from([("corpus".to_string(), corpus.digest())]),
    )?;
    let mut outputs = Vec::new();
    for slot in &slots {
        let config = TrainConfig {
            slot: slot.clone(),
            ..base.clone()
        };
        let dir = RunDir::create(run, slot)?;
        let plan = trainer::build_plan(&corpus, &config)?;
        let mut hook = |r: &trainer::EpochRecord, c: &Checkpoint, best: bool| {
            log::info!(
                "{slot} epoch {} loss {:.4} dev {} grad {:.3}{}",
                r.epoch,
                r.train_loss,
                r.dev_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                r.grad_norm,
                if best { " *" } else { "" }
            );
            dir.record(r, c, best)
        };
        let outcome = match (resume, dir.latest()?) {
            (true, Some(last)) => trainer::resume(last, dir.best()?, &corpus, &plan, &config, &mut hook)?,
            _ => trainer::train_with_hook(&corpus, &plan, &config, &mut hook)?,
        };
        println!(
            "{slot}: {} epochs, best epoch {} dev {:.4}",
            outcome.last.epoch, outcome.best.epoch, outcome.best.best_dev
        );
        outputs.push(dir.path().to_path_buf());
    }
    manifest.finish(run, outputs)
}

fn eval_cmd(common: &Common, corpus_dir: &Path, run: &Path, split: &str, out: Option<&Path>) -> Result<(), CliError> {
    let split = parse_split(split)?;
    let corpus = load_corpus(corpus_dir)?;
    let ckpts = load_models(run)?;
    for c in &ckpts {
        if c.schema != corpus.schema {
            return Err(CliError::SchemaMismatch(c.config.slot.clone()));
        }
    }
    let manifest = match out {
        Some(dir) => Some(RunManifest::begin(
            dir,
            "eval",
            common.config.as_deref(),
            serde_json::json!({ "run": run, "split": split.name(), "corpus": corpus_dir }),
            ckpts[0].config.seed,
            BTreeMap::from([("corpus".to_string(), corpus.digest())]),
        )?),
        None => None,
    };
    let models: Vec<SlotModel<'_>> = ckpts
        .iter()
        .map(|c| SlotModel {
            slot: c.config.slot.clone(),
            tracker: &c.tracker,
            vocab: &c.vocab,
        })
        .collect();
    let mut report = eval::evaluate(&models, &corpus, split)?;
    for c in &ckpts {
        report
            .config
            .insert(format!("{}.p", c.config.slot), c.config.p.to_string());
        report
            .config
            .insert(format!("{}.best_epoch", c.config.slot), c.epoch.to_string());
    }
    println!("{report}");
    if let (Some(dir), Some(m)) = (out, manifest) {
        let outputs = write_report(dir, "report", &report)?;
        m.finish(dir, outputs)?;
    }
    Ok(())
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<Vec<PathBuf>, CliError> {
    let json = write_text(dir.join(format!("{stem}.json")), &(report.to_json() + "\n"))?;
    let mut tsv = String::from(EvalReport::TSV_HEADER);
    tsv.push('\n');
    for row in report.tsv_rows() {
        tsv.push_str(&row);
        tsv.push('\n');
    }
    let tsv = write_text(dir.join(format!("{stem}.tsv")), &tsv)?;
    Ok(vec![json, tsv])
}

#[allow(clippy::too_many_arguments)]
fn sweep_cmd(
    common: &Common,
    corpus_dir: &Path,
    slot: Option<&str>,
    ps: &[f64],
    epochs: Option<usize>,
    split: &str,
    out: &Path,
) -> Result<(), CliError> {
    let split = parse_split(split)?;
    let file = FileConfig::load(common.config.as_deref())?;
    let base = file.train_config(common.seed, slot, None, epochs);
    base.validate()?;
    let ps: Vec<f64> = if !ps.is_empty() {
        ps.to_vec()
    } else {
        file.p.clone().unwrap_or_else(|| DEFAULT_SWEEP.to_vec())
    };
    let corpus = load_corpus(corpus_dir)?;
    let manifest = RunManifest::begin(
        out,
        "sweep",
        common.config.as_deref(),
        serde_json::json!({ "p": ps, "split": split.name(), "train": to_json(&base) }),
        base.seed,
        BTreeMap::from([("corpus".to_string(), corpus.digest())]),
    )?;
    let rows = eval::sweep(&corpus, &ps, &base, split)?;
    let table = eval::sweep_table(&rows, &base.slot);
    print!("{table}");
    let mut outputs = vec![write_text(out.join("sweep.tsv"), &table)?];
    outputs.push(write_text(
        out.join("sweep.json"),
        &(serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n"),
    )?);
    manifest.finish(out, outputs)
}

/// Per-slot values after the last turn of one dialogue record.
pub fn predict_dialogue(ckpts: &[Checkpoint], record: &str) -> Result<Vec<(String, String)>, CliError> {
    let schema = &ckpts[0].schema;
    let d = parse_unlabeled(record.trim(), Some(schema), "<stdin>")?;
    if d.turns.is_empty() {
        return Err(CliError::Usage("dialogue has no turns".into()));
    }
    let mut out = Vec::new();
    for c in ckpts {
        if &c.schema != schema {
            return Err(CliError::SchemaMismatch(c.config.slot.clone()));
        }
        let (tokens, roles) = flatten_history(&d.turns, d.turns.len() - 1, c.tracker.config.max_history);
        let input = EncodedInput::new(&c.vocab, &tokens, &roles, &[]).map_err(ModelError::from)?;
        let pred = c.tracker.predict(&input, &tokens, c.slot_index())?;
        out.push((c.config.slot.clone(), pred.value.to_string()));
    }
    Ok(out)
}

fn predict_cmd(run: &Path) -> Result<(), CliError> {
    let ckpts = load_models(run)?;
    let mut record = String::new();
    std::io::stdin()
        .read_to_string(&mut record)
        .map_err(io_err(Path::new("<stdin>")))?;
    for (slot, value) in predict_dialogue(&ckpts, &record)? {
        println!("{slot}\t{value}");
    }
    Ok(())
}

fn stats_cmd(corpus_dir: &Path, slot: Option<&str>) -> Result<(), CliError> {
    let corpus = load_corpus(corpus_dir)?;
    for slot in slots_of(&corpus, slot)? {
        let hist = value_frequency_histogram(&corpus, &slot);
        let top = hist.first().map_or(1, |h| h.1.max(1));
        println!("{slot}: {} values, corpus {}", hist.len(), corpus.digest());
        for (value, count) in &hist {
            let bar = "#".repeat((40 * count).div_ceil(top));
            println!("{value:<20}{count:>7}  {bar}");
        }
    }
    Ok(())
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common, preset, out } => gen_data(&common, preset, &out),
        Command::MakeOovSplit {
            common,
            corpus,
            slot,
            fraction,
            out,
        } => oov_split(&common, &corpus, slot.as_deref(), fraction, &out),
        Command::Train {
            common,
            corpus,
            run,
            slot,
            p,
            epochs,
            resume,
        } => train_cmd(&common, &corpus, &run, slot.as_deref(), p, epochs, resume),
        Command::Eval {
            common,
            corpus,
            run,
            split,
            out,
        } => eval_cmd(&common, &corpus, &run, &split, out.as_deref()),
        Command::Sweep {
            common,
            corpus,
            slot,
            p,
            epochs,
            split,
            out,
        } => sweep_cmd(&common, &corpus, slot.as_deref(), &p, epochs, &split, &out),
        Command::Predict { run } => predict_cmd(&run),
        Command::Stats { corpus, slot } => stats_cmd(&corpus, slot.as_deref()),
    }
}
