use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use ptrdst::autograd::{AdamConfig, AdamState, Tensor};
use ptrdst::corpus::{build_vocab, parse_unlabeled, SlotSchema};
use ptrdst::model::{EncodedInput, ModelConfig, Tracker};
use ptrdst::trainer::{Checkpoint, TrainConfig};

fn ptrdst(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptrdst"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ptrdst(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn digest_line(stdout: &str) -> String {
    stdout
        .lines()
        .find(|l| l.contains("digest"))
        .unwrap()
        .split_whitespace()
        .last()
        .unwrap()
        .to_string()
}

fn small_data_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "preset = \"dstc-like\"\n[data]\nn_train = 40\nn_dev = 8\nn_test = 8\n\
         [train]\nepochs = 1\nbatch_size = 16\n[train.model]\nembed_dim = 8\nrole_dim = 2\nhidden = 8\nattention = 8\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_data_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let first = ok(&[
        "gen-data",
        "--seed",
        "7",
        "--config",
        &cfg,
        "--out",
        a.to_str().unwrap(),
    ]);
    let second = ok(&[
        "gen-data",
        "--seed",
        "7",
        "--config",
        &cfg,
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(digest_line(&first), digest_line(&second));
    assert_eq!(
        fs::read(a.join("train.jsonl")).unwrap(),
        fs::read(b.join("train.jsonl")).unwrap()
    );
    let other = ok(&[
        "gen-data",
        "--seed",
        "8",
        "--config",
        &cfg,
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_ne!(digest_line(&first), digest_line(&other));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], true);
    assert_eq!(manifest["seeds"]["master"], 7);
}

#[test]
fn oov_split_removes_ceil_of_fraction() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let split = tmp.path().join("split");
    ok(&[
        "gen-data",
        "--preset",
        "dstc-like",
        "--seed",
        "3",
        "--out",
        full.to_str().unwrap(),
    ]);
    let corpus = ptrdst::corpus::load_corpus(&full).unwrap();
    let types = corpus.value_inventory("food").len();
    let stdout = ok(&[
        "make-oov-split",
        "--corpus",
        full.to_str().unwrap(),
        "--slot",
        "food",
        "--fraction",
        "0.35",
        "--out",
        split.to_str().unwrap(),
    ]);
    let expected = (0.35 * types as f64).ceil() as usize;
    assert!(stdout.contains(&format!("removed types: {expected}")), "{stdout}");
    let reduced = ptrdst::corpus::load_corpus(&split).unwrap();
    assert_eq!(reduced.value_inventory("food").len(), types - expected);
    assert_eq!(reduced.test, corpus.test);
}

#[test]
fn train_eval_and_stats_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_data_config(tmp.path());
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let report = tmp.path().join("report");
    ok(&[
        "gen-data",
        "--seed",
        "2",
        "--config",
        &cfg,
        "--out",
        data.to_str().unwrap(),
    ]);
    let d = data.to_str().unwrap();
    let r = run.to_str().unwrap();
    ok(&[
        "train", "--config", &cfg, "--corpus", d, "--run", r, "--slot", "price", "--p", "0.1",
    ]);
    assert!(run.join("price").join("best").exists());
    // One more epoch on top of the first.
    ok(&[
        "train", "--config", &cfg, "--corpus", d, "--run", r, "--slot", "price", "--p", "0.1", "--epochs", "2",
        "--resume",
    ]);
    let lines = fs::read_to_string(run.join("price").join("train-log.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);

    let stdout = ok(&[
        "eval",
        "--corpus",
        d,
        "--run",
        r,
        "--split",
        "dev",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(stdout.contains("price"), "{stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["split"], "dev");
    assert_eq!(json["config"]["price.p"], "0.1");
    assert!(fs::read_to_string(report.join("report.tsv"))
        .unwrap()
        .starts_with("split\tslot"));

    let stats = ok(&["stats", "--corpus", d, "--slot", "food"]);
    assert!(stats.lines().count() > 2 && stats.contains('#'), "{stats}");
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = ptrdst(&["stats", "--corpus", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));

    let out = ptrdst(&["gen-data", "--bogus", "--out", "x"]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "sede = 1\n").unwrap();
    let out = ptrdst(&[
        "gen-data",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

const RECORD: &str = r#"{"id":"fixture","turns":[{"speaker":"system","tokens":["welcomemsg"]},{"speaker":"user","tokens":["i","want","cheap","thai","food","in","the","north"]}]}"#;

fn tiny() -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        role_dim: 2,
        hidden: 4,
        attention: 4,
        init_scale: 1.0,
        ..ModelConfig::default()
    }
}

/// Randomly initialized food trackers whose gate is forced to defer to the
/// pointer; returns the first whose end pointer lands before its start.
fn inverted_tracker() -> (Checkpoint, usize, usize) {
    let schema = SlotSchema::new(&["food", "location", "price"]);
    let d = parse_unlabeled(RECORD, Some(&schema), "fixture").unwrap();
    let vocab = build_vocab(&schema, [&d]);
    let (tokens, roles) = ptrdst::corpus::flatten_history(&d.turns, 1, 540);
    let input = EncodedInput::new(&vocab, &tokens, &roles, &[]).unwrap();
    for seed in 0..500 {
        let mut tracker = Tracker::new(tiny(), vocab.len(), schema.len(), seed);
        let bias = tracker.params.id_of("gate.bias").unwrap();
        tracker
            .params
            .set(bias, Tensor::new(vec![3], vec![-30.0, -30.0, 30.0]).unwrap())
            .unwrap();
        let pred = tracker.predict(&input, &tokens, 0).unwrap();
        let (Some(s), Some(e)) = (pred.start, pred.end) else {
            continue;
        };
        if e < s {
            let adam = AdamState::new(&tracker.params, AdamConfig::default());
            let ckpt = Checkpoint {
                config: TrainConfig {
                    slot: "food".into(),
                    model: tiny(),
                    ..TrainConfig::default()
                },
                schema,
                vocab,
                corpus_digest: "fixture".into(),
                plan_digest: "fixture".into(),
                tracker,
                adam,
                epoch: 1,
                best_dev: 0.0,
                best_dev_loss: 0.0,
                best_epoch: 1,
                stale_epochs: 0,
            };
            return (ckpt, s, e);
        }
    }
    panic!("no inverted pointer among 500 seeds");
}

fn predict(run: &Path) -> String {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ptrdst"))
        .args(["predict", "--run", run.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(RECORD.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn predict_backs_off_to_none_on_inverted_pointer() {
    let (ckpt, start, end) = inverted_tracker();
    assert!(end < start);
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("food");
    fs::create_dir_all(&dir).unwrap();
    ckpt.save(&dir.join("epoch-1")).unwrap();
    fs::write(dir.join("best"), "epoch-1\n").unwrap();
    assert_eq!(predict(tmp.path()).trim(), "food\tnone");
}
