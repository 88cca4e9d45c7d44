use super::*;
use crate::corpus::{generate_synthetic, Dialogue, GeneratorConfig, SlotSchema, Speaker, StateRecord, Turn};
use crate::dropout::apply_targeted_dropout;

fn small_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 12,
        role_dim: 3,
        hidden: 12,
        attention: 12,
        ..ModelConfig::default()
    }
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs,
        patience: 0,
        learning_rate: 5e-3,
        model: small_model(),
        ..TrainConfig::default()
    }
}

fn small_corpus(n_train: usize) -> Corpus {
    let mut g = GeneratorConfig::babi(5);
    g.n_train = n_train;
    g.n_dev = 10;
    g.n_test = 0;
    g.n_oov_test = 0;
    generate_synthetic(&g).unwrap()
}

fn without_time(log: &TrainLog) -> Vec<EpochRecord> {
    log.records
        .iter()
        .map(|r| EpochRecord {
            wall_seconds: 0.0,
            ..r.clone()
        })
        .collect()
}

#[test]
fn memorizes_a_single_instance() {
    let schema = SlotSchema::new(&["food", "location", "price"]);
    let d = Dialogue {
        id: "one".into(),
        turns: vec![
            Turn::new(Speaker::System, "welcomemsg"),
            Turn::new(Speaker::User, "i want thai food in rome"),
        ],
        states: vec![StateRecord {
            turn: 1,
            slot: "food".into(),
            value: "thai".into(),
        }],
    };
    let corpus = Corpus::new(schema, vec![d], vec![], vec![], vec![]);
    let cfg = TrainConfig {
        batch_size: 1,
        epochs: 300,
        patience: 0,
        keep_prob: 1.0,
        ..TrainConfig::default()
    };
    let out = train(&corpus, &DropoutPlan::default(), &cfg).unwrap();
    let last = out.log.records.last().unwrap().train_loss;
    assert_eq!(out.log.records.len(), 300);
    assert!(last < 1e-2, "final loss {last}");
    assert_eq!(out.last.adam.step_count, 300);
}

#[test]
fn identical_runs_are_identical() {
    let corpus = small_corpus(30);
    let a = train(&corpus, &DropoutPlan::default(), &config(2)).unwrap();
    let b = train(&corpus, &DropoutPlan::default(), &config(2)).unwrap();
    assert_eq!(without_time(&a.log), without_time(&b.log));
    assert_eq!(a.last, b.last);
    assert_eq!(a.best, b.best);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let corpus = small_corpus(30);
    let instances = corpus.instances(Split::Train, "food", 540);
    let plan = apply_targeted_dropout(&instances, 0.3, 9, &corpus.digest()).unwrap();
    let full = train(&corpus, &plan, &config(6)).unwrap();
    let first = train(&corpus, &plan, &config(3)).unwrap();

    // Through the text format, as a real interruption would.
    let last = Checkpoint::from_file(&crate::autograd::CheckpointFile::parse(&first.last.to_file().to_text()).unwrap())
        .unwrap();
    let best = Checkpoint::from_file(&first.best.to_file()).unwrap();
    assert_eq!(last, first.last);
    let second = resume(last, Some(best), &corpus, &plan, &config(6), &mut |_, _, _| Ok(())).unwrap();

    assert_eq!(second.last.tracker.params, full.last.tracker.params);
    assert_eq!(second.last.adam, full.last.adam);
    assert_eq!(second.best.tracker.params, full.best.tracker.params);
    assert_eq!(second.best.epoch, full.best.epoch);
    let tail: Vec<_> = without_time(&full.log)[3..].to_vec();
    assert_eq!(without_time(&second.log), tail);
}

#[test]
fn resume_rejects_changed_batch_size_and_corpus() {
    let corpus = small_corpus(12);
    let plan = DropoutPlan::default();
    let out = train(&corpus, &plan, &config(1)).unwrap();
    let mut other = config(2);
    other.batch_size = 9;
    let err = resume(out.last.clone(), None, &corpus, &plan, &other, &mut |_, _, _| Ok(()));
    assert!(matches!(
        err,
        Err(TrainError::Resume(CheckpointMismatch::Config("batch_size")))
    ));
    let different = small_corpus(13);
    let err = resume(out.last, None, &different, &plan, &config(2), &mut |_, _, _| Ok(()));
    assert!(matches!(
        err,
        Err(TrainError::Resume(CheckpointMismatch::Corpus { .. }))
    ));
}

#[test]
fn resume_with_no_extra_epochs_is_identity() {
    let corpus = small_corpus(12);
    let plan = DropoutPlan::default();
    let out = train(&corpus, &plan, &config(2)).unwrap();
    let again = resume(
        out.last.clone(),
        Some(out.best.clone()),
        &corpus,
        &plan,
        &config(2),
        &mut |_, _, _| Ok(()),
    )
    .unwrap();
    assert_eq!(again.last, out.last);
    assert_eq!(again.best, out.best);
    assert!(again.log.records.is_empty());
}

#[test]
fn loss_decreases_over_first_five_epochs() {
    let corpus = small_corpus(120);
    let out = train(&corpus, &DropoutPlan::default(), &config(5)).unwrap();
    let losses = out.log.losses();
    assert_eq!(losses.len(), 5);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
    for r in &out.log.records {
        assert!(r.dev_accuracy.is_some_and(|a| (0.0..=1.0).contains(&a)));
    }
}

#[test]
fn one_adam_step_per_batch() {
    let corpus = small_corpus(20);
    let n = corpus.instances(Split::Train, "food", 540).len() as u64;
    let out = train(&corpus, &DropoutPlan::default(), &config(2)).unwrap();
    let per_epoch = n.div_ceil(8);
    assert_eq!(out.log.records[0].steps, per_epoch);
    assert_eq!(out.last.adam.step_count, 2 * per_epoch);
    assert!(out.last.tracker.params.is_finite());
}

#[test]
fn epoch_order_is_a_permutation() {
    for epoch in 1..5 {
        let mut order = epoch_order(3, "food", epoch, 97);
        order.sort_unstable();
        assert_eq!(order, (0..97).collect::<Vec<_>>());
    }
    assert_ne!(epoch_order(3, "food", 1, 50), epoch_order(3, "food", 2, 50));
}

#[test]
fn rejects_empty_training_split_and_bad_config() {
    let schema = SlotSchema::new(&["food"]);
    let corpus = Corpus::new(schema, vec![], vec![], vec![], vec![]);
    assert!(matches!(
        train(&corpus, &DropoutPlan::default(), &config(1)),
        Err(TrainError::EmptyTrain(_))
    ));
    let corpus = small_corpus(4);
    let mut bad = config(1);
    bad.batch_size = 0;
    assert!(matches!(
        train(&corpus, &DropoutPlan::default(), &bad),
        Err(TrainError::Config(_))
    ));
    bad = config(1);
    bad.slot = "area".into();
    assert!(matches!(
        train(&corpus, &DropoutPlan::default(), &bad),
        Err(TrainError::UnknownSlot(_))
    ));
}

#[test]
fn run_dir_keeps_latest_and_best() {
    let corpus = small_corpus(12);
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::create(tmp.path(), "food").unwrap();
    let mut cfg = config(4);
    cfg.learning_rate = 1e-9;
    let out = train_with_hook(&corpus, &DropoutPlan::default(), &cfg, &mut |r, c, b| {
        dir.record(r, c, b)
    })
    .unwrap();
    let kept = dir.epochs().unwrap();
    assert_eq!(dir.best_epoch().unwrap(), Some(out.best.epoch));
    assert!(kept.contains(&4) && kept.contains(&out.best.epoch));
    assert!(kept.len() <= 2);
    assert_eq!(dir.latest().unwrap().unwrap(), out.last);
    assert_eq!(dir.best().unwrap().unwrap(), out.best);
    let log = std::fs::read_to_string(dir.path().join(run_dir::LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 4);
}
