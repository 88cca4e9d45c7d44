use std::collections::BTreeSet;

use super::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Brute-force oracle: compare every window, keep the largest start.
fn brute_force_last(tokens: &[String], value: &str) -> Option<(usize, usize)> {
    let target: Vec<String> = value.split_whitespace().map(normalize_value).collect();
    let mut best = None;
    for start in 0..tokens.len() {
        let end = start + target.len();
        if end > tokens.len() {
            break;
        }
        let window: Vec<String> = tokens[start..end].iter().map(|t| normalize_value(t)).collect();
        if window == target {
            best = Some((start, end - 1));
        }
    }
    best
}

#[test]
fn normalize_examples() {
    assert_eq!(normalize_value("Moderately"), "moderate");
    assert_eq!(normalize_value("centre"), "center");
    assert_eq!(normalize_value("italian"), "italian");
    assert_eq!(normalize_value("  Modern   European "), "modern european");
    assert_eq!(normalize_value("moderately priced"), "moderate priced");
}

#[test]
fn label_span_examples() {
    assert_eq!(
        label_reference_span(&toks("i want italian food"), "italian"),
        Some((2, 2))
    );
    assert_eq!(
        label_reference_span(&toks("cheap no wait moderate , moderate food"), "moderate"),
        Some((5, 5))
    );
    assert_eq!(label_reference_span(&toks("i want thai"), "italian"), None);
    assert_eq!(
        label_reference_span(&toks("something moderately priced"), "moderate"),
        Some((1, 1))
    );
    assert_eq!(
        label_reference_span(&toks("modern european or modern european food"), "modern european"),
        Some((3, 4))
    );
    assert_eq!(label_reference_span(&toks(""), "thai"), None);
}

#[test]
fn label_span_agrees_with_brute_force() {
    use rand::{Rng, SeedableRng};
    let words = ["a", "b", "moderate", "moderately", "center", "centre", "c"];
    let values = ["a", "moderate", "center b", "a b a", "c moderate"];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let n = rng.gen_range(0..12);
        let tokens: Vec<String> = (0..n)
            .map(|_| words[rng.gen_range(0..words.len())].to_string())
            .collect();
        let value = values[rng.gen_range(0..values.len())];
        assert_eq!(label_reference_span(&tokens, value), brute_force_last(&tokens, value));
    }
}

#[test]
fn generator_is_deterministic() {
    let mut config = GeneratorConfig::babi(7);
    config.n_train = 50;
    config.n_dev = 10;
    config.n_test = 10;
    config.n_oov_test = 10;
    let a = generate_synthetic(&config).unwrap();
    let b = generate_synthetic(&config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.digest(), b.digest());
    config.seed = 8;
    assert_ne!(generate_synthetic(&config).unwrap().digest(), a.digest());
}

#[test]
fn every_pointable_babi_instance_has_a_recoverable_span() {
    let mut config = GeneratorConfig::babi(11);
    config.n_train = 200;
    let corpus = generate_synthetic(&config).unwrap();
    for split in Split::ALL {
        for slot in ["food", "location", "price"] {
            for inst in corpus.instances(split, slot, 540) {
                assert_eq!(inst.gold_class, GoldClass::Other, "{}", inst.id);
                let (s, e) = inst.gold_span.expect("span");
                assert_eq!(normalize_value(&inst.tokens[s..=e].join(" ")), inst.gold_value);
                assert_eq!(Some((s, e)), brute_force_last(&inst.tokens, &inst.gold_value));
            }
        }
    }
}

#[test]
fn babi_oov_split_uses_only_held_out_entities() {
    let mut config = GeneratorConfig::babi(5);
    config.n_train = 200;
    let corpus = generate_synthetic(&config).unwrap();
    for slot in ["food", "location"] {
        let train_values: BTreeSet<String> = corpus
            .train
            .iter()
            .chain(&corpus.dev)
            .flat_map(|d| &d.states)
            .filter(|s| s.slot == slot)
            .map(|s| s.value.clone())
            .collect();
        let held: BTreeSet<&str> = match slot {
            "food" => config.inventories.food_oov.iter().map(String::as_str).collect(),
            _ => config.inventories.location_oov.iter().map(String::as_str).collect(),
        };
        for s in corpus
            .oov_test
            .iter()
            .flat_map(|d| &d.states)
            .filter(|s| s.slot == slot)
        {
            assert!(held.contains(s.value.as_str()));
            assert!(!train_values.contains(&s.value));
        }
        for inst in corpus.instances(Split::OovTest, slot, 540) {
            let (s, _) = inst.gold_span.unwrap();
            assert!(!corpus.vocabulary.contains(&inst.tokens[s]));
        }
    }
}

#[test]
fn overlapping_oov_inventory_is_rejected() {
    let mut config = GeneratorConfig::babi(1);
    config.inventories.food_oov.push("thai".into());
    assert!(matches!(
        generate_synthetic(&config),
        Err(GenerateError::OovOverlap { .. })
    ));
    let mut config = GeneratorConfig::babi(1);
    config.inventories.location.clear();
    assert!(matches!(
        generate_synthetic(&config),
        Err(GenerateError::EmptyInventory(_))
    ));
}

#[test]
fn dstc_like_corpus_has_non_pointable_values() {
    let mut config = GeneratorConfig::dstc_like(2);
    config.n_train = 200;
    let corpus = generate_synthetic(&config).unwrap();
    let inst = corpus.instances(Split::Train, "food", 540);
    let counts = class_counts(&inst);
    assert!(counts[&GoldClass::None] > 0);
    assert!(counts[&GoldClass::DontCare] > 0);
    assert!(counts[&GoldClass::Other] > 0);
    for i in &inst {
        if let Some((s, e)) = i.gold_span {
            assert_eq!(normalize_value(&i.tokens[s..=e].join(" ")), i.gold_value);
        }
    }
}

#[test]
fn noise_makes_some_values_unpointable() {
    let mut config = GeneratorConfig::babi(2);
    config.n_train = 200;
    config.noise_prob = 0.5;
    let corpus = generate_synthetic(&config).unwrap();
    let inst = corpus.instances(Split::Train, "food", 540);
    let missing = inst.iter().filter(|i| i.gold_span.is_none()).count();
    assert!(missing > 0);
    assert!(inst.iter().all(|i| i.gold_class == GoldClass::Other));
}

fn skewed_corpus(n_food: usize) -> Corpus {
    let mut config = GeneratorConfig::dstc_like(4);
    config.inventories.food.truncate(n_food);
    config.n_train = 600;
    generate_synthetic(&config).unwrap()
}

#[test]
fn oov_split_removes_ceil_fraction_types() {
    let corpus = skewed_corpus(20);
    assert_eq!(corpus.value_inventory("food").len(), 20);
    let (reduced, stats) = make_oov_split(&corpus, "food", 0.35, 9).unwrap();
    assert_eq!(stats.removed_types.len(), 7);
    assert_eq!(stats.value_types_after, 13);
    let removed: BTreeSet<&String> = stats.removed_types.iter().collect();
    let leftover = reduced
        .train
        .iter()
        .chain(&reduced.dev)
        .flat_map(|d| &d.states)
        .filter(|s| s.slot == "food" && removed.contains(&s.value))
        .count();
    assert_eq!(leftover, 0);
    let direct = reduced
        .train
        .iter()
        .flat_map(|d| &d.states)
        .filter(|s| s.slot == "food")
        .count();
    assert_eq!(direct, stats.train_instances_after);
    assert!(stats.train_instances_after < stats.train_instances_before);
    assert_eq!(reduced.test, corpus.test);
    assert_eq!(reduced.oov_test, corpus.oov_test);
    assert!(stats.test_oov_rate_after > 0.0);
    assert_eq!(stats.test_oov_rate_before, 0.0);
    // other slots keep their instances
    let loc = |c: &Corpus| c.instances(Split::Train, "location", 540).len();
    assert_eq!(loc(&reduced), loc(&corpus));
}

#[test]
fn oov_split_boundaries() {
    let corpus = skewed_corpus(20);
    assert!(matches!(
        make_oov_split(&corpus, "food", 0.0, 1),
        Err(SplitError::Fraction(_))
    ));
    assert!(matches!(
        make_oov_split(&corpus, "food", 1.0, 1),
        Err(SplitError::Fraction(_))
    ));
    let (_, stats) = make_oov_split(&corpus, "food", 1e-9, 1).unwrap();
    assert_eq!(stats.removed_types.len(), 1);
    assert!(matches!(
        make_oov_split(&corpus, "food", 0.99, 1),
        Err(SplitError::RemovesAll { .. })
    ));
    assert!(make_oov_split(&corpus, "cuisine", 0.3, 1).is_err());
}

#[test]
fn oov_split_is_seeded() {
    let corpus = skewed_corpus(20);
    let a = make_oov_split(&corpus, "food", 0.35, 3).unwrap().1;
    let b = make_oov_split(&corpus, "food", 0.35, 3).unwrap().1;
    assert_eq!(a, b);
}

fn tiny_corpus(texts: &[&str]) -> Corpus {
    let dialogues = texts
        .iter()
        .enumerate()
        .map(|(i, t)| Dialogue {
            id: format!("d{i}"),
            turns: vec![Turn::new(Speaker::User, t)],
            states: vec![StateRecord {
                turn: 0,
                slot: "food".into(),
                value: "a".into(),
            }],
        })
        .collect();
    Corpus::new(SlotSchema::new(&["food"]), dialogues, vec![], vec![], vec![])
}

#[test]
fn vocab_counts_specials_and_falls_back_to_unk() {
    let corpus = tiny_corpus(&["a b", "b"]);
    let v = &corpus.vocabulary;
    assert_eq!(v.special_count(), 4);
    assert_eq!(v.len(), 2 + v.special_count());
    assert_eq!(v.token(0), PAD);
    assert_eq!(v.token(1), UNK);
    assert_eq!(v.token(3), "<food>");
    // b is more frequent than a
    assert_eq!(v.token(4), "b");
    assert_eq!(v.token(5), "a");
    assert_eq!(v.index("zebra"), v.unk());
}

#[test]
fn vocab_is_deterministic_and_ignores_test_splits() {
    let mut config = GeneratorConfig::babi(3);
    config.n_train = 100;
    let corpus = generate_synthetic(&config).unwrap();
    let rebuilt = build_vocab(&corpus.schema, corpus.train.iter().chain(&corpus.dev));
    assert_eq!(rebuilt, corpus.vocabulary);
    for d in &corpus.oov_test {
        for t in &d.turns {
            for tok in &t.tokens {
                let in_train = corpus
                    .train
                    .iter()
                    .chain(&corpus.dev)
                    .any(|d| d.turns.iter().any(|t| t.tokens.contains(tok)));
                assert_eq!(corpus.vocabulary.contains(tok), in_train || tok.starts_with('<'));
            }
        }
    }
}

#[test]
fn histogram_examples() {
    let empty = Corpus::new(SlotSchema::new(&["food"]), vec![], vec![], vec![], vec![]);
    assert!(value_frequency_histogram(&empty, "food").is_empty());
    let one = tiny_corpus(&["x"]);
    assert_eq!(value_frequency_histogram(&one, "food"), vec![("a".to_string(), 1)]);

    let corpus = skewed_corpus(20);
    let hist = value_frequency_histogram(&corpus, "food");
    let total: usize = hist.iter().map(|(_, c)| c).sum();
    let direct = corpus
        .train
        .iter()
        .flat_map(|d| &d.states)
        .filter(|s| s.slot == "food" && s.value != NONE_VALUE)
        .count();
    assert_eq!(total, direct);
    assert!(hist.windows(2).all(|w| w[0].1 >= w[1].1));
    // skew: the head value is much more frequent than the tail
    assert!(hist[0].1 > 5 * hist.last().unwrap().1);
}

#[test]
fn history_flattening_uses_separators_and_truncates() {
    let turns = vec![
        Turn::new(Speaker::System, "welcomemsg"),
        Turn::new(Speaker::User, "thai food"),
        Turn::new(Speaker::System, "api_call"),
    ];
    let (t, r) = flatten_history(&turns, 1, 540);
    assert_eq!(t, toks("welcomemsg <sep> thai food"));
    assert_eq!(r, vec![Speaker::System, Speaker::User, Speaker::User, Speaker::User]);
    let (t, r) = flatten_history(&turns, 2, 3);
    assert_eq!(t, toks("food <sep> api_call"));
    assert_eq!(r.len(), 3);
}

#[test]
fn parse_rejects_bad_records() {
    let ok =
        r#"{"id":"x","turns":[{"speaker":"user","tokens":["hi"]}],"states":[{"turn":0,"slot":"food","value":"none"}]}"#;
    let d = parse_dialogue(ok, None, "f", 1).unwrap();
    assert_eq!(write_dialogue(&d), ok);

    let missing = r#"{"id":"x7","turns":[{"speaker":"user","tokens":["hi"]}]}"#;
    let err = parse_dialogue(missing, None, "f", 3).unwrap_err();
    assert!(matches!(err, CorpusError::MissingState { ref dialogue, line: 3, .. } if dialogue == "x7"));
    assert!(err.to_string().contains("x7"));

    let bad_role = ok.replace("\"user\"", "\"robot\"");
    assert!(matches!(
        parse_dialogue(&bad_role, None, "f", 1),
        Err(CorpusError::UnknownSpeaker { .. })
    ));
    let garbage = parse_dialogue("{not json", None, "f", 9).unwrap_err();
    assert!(garbage.to_string().contains(":9:"));
    let schema = SlotSchema::new(&["area"]);
    assert!(matches!(
        parse_dialogue(ok, Some(&schema), "f", 1),
        Err(CorpusError::Invalid { .. })
    ));
}

#[test]
fn save_then_load_round_trips() {
    let mut config = GeneratorConfig::dstc_like(6);
    config.n_train = 40;
    config.n_dev = 5;
    config.n_test = 5;
    let corpus = generate_synthetic(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_corpus(&corpus, dir.path()).unwrap();
    let loaded = load_corpus(dir.path()).unwrap();
    assert_eq!(loaded, corpus);
    let first = std::fs::read(dir.path().join("train.jsonl")).unwrap();
    save_corpus(&loaded, dir.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join("train.jsonl")).unwrap(), first);
}
