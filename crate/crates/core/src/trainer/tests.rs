use super::*;
use crate::kb::KnowledgeRecord;

fn vocab() -> SubwordVocabulary {
    SubwordVocabulary::from_tokens(
        [
            "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "a", "cat", "dog", "hot", "saw", "i", "is", "what", "color", "?",
            "red", "blue", "today", "big",
        ],
    )
    .unwrap()
}

fn index(v: &SubwordVocabulary) -> KnowledgeIndex {
    KnowledgeIndex::build(
        &[
            KnowledgeRecord::new("cat", vec![1.0, 0.0, 0.5]),
            KnowledgeRecord::new("hot_dog", vec![0.0, 1.0, -0.5]),
            KnowledgeRecord::new("dog", vec![0.5, 0.5, 0.5]),
        ],
        v,
    )
    .unwrap()
}

fn corpus(v: &SubwordVocabulary) -> Corpus {
    let lines = [
        "i saw the cat today",
        "the hot dog is big",
        "a dog saw a cat",
        "i saw the big dog",
        "the cat is big today",
    ];
    Corpus::from_lines(lines.iter().cycle().take(20), v, 12)
}

fn task(v: &SubwordVocabulary) -> TaskData {
    let ex = |text: &str, answer: &str, split: Split, group: &str| TaskExample {
        text: text.into(),
        answer: answer.into(),
        split,
        group: Some(group.into()),
        visual: None,
    };
    TaskData::new(
        vec![
            ex("what color is the cat ?", "red", Split::Train, "a"),
            ex("the cat is what color ?", "red", Split::Train, "a"),
            ex("what color is the hot dog ?", "blue", Split::Train, "b"),
            ex("what color is the dog ?", "blue", Split::Test, "a"),
            ex("the dog is what color ?", "blue", Split::Test, "b"),
        ],
        v,
        12,
        HeadKind::Classification,
    )
    .unwrap()
}

fn config(strategy: Strategy, lambda: f64) -> TrainConfig {
    TrainConfig {
        strategy,
        lambda,
        seed: 3,
        batch_size: 4,
        learning_rate: 1e-2,
        pretrain_epochs: 3,
        finetune_epochs: 3,
        max_len: 12,
        heldout_every: 5,
        model: ModelConfig {
            d_model: 8,
            d_knowledge: 3,
            text_layers: 1,
            cross_layers: 0,
            heads: 2,
            ff_dim: 8,
            text_only: true,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn strategy_dispatch_table() {
    use Phase::*;
    let table = [
        (Strategy::Baseline, false, false),
        (Strategy::Pt, true, false),
        (Strategy::Ft, false, true),
        (Strategy::PtFt, true, true),
    ];
    for (s, pt, ft) in table {
        assert_eq!(s.aligns(Pretrain), pt, "{s}");
        assert_eq!(s.aligns(Finetune), ft, "{s}");
        assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
    }
    assert_eq!("PT+FT".parse::<Strategy>().unwrap(), Strategy::PtFt);
    assert!("both".parse::<Strategy>().is_err());

    let mut c = config(Strategy::PtFt, 2.0);
    c.finetune_lambda = Some(0.5);
    assert_eq!(c.effective_lambda(Pretrain), 2.0);
    assert_eq!(c.effective_lambda(Finetune), 0.5);
    c.strategy = Strategy::Baseline;
    assert_eq!(c.effective_lambda(Pretrain), 0.0);
}

#[test]
fn config_validation_and_toml() {
    assert!(config(Strategy::Pt, -1.0).validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..config(Strategy::Pt, 1.0) }.validate().is_err());
    let parsed: TrainConfig = toml::from_str(
        "strategy = \"pt_ft\"\nlambda = 100.0\nvariant = \"cosine\"\noptimizer = \"sgd\"\n[model]\nd_model = 32\n",
    )
    .unwrap();
    assert_eq!(parsed.strategy, Strategy::PtFt);
    assert_eq!(parsed.variant, AlignmentVariant::Cosine);
    assert_eq!(parsed.optimizer, OptimizerKind::Sgd);
    assert_eq!(parsed.model.d_model, 32);
    assert_eq!(parsed.batch_size, 32);
    assert_eq!(parsed.learning_rate, 5e-5);
    assert!(toml::from_str::<TrainConfig>("lamda = 1.0").is_err());
}

#[test]
fn zero_lambda_matches_baseline_bitwise_over_100_steps() {
    let v = vocab();
    let idx = index(&v);
    let c = corpus(&v);
    let cache = MatchCache::new();
    let run = |strategy, lambda| {
        let cfg = TrainConfig { batch_size: 1, pretrain_epochs: 5, heldout_every: 0, ..config(strategy, lambda) };
        let ck = Checkpoint::initialize(&cfg, &v, &idx).unwrap();
        pretrain(ck, &c, &idx, &cfg, &cache).unwrap()
    };
    let (a, ra) = run(Strategy::Baseline, 0.0);
    let (b, rb) = run(Strategy::PtFt, 0.0);
    assert_eq!(ra.steps, 100);
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.projection, b.projection);
    let la: Vec<u64> = ra.epochs.iter().map(|e| e.main_loss.to_bits()).collect();
    let lb: Vec<u64> = rb.epochs.iter().map(|e| e.main_loss.to_bits()).collect();
    assert_eq!(la, lb);

    let (c2, _) = run(Strategy::PtFt, 1.0);
    assert_ne!(a.model.params, c2.model.params);
}

#[test]
fn projection_only_moves_in_aligned_phases() {
    let v = vocab();
    let idx = index(&v);
    let (c, t) = (corpus(&v), task(&v));
    let cache = MatchCache::new();
    for (strategy, pt_moves, ft_moves) in [
        (Strategy::Baseline, false, false),
        (Strategy::Pt, true, false),
        (Strategy::Ft, false, true),
        (Strategy::PtFt, true, true),
    ] {
        let cfg = config(strategy, 1.0);
        let init = Checkpoint::initialize(&cfg, &v, &idx).unwrap();
        let p0 = init.projection.clone();
        let (after_pt, rpt) = pretrain(init, &c, &idx, &cfg, &cache).unwrap();
        assert_eq!(after_pt.projection != p0, pt_moves, "{strategy} pretrain");
        assert_eq!(rpt.aligned, pt_moves);
        let p1 = after_pt.projection.clone();
        let (after_ft, rft, _) = finetune(after_pt, &t, &idx, &cfg, &cache).unwrap();
        assert_eq!(after_ft.projection != p1, ft_moves, "{strategy} finetune");
        assert_eq!(after_ft.projection_optimizer.steps > 0, ft_moves);
        assert_eq!(rft.aligned, ft_moves);
    }
    assert!(cache.len() >= 2);
}

#[test]
fn heldout_alignment_decreases_when_aligned() {
    let v = vocab();
    let idx = index(&v);
    let c = corpus(&v);
    let cfg = TrainConfig { pretrain_epochs: 6, ..config(Strategy::Pt, 1.0) };
    let ck = Checkpoint::initialize(&cfg, &v, &idx).unwrap();
    let (_, r) = pretrain(ck, &c, &idx, &cfg, &MatchCache::new()).unwrap();
    let mut prev = r.initial_heldout_align.unwrap();
    for e in &r.epochs {
        let h = e.heldout_align.unwrap();
        assert!(h < prev, "held-out alignment rose from {prev} to {h}");
        prev = h;
    }
    assert_eq!(r.heldout_examples, 4);
}

#[test]
fn no_matches_means_zero_alignment() {
    let v = vocab();
    let empty = KnowledgeIndex::empty(3, v.fingerprint());
    let c = corpus(&v);
    let cfg = config(Strategy::Pt, 5.0);
    let ck = Checkpoint::initialize(&cfg, &v, &empty).unwrap();
    let p0 = ck.projection.clone();
    let (ck, r) = pretrain(ck, &c, &empty, &cfg, &MatchCache::new()).unwrap();
    for e in &r.epochs {
        assert_eq!(e.align_loss, 0.0);
        assert_eq!(e.align_pairs, 0);
        assert_eq!(e.heldout_align, None);
    }
    assert_eq!(ck.projection, p0);
}

#[test]
fn finetune_zero_epochs_reports_unmodified_checkpoint() {
    let v = vocab();
    let idx = index(&v);
    let t = task(&v);
    let cfg = TrainConfig { finetune_epochs: 0, ..config(Strategy::Ft, 1.0) };
    let mut ck = Checkpoint::initialize(&cfg, &v, &idx).unwrap();
    ck.model.reset_answer_head(t.answers.len(), cfg.seed);
    ck.answers = t.answers.clone();
    let expected = evaluate(&ck, &t, ck.pad).unwrap();
    let before = ck.model.clone();
    let (after, r, m) = finetune(ck, &t, &idx, &cfg, &MatchCache::new()).unwrap();
    assert_eq!(after.model, before);
    assert_eq!(r.steps, 0);
    assert_eq!(m, expected);
    assert_eq!(m.examples, 2);
    assert_eq!(m.groups["a"].examples + m.groups["b"].examples, 2);
}

#[test]
fn runs_are_deterministic() {
    let v = vocab();
    let idx = index(&v);
    let (c, t) = (corpus(&v), task(&v));
    let cfg = config(Strategy::PtFt, 0.5);
    let (a, ra) = run_strategy(&cfg, &v, &c, &t, &idx, &MatchCache::new()).unwrap();
    let (b, rb) = run_strategy(&cfg, &v, &c, &t, &idx, &MatchCache::new()).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    assert_eq!(ra.strategy, Strategy::PtFt);
    assert_eq!(ra.pretrain.epochs.len(), 3);

    let other = TrainConfig { seed: 4, strategy: Strategy::Baseline, ..cfg };
    let (_, rc) = run_strategy(&other, &v, &c, &t, &idx, &MatchCache::new()).unwrap();
    assert_eq!(rc.experiment_fingerprint, ra.experiment_fingerprint);
    assert_ne!(rc.config_fingerprint, ra.config_fingerprint);
}

#[test]
fn checkpoint_round_trip_and_compatibility() {
    let v = vocab();
    let idx = index(&v);
    let (c, t) = (corpus(&v), task(&v));
    let cfg = TrainConfig { optimizer: OptimizerKind::Adam, ..config(Strategy::PtFt, 1.0) };
    let (ck, _) = run_strategy(&cfg, &v, &c, &t, &idx, &MatchCache::new()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert!(!back.optimizer.first_moment.is_empty());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Format { .. })));

    let other_vocab = SubwordVocabulary::from_tokens(["[PAD]", "[UNK]", "x"]).unwrap();
    let other_corpus = Corpus::from_lines(["x x"], &other_vocab, 4);
    let err = pretrain(back.clone(), &other_corpus, &idx, &cfg, &MatchCache::new()).unwrap_err();
    assert!(matches!(err, Error::FingerprintMismatch(_)));

    let smaller = idx.retain(|e| e.surface != "cat");
    let err = pretrain(back, &c, &smaller, &cfg, &MatchCache::new()).unwrap_err();
    assert!(matches!(err, Error::FingerprintMismatch(_)));
}

#[test]
fn non_finite_weights_abort() {
    let v = vocab();
    let idx = index(&v);
    let c = corpus(&v);
    let cfg = config(Strategy::Baseline, 0.0);
    let mut ck = Checkpoint::initialize(&cfg, &v, &idx).unwrap();
    let id = ck.model.params.expect("head.mlm.b");
    ck.model.params.get_mut(id).data[0] = f64::NAN;
    let err = pretrain(ck, &c, &idx, &cfg, &MatchCache::new()).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
}

#[test]
fn masking_is_bounded_and_skips_specials() {
    let v = vocab();
    let m = MaskingVocab::new(&v);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ids = [2, 7, 8, 9, 3];
    for _ in 0..200 {
        match mask_sentence(&ids, &m, 0.15, &mut rng) {
            Job::Masked { ids: out, positions, targets } => {
                assert!(!positions.is_empty());
                for (&p, &t) in positions.iter().zip(&targets) {
                    assert!((1..4).contains(&p));
                    assert_eq!(t, ids[p] as usize);
                }
                assert_eq!(out[0], 2);
                assert_eq!(out[4], 3);
            }
            Job::Answer { .. } => unreachable!(),
        }
    }
}

#[test]
fn summary_refuses_mixed_experiments() {
    let v = vocab();
    let idx = index(&v);
    let (c, t) = (corpus(&v), task(&v));
    let cfg = TrainConfig { pretrain_epochs: 1, finetune_epochs: 1, ..config(Strategy::Baseline, 1.0) };
    let mut reports = Vec::new();
    for (s, seed) in [(Strategy::Baseline, 1), (Strategy::Baseline, 2), (Strategy::PtFt, 1)] {
        let c2 = TrainConfig { strategy: s, seed, ..cfg.clone() };
        reports.push(run_strategy(&c2, &v, &c, &t, &idx, &MatchCache::new()).unwrap().1);
    }
    let s = summarize(&reports, false).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s[0].strategy, Strategy::Baseline);
    assert_eq!(s[0].seeds, vec![1, 2]);
    let accs = [reports[0].metrics.accuracy, reports[1].metrics.accuracy];
    assert!((s[0].accuracy.mean - (accs[0] + accs[1]) / 2.0).abs() < 1e-12);

    let c3 = TrainConfig { lambda: 7.0, seed: 3, ..cfg };
    reports.push(run_strategy(&c3, &v, &c, &t, &idx, &MatchCache::new()).unwrap().1);
    assert!(matches!(summarize(&reports, false), Err(Error::FingerprintMismatch(_))));
    assert!(summarize(&reports, true).is_ok());
}
