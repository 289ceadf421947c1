use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

fn kbalign(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbalign"))
        .args(args)
        .current_dir(dir)
        .env_remove("KBALIGN_DATA")
        .output()
        .expect("spawn kbalign")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kbalign(dir, args);
    assert!(
        out.status.success(),
        "kbalign {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn build_fixture_index(dir: &Path) {
    ok(
        &fixtures(),
        &["kb", "build-index", "--vocab", "vocab.txt", "--embeddings", "kb.emb", "--dim", "2", "--out", dir.join("kb.idx").to_str().unwrap()],
    );
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_2() {
    let out = kbalign(Path::new("."), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(kbalign(Path::new("."), &["train", "--bogus"]).status.code(), Some(2));
}

#[test]
fn match_output_equals_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    build_fixture_index(tmp.path());
    let idx = tmp.path().join("kb.idx");
    let got = ok(&fixtures(), &["match", "--index", idx.to_str().unwrap(), "--vocab", "vocab.txt", "--input", "sentences.txt"]);
    assert_eq!(got, fs::read_to_string(fixtures().join("match.golden.jsonl")).unwrap());
}

#[test]
fn tokenize_output_equals_golden_file() {
    let got = ok(&fixtures(), &["tokenize", "--vocab", "vocab.txt", "--input", "sentences.txt"]);
    assert_eq!(got, fs::read_to_string(fixtures().join("tokenize.golden.jsonl")).unwrap());
}

#[test]
fn data_root_resolves_relative_inputs() {
    let out = Command::new(env!("CARGO_BIN_EXE_kbalign"))
        .args(["tokenize", "--vocab", "vocab.txt", "--input", "sentences.txt"])
        .current_dir(std::env::temp_dir())
        .env("KBALIGN_DATA", fixtures())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), fs::read_to_string(fixtures().join("tokenize.golden.jsonl")).unwrap());
}

#[test]
fn errors_map_to_categorized_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // Missing input file: i/o.
    assert_eq!(kbalign(dir, &["tokenize", "--vocab", "missing.txt", "x"]).status.code(), Some(3));
    // Malformed embedding line: parse.
    fs::write(dir.join("bad.emb"), "food 0.1\n").unwrap();
    let v = fixtures().join("vocab.txt");
    let out = kbalign(dir, &["kb", "build-index", "--vocab", v.to_str().unwrap(), "--embeddings", "bad.emb", "--dim", "2", "--out", "x.idx"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.emb:1"));
    // Index built with one vocabulary, text tokenized with another: fingerprint.
    build_fixture_index(dir);
    fs::write(dir.join("other.txt"), "[PAD]\n[UNK]\nfood\n").unwrap();
    fs::write(dir.join("s.txt"), "food\n").unwrap();
    let out = kbalign(dir, &["match", "--index", "kb.idx", "--vocab", "other.txt", "--input", "s.txt"]);
    assert_eq!(out.status.code(), Some(7));
    // Invalid configuration value.
    fs::write(
        dir.join("train.toml"),
        "[paths]\nvocab='a'\nindex='b'\ncorpus='c'\ntask='d'\nout='o'\n[train]\nbatch_size=0\n",
    )
    .unwrap();
    assert_eq!(kbalign(dir, &["train", "--config", "train.toml"]).status.code(), Some(6));
}

/// Copies the toy dataset, builds its index, and writes a small, fast config.
fn small_toy(dir: &Path) {
    for f in ["vocab.txt", "triples.tsv", "corpus.txt", "task.jsonl", "pairs.tsv", "probe_wc.jsonl", "keywords.txt", "stopwords.txt"] {
        fs::copy(toy().join(f), dir.join(f)).unwrap();
    }
    ok(dir, &["kb", "ingest", "--triples", "triples.tsv", "--stopwords", "stopwords.txt", "--out", "clean.tsv"]);
    ok(dir, &["kb", "embed-graph", "--triples", "clean.tsv", "--dim", "4", "--epochs", "20", "--out", "kb.emb"]);
    ok(dir, &["kb", "build-index", "--vocab", "vocab.txt", "--embeddings", "kb.emb", "--dim", "4", "--out", "kb.idx"]);
    fs::write(
        dir.join("train.toml"),
        r#"
[paths]
vocab = "vocab.txt"
index = "kb.idx"
corpus = "corpus.txt"
task = "task.jsonl"
out = "out"

[train]
batch_size = 32
learning_rate = 1e-3
pretrain_epochs = 1
finetune_epochs = 1

[train.model]
d_model = 8
d_knowledge = 4
text_layers = 1
cross_layers = 0
heads = 1
ff_dim = 8
text_only = true

[analysis]
synonym_pairs = "pairs.tsv"
probe_wc = "probe_wc.jsonl"
"#,
    )
    .unwrap();
}

#[test]
fn rerunning_train_gives_byte_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_toy(dir);
    for out in ["a", "b"] {
        ok(dir, &["train", "--config", "train.toml", "--strategy", "pt+ft", "--seed", "3", "--out", out]);
    }
    for rel in ["runs/pt_ft-seed3.json", "checkpoints/pt_ft-seed3.ckpt", "analysis/pt_ft-seed3.json"] {
        let a = fs::read(dir.join("a").join(rel)).unwrap();
        let b = fs::read(dir.join("b").join(rel)).unwrap();
        assert!(a == b, "{rel} differs between identical runs");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("a/runs/pt_ft-seed3.json")).unwrap()).unwrap();
    assert_eq!(report["strategy"], "pt_ft");
    assert_eq!(report["config_fingerprint"].as_str().unwrap().len(), 64);
}

#[test]
fn report_aggregates_seeds_and_refuses_mixed_experiments() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_toy(dir);
    ok(dir, &["train", "--config", "train.toml", "--strategy", "baseline,pt+ft", "--seed", "0,1,2"]);
    let table = ok(dir, &["report", "--runs", "out/runs", "--json", "summary.json", "--csv", "summary.csv"]);
    let rows: Vec<&str> = table.lines().filter(|l| l.contains('±')).collect();
    assert_eq!(rows.len(), 2, "{table}");
    assert!(rows.iter().all(|r| r.split_whitespace().nth(1) == Some("3")), "{table}");
    let csv = fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert!(csv.starts_with("strategy,seeds,group,mean,std,formatted\n"), "{csv}");
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"], 6);

    ok(dir, &["train", "--config", "train.toml", "--strategy", "baseline", "--seed", "9", "--lambda", "0.5", "--out", "other"]);
    fs::copy(dir.join("other/runs/baseline-seed9.json"), dir.join("out/runs/baseline-seed9.json")).unwrap();
    let out = kbalign(dir, &["report", "--runs", "out/runs"]);
    assert_eq!(out.status.code(), Some(7));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    ok(dir, &["report", "--runs", "out/runs", "--force"]);
}

#[test]
fn analyze_commands_emit_json_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_toy(dir);
    ok(dir, &["train", "--config", "train.toml", "--seed", "0"]);
    let ckpt = "out/checkpoints/pt_ft-seed0.ckpt";

    let csv = ok(dir, &["analyze", "neighbors", "--checkpoint", ckpt, "--vocab", "vocab.txt", "--word", "red", "-k", "3", "--format", "csv"]);
    assert_eq!(csv.lines().count(), 4, "{csv}");
    assert!(csv.starts_with("query,rank,token,id,distance"));

    let json = ok(dir, &["analyze", "ablate", "--index", "kb.idx", "--keywords", "keywords.txt", "--out", "pruned.idx"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["removed"].as_u64().unwrap() > 0);
    assert!(dir.join("pruned.idx").is_file());

    let json = ok(dir, &["analyze", "probe", "--checkpoint", ckpt, "--config", "train.toml", "--task", "wc", "--layers", "all", "--control"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["probe"]["layers"].as_array().unwrap().len(), 1);
    assert!(v["shuffled_control"]["best"]["accuracy"].is_number());

    let json = ok(dir, &["analyze", "synonyms", "--checkpoint", ckpt, "--config", "train.toml", "--control", "50"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["control_pairs"], 50);

    // A checkpoint is tied to its vocabulary.
    let out = kbalign(dir, &["analyze", "synonyms", "--checkpoint", ckpt, "--vocab", "stopwords.txt", "--pairs", "pairs.tsv"]);
    assert_ne!(out.status.code(), Some(0));
}
