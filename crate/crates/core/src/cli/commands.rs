use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{resolve_input, AnalysisConfig, PipelineConfig};
use super::{
    AblateArgs, AnalyzeCommand, BuildIndexArgs, Command, EmbedGraphArgs, Format, IngestArgs, KbCommand, MatchArgs,
    ModelInputArgs, NeighborsArgs, OutputArgs, ProbeArgs, ReportArgs, SynonymsArgs, SynthArgs, TokenizeArgs, TrainArgs,
};
use crate::align::AlignmentVariant;
use crate::analysis::{
    ablate_index, nearest_neighbors, probe_layers, shuffled_labels, synonym_distance_report, DistanceMetric,
    NeighborReport, ProbeSweep, SynonymReport,
};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::kb::{
    embed_graph, filter_entries, ingest_embeddings, load_word_list, write_embeddings, GraphEmbedConfig, KnowledgeGraph,
    KnowledgeIndex,
};
use crate::matcher::match_corpus;
use crate::synth::{generate, ProbeExample, SynthConfig};
use crate::tokenizer::{tokenize, SubwordVocabulary, TokenSequence};
use crate::trainer::{
    format_table, run_strategy, summarize, Checkpoint, Corpus, MatchCache, RunReport, Strategy, StrategySummary, TaskData,
};

pub(super) fn execute(command: Command) -> Result<()> {
    match command {
        Command::Tokenize(a) => tokenize_cmd(a),
        Command::Kb(KbCommand::Ingest(a)) => ingest_cmd(a),
        Command::Kb(KbCommand::EmbedGraph(a)) => embed_graph_cmd(a),
        Command::Kb(KbCommand::BuildIndex(a)) => build_index_cmd(a),
        Command::Match(a) => match_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Analyze(AnalyzeCommand::Neighbors(a)) => neighbors_cmd(a),
        Command::Analyze(AnalyzeCommand::Ablate(a)) => ablate_cmd(a),
        Command::Analyze(AnalyzeCommand::Probe(a)) => probe_cmd(a),
        Command::Analyze(AnalyzeCommand::Synonyms(a)) => synonyms_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

// ----------------------------------------------------------------------------
// output helpers

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_file(p, bytes),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

fn emit_report<T: Serialize, R: Serialize>(out: &OutputArgs, value: &T, rows: &[R]) -> Result<()> {
    let bytes = match out.format {
        Format::Json => json_bytes(value)?,
        Format::Csv => csv_bytes(rows)?,
    };
    emit(out.output.as_deref(), &bytes)
}

fn read_lines(path: Option<&Path>) -> Result<Vec<String>> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
        }
        None => io::stdin()
            .lock()
            .lines()
            .collect::<io::Result<Vec<_>>>()
            .map_err(|e| Error::io("<stdin>", e)),
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn load_vocab(path: &Path) -> Result<SubwordVocabulary> {
    SubwordVocabulary::load(resolve_input(path))
}

// ----------------------------------------------------------------------------
// tokenize, kb, match

#[derive(Serialize)]
struct TokenizedLine<'a> {
    text: &'a str,
    tokens: Vec<&'a str>,
    ids: &'a [u32],
}

fn tokenize_cmd(a: TokenizeArgs) -> Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let lines = if a.text.is_empty() {
        read_lines(a.input.map(|p| resolve_input(&p)).as_deref())?
    } else {
        vec![a.text.join(" ")]
    };
    let mut out = Vec::new();
    for line in &lines {
        let seq = tokenize(line, &vocab, a.max_len);
        let row = TokenizedLine {
            text: &seq.text,
            tokens: seq.ids.iter().map(|&id| vocab.token(id).unwrap_or_default()).collect(),
            ids: &seq.ids,
        };
        serde_json::to_writer(&mut out, &row)?;
        out.push(b'\n');
    }
    emit(a.output.as_deref(), &out)
}

#[derive(Serialize)]
struct IngestSummary {
    kind: &'static str,
    input: usize,
    kept: usize,
    dropped: usize,
    output: PathBuf,
}

fn ingest_cmd(a: IngestArgs) -> Result<()> {
    let stopwords = match &a.stopwords {
        Some(p) => load_word_list(resolve_input(p))?,
        None => HashSet::new(),
    };
    let summary = if let Some(path) = &a.embeddings {
        let dim = a.dim.ok_or_else(|| Error::InvalidInput("--dim is required with --embeddings".into()))?;
        let records = ingest_embeddings(resolve_input(path), dim)?;
        let input = records.len();
        let kept = filter_entries(records, &stopwords, a.keep_prefix.as_deref());
        write_embeddings(&a.out, &kept)?;
        IngestSummary { kind: "embeddings", input, kept: kept.len(), dropped: input - kept.len(), output: a.out }
    } else {
        let path = a.triples.as_ref().ok_or_else(|| Error::InvalidInput("give --embeddings or --triples".into()))?;
        let graph = KnowledgeGraph::load(resolve_input(path))?;
        let input = graph.triples().len();
        let is_stop = |entity: &str| stopwords.contains(&entity.replace('_', " ").to_lowercase());
        let kept = KnowledgeGraph::new(graph.triples().iter().filter(|(h, _, t)| !is_stop(h) && !is_stop(t)).cloned());
        if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        kept.save(&a.out)?;
        let n = kept.triples().len();
        IngestSummary { kind: "triples", input, kept: n, dropped: input - n, output: a.out }
    };
    emit(None, &json_bytes(&summary)?)
}

#[derive(Serialize)]
struct EmbedSummary {
    entities: usize,
    relations: usize,
    dim: usize,
    final_loss: Option<f64>,
    output: PathBuf,
}

fn embed_graph_cmd(a: EmbedGraphArgs) -> Result<()> {
    let graph = KnowledgeGraph::load(resolve_input(&a.triples))?;
    let cfg = GraphEmbedConfig {
        dim: a.dim,
        epochs: a.epochs,
        margin: a.margin,
        learning_rate: a.learning_rate,
        seed: a.seed,
    };
    let emb = embed_graph(&graph, &cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_embeddings(&a.out, &emb.records())?;
    let summary = EmbedSummary {
        entities: emb.entities.len(),
        relations: emb.relations.len(),
        dim: a.dim,
        final_loss: emb.epoch_losses.last().copied(),
        output: a.out,
    };
    emit(None, &json_bytes(&summary)?)
}

#[derive(Serialize)]
struct IndexSummary {
    dim: usize,
    entries: usize,
    prefixes: usize,
    stats: crate::kb::BuildStats,
    vocab: Fingerprint,
    fingerprint: Fingerprint,
    output: PathBuf,
}

fn index_summary(index: &KnowledgeIndex, output: PathBuf) -> IndexSummary {
    IndexSummary {
        dim: index.dim(),
        entries: index.len(),
        prefixes: index.prefix_count(),
        stats: index.stats(),
        vocab: index.vocab_fingerprint(),
        fingerprint: index.fingerprint(),
        output,
    }
}

fn build_index_cmd(a: BuildIndexArgs) -> Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let records = ingest_embeddings(resolve_input(&a.embeddings), a.dim)?;
    let index = KnowledgeIndex::build(&records, &vocab)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    index.save(&a.out)?;
    emit(None, &json_bytes(&index_summary(&index, a.out))?)
}

#[derive(Serialize)]
struct SpanOut<'a> {
    start: usize,
    end: usize,
    surface: &'a str,
}

#[derive(Serialize)]
struct MatchLine<'a> {
    sentence: &'a str,
    spans: Vec<SpanOut<'a>>,
}

fn match_cmd(a: MatchArgs) -> Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let index = KnowledgeIndex::load(resolve_input(&a.index))?;
    let lines = read_lines(Some(&resolve_input(&a.input)))?;
    let max_len = a.max_len.unwrap_or(usize::MAX);
    let seqs: Vec<TokenSequence> = lines.iter().map(|l| tokenize(l, &vocab, max_len)).collect();
    let spans = match_corpus(&seqs, &index)?;
    let mut out = Vec::new();
    for (line, spans) in lines.iter().zip(&spans) {
        let row = MatchLine {
            sentence: line,
            spans: spans
                .iter()
                .map(|s| SpanOut { start: s.start, end: s.end, surface: &s.entry(&index).surface })
                .collect(),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.push(b'\n');
    }
    emit(a.output.as_deref(), &out)
}

// ----------------------------------------------------------------------------
// train

fn run_name(strategy: Strategy, seed: u64) -> String {
    format!("{strategy}-seed{seed}")
}

#[derive(Serialize)]
struct RunAnalysis {
    run: String,
    config_fingerprint: Fingerprint,
    synonyms: Option<SynonymReport>,
    probes: BTreeMap<String, ProbeSweep>,
    neighbors: Vec<NeighborReport>,
}

fn analyze_run(
    name: &str,
    ckpt: &Checkpoint,
    vocab: &SubwordVocabulary,
    a: &AnalysisConfig,
    max_len: usize,
) -> Result<RunAnalysis> {
    let table = ckpt.model.word_embeddings();
    let synonyms = match &a.synonym_pairs {
        Some(p) => Some(synonym_distance_report(table, vocab, &read_pairs(p)?, a.synonym_controls, a.seed)?),
        None => None,
    };
    let mut probes = BTreeMap::new();
    let layers: Vec<usize> = (0..ckpt.model.config.text_layers).collect();
    for (task, path) in [("wc", &a.probe_wc), ("sentlen", &a.probe_length)] {
        if let Some(path) = path {
            let (seqs, labels) = probe_data(path, vocab, max_len)?;
            probes.insert(task.to_string(), probe_layers(&ckpt.model, task, &seqs, &labels, &layers, ckpt.pad, a.seed)?);
        }
    }
    let neighbors = a
        .neighbors
        .iter()
        .map(|w| nearest_neighbors(table, vocab, w, a.k, DistanceMetric::L2))
        .collect::<Result<_>>()?;
    Ok(RunAnalysis {
        run: name.to_string(),
        config_fingerprint: ckpt.config.fingerprint(),
        synonyms,
        probes,
        neighbors,
    })
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config_path = resolve_input(&a.config);
    let mut pc = PipelineConfig::load(&config_path)?;
    if let Some(out) = a.out {
        pc.paths.out = out;
    }
    if let Some(l) = a.lambda {
        pc.train.lambda = l;
    }
    if let Some(v) = &a.variant {
        pc.train.variant = v.parse::<AlignmentVariant>()?;
    }
    if a.text_only {
        pc.train.model.text_only = true;
    }
    pc.validate()?;
    let strategies: Vec<Strategy> = if a.strategy.is_empty() {
        vec![pc.train.strategy]
    } else {
        a.strategy.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    let seeds = if a.seed.is_empty() { vec![pc.train.seed] } else { a.seed.clone() };

    let p = &pc.paths;
    let vocab = SubwordVocabulary::load(&p.vocab)?;
    let index = KnowledgeIndex::load(&p.index)?;
    let corpus = Corpus::load(&p.corpus, &vocab, pc.train.max_len)?;
    let task = TaskData::load(&p.task, &vocab, pc.train.max_len, pc.train.head)?;
    let cache = MatchCache::new();
    let runs_dir = p.out.join("runs");
    let ckpt_dir = p.out.join("checkpoints");
    let analysis_dir = p.out.join("analysis");
    for &strategy in &strategies {
        for &seed in &seeds {
            let mut cfg = pc.train.clone();
            cfg.strategy = strategy;
            cfg.seed = seed;
            let (ckpt, report) = run_strategy(&cfg, &vocab, &corpus, &task, &index, &cache)?;
            let name = run_name(strategy, seed);
            let report_path = runs_dir.join(format!("{name}.json"));
            write_file(&report_path, &json_bytes(&report)?)?;
            let ckpt_path = ckpt_dir.join(format!("{name}.ckpt"));
            fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
            ckpt.save(&ckpt_path)?;
            if !pc.analysis.is_empty() {
                let analysis = analyze_run(&name, &ckpt, &vocab, &pc.analysis, cfg.max_len)?;
                write_file(&analysis_dir.join(format!("{name}.json")), &json_bytes(&analysis)?)?;
            }
            println!(
                "{name}: held-out accuracy {:.4} (train {:.4}); report {}",
                report.metrics.accuracy,
                report.metrics.train_accuracy,
                report_path.display()
            );
        }
    }
    Ok(())
}

// ----------------------------------------------------------------------------
// analyze

struct ModelInputs {
    ckpt: Checkpoint,
    vocab: SubwordVocabulary,
    config: Option<PipelineConfig>,
}

fn load_model_inputs(a: &ModelInputArgs) -> Result<ModelInputs> {
    let config = a.config.as_ref().map(|p| PipelineConfig::load(&resolve_input(p))).transpose()?;
    let vocab_path = match (&a.vocab, &config) {
        (Some(v), _) => resolve_input(v),
        (None, Some(c)) => c.paths.vocab.clone(),
        (None, None) => return Err(Error::InvalidInput("give --vocab or --config".into())),
    };
    let vocab = SubwordVocabulary::load(&vocab_path)?;
    let ckpt = Checkpoint::load(resolve_input(&a.checkpoint))?;
    if ckpt.vocab != vocab.fingerprint() {
        return Err(Error::FingerprintMismatch(format!(
            "checkpoint was trained with vocabulary {} but {} has {}",
            ckpt.vocab.short(),
            vocab_path.display(),
            vocab.fingerprint().short()
        )));
    }
    Ok(ModelInputs { ckpt, vocab, config })
}

#[derive(Serialize)]
struct NeighborRow<'a> {
    query: &'a str,
    rank: usize,
    token: &'a str,
    id: u32,
    distance: f64,
}

fn neighbors_cmd(a: NeighborsArgs) -> Result<()> {
    let m = load_model_inputs(&a.input)?;
    let metric: DistanceMetric = a.metric.parse()?;
    let reports = a
        .word
        .iter()
        .map(|w| nearest_neighbors(m.ckpt.model.word_embeddings(), &m.vocab, w, a.k, metric))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<NeighborRow> = reports
        .iter()
        .flat_map(|r| {
            r.neighbors.iter().enumerate().map(|(i, n)| NeighborRow {
                query: &r.query,
                rank: i + 1,
                token: &n.token,
                id: n.id,
                distance: n.distance,
            })
        })
        .collect();
    #[derive(Serialize)]
    struct Out<'a> {
        checkpoint_config: Fingerprint,
        reports: &'a [NeighborReport],
    }
    emit_report(&a.output, &Out { checkpoint_config: m.ckpt.config.fingerprint(), reports: &reports }, &rows)
}

fn read_keywords(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let index = KnowledgeIndex::load(resolve_input(&a.index))?;
    let keywords = read_keywords(&resolve_input(&a.keywords))?;
    let (pruned, report) = ablate_index(&index, &keywords)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    pruned.save(&a.out)?;
    #[derive(Serialize)]
    struct Out<'a> {
        source_index: Fingerprint,
        pruned_index: Fingerprint,
        #[serde(flatten)]
        report: &'a crate::analysis::AblationReport,
    }
    #[derive(Serialize)]
    struct Row<'a> {
        removed_surface: &'a str,
    }
    let rows: Vec<Row> = report.removed_surfaces.iter().map(|s| Row { removed_surface: s }).collect();
    let out = Out { source_index: index.fingerprint(), pruned_index: pruned.fingerprint(), report: &report };
    emit_report(&a.output, &out, &rows)
}

fn probe_data(path: &Path, vocab: &SubwordVocabulary, max_len: usize) -> Result<(Vec<TokenSequence>, Vec<usize>)> {
    let examples: Vec<ProbeExample> = read_jsonl(path)?;
    if examples.is_empty() {
        return Err(Error::InvalidInput(format!("no probe examples in {}", path.display())));
    }
    let seqs = examples.iter().map(|e| tokenize(&e.text, vocab, max_len)).collect();
    Ok((seqs, examples.iter().map(|e| e.label).collect()))
}

fn parse_layers(list: &str, layers: usize) -> Result<Vec<usize>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok((0..layers).collect());
    }
    let set: BTreeSet<usize> = list
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidInput(format!("bad layer {s:?}; use `all` or indices like 0,1")))
        })
        .collect::<Result<_>>()?;
    Ok(set.into_iter().collect())
}

fn probe_cmd(a: ProbeArgs) -> Result<()> {
    let m = load_model_inputs(&a.input)?;
    let task = a.task.to_ascii_lowercase();
    let data = match (&a.data, &m.config) {
        (Some(d), _) => resolve_input(d),
        (None, Some(c)) => match task.as_str() {
            "wc" => c.analysis.probe_wc.clone(),
            "sentlen" | "length" => c.analysis.probe_length.clone(),
            _ => None,
        }
        .ok_or_else(|| Error::InvalidInput(format!("no probe data configured for task {task:?}")))?,
        (None, None) => return Err(Error::InvalidInput("give --data or --config".into())),
    };
    let (seqs, labels) = probe_data(&data, &m.vocab, a.max_len)?;
    let layers = parse_layers(&a.layers, m.ckpt.model.config.text_layers)?;
    let sweep = probe_layers(&m.ckpt.model, &task, &seqs, &labels, &layers, m.ckpt.pad, a.seed)?;
    let control = if a.control {
        let shuffled = shuffled_labels(&labels, a.seed.wrapping_add(1));
        Some(probe_layers(&m.ckpt.model, &task, &seqs, &shuffled, &layers, m.ckpt.pad, a.seed)?)
    } else {
        None
    };
    #[derive(Serialize)]
    struct Out<'a> {
        checkpoint_config: Fingerprint,
        probe: &'a ProbeSweep,
        shuffled_control: Option<&'a ProbeSweep>,
    }
    #[derive(Serialize)]
    struct Row<'a> {
        task: &'a str,
        layer: usize,
        accuracy: f64,
        control_accuracy: Option<f64>,
        train_examples: usize,
        test_examples: usize,
    }
    let rows: Vec<Row> = sweep
        .layers
        .iter()
        .enumerate()
        .map(|(i, r)| Row {
            task: &r.task,
            layer: r.layer,
            accuracy: r.accuracy,
            control_accuracy: control.as_ref().map(|c| c.layers[i].accuracy),
            train_examples: r.train_examples,
            test_examples: r.test_examples,
        })
        .collect();
    let out = Out { checkpoint_config: m.ckpt.config.fingerprint(), probe: &sweep, shuffled_control: control.as_ref() };
    emit_report(&a.output, &out, &rows)
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut it = l.split('\t');
            match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) => Ok((a.trim().to_string(), b.trim().to_string())),
                _ => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected two tab-separated words".into(),
                }),
            }
        })
        .collect()
}

fn synonyms_cmd(a: SynonymsArgs) -> Result<()> {
    let m = load_model_inputs(&a.input)?;
    let pairs_path = match (&a.pairs, &m.config) {
        (Some(p), _) => resolve_input(p),
        (None, Some(c)) => c
            .analysis
            .synonym_pairs
            .clone()
            .ok_or_else(|| Error::InvalidInput("config has no analysis.synonym_pairs".into()))?,
        (None, None) => return Err(Error::InvalidInput("give --pairs or --config".into())),
    };
    let pairs = read_pairs(&pairs_path)?;
    let report = synonym_distance_report(m.ckpt.model.word_embeddings(), &m.vocab, &pairs, a.control, a.seed)?;
    #[derive(Serialize)]
    struct Out<'a> {
        checkpoint_config: Fingerprint,
        #[serde(flatten)]
        report: &'a SynonymReport,
    }
    let out = Out { checkpoint_config: m.ckpt.config.fingerprint(), report: &report };
    emit_report(&a.output, &out, std::slice::from_ref(&report))
}

// ----------------------------------------------------------------------------
// report, synth

#[derive(Serialize)]
struct SummaryRow<'a> {
    strategy: &'a str,
    seeds: usize,
    group: &'a str,
    mean: f64,
    std: f64,
    formatted: String,
}

fn summary_rows(summaries: &[StrategySummary]) -> Vec<SummaryRow<'_>> {
    let mut rows = Vec::new();
    for s in summaries {
        let all = std::iter::once(("all", &s.accuracy)).chain(s.groups.iter().map(|(g, m)| (g.as_str(), m)));
        for (group, m) in all {
            rows.push(SummaryRow {
                strategy: s.strategy.name(),
                seeds: s.seeds.len(),
                group,
                mean: m.mean,
                std: m.std,
                formatted: m.to_string(),
            });
        }
    }
    rows
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let dir = resolve_input(&a.runs);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let reports = paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_slice::<RunReport>(&bytes).map_err(|e| Error::Parse {
                path: p.clone(),
                line: e.line(),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries = summarize(&reports, a.force)?;
    #[derive(Serialize)]
    struct Out<'a> {
        experiments: BTreeSet<Fingerprint>,
        runs: usize,
        strategies: &'a [StrategySummary],
    }
    let out = Out {
        experiments: reports.iter().map(|r| r.experiment_fingerprint).collect(),
        runs: reports.len(),
        strategies: &summaries,
    };
    if let Some(p) = &a.json {
        write_file(p, &json_bytes(&out)?)?;
    }
    if let Some(p) = &a.csv {
        write_file(p, &csv_bytes(&summary_rows(&summaries))?)?;
    }
    emit(None, format_table(&summaries).as_bytes())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        seed: a.seed,
        entities: a.entities.unwrap_or(defaults.entities),
        affected: a.affected.unwrap_or(defaults.affected),
        train_entities: a.train_entities.unwrap_or(defaults.train_entities),
        ..defaults
    };
    let data = generate(&cfg)?;
    data.write(&a.out)?;
    #[derive(Serialize)]
    struct Out<'a> {
        entities: usize,
        triples: usize,
        corpus: usize,
        questions: usize,
        output: &'a Path,
    }
    let out = Out {
        entities: data.entities.len(),
        triples: data.graph.triples().len(),
        corpus: data.corpus.len(),
        questions: data.task.len(),
        output: &a.out,
    };
    emit(None, &json_bytes(&out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_lists() {
        assert_eq!(parse_layers("all", 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_layers("2, 0,2", 3).unwrap(), vec![0, 2]);
        assert!(parse_layers("x", 3).is_err());
    }

    #[test]
    fn csv_rows_have_a_header() {
        #[derive(Serialize)]
        struct R {
            a: u32,
            b: &'static str,
        }
        let bytes = csv_bytes(&[R { a: 1, b: "x,y" }]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "a,b\n1,\"x,y\"\n");
    }
}
