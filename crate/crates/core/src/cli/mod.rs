//! Command-line front end: one binary with subcommands for every stage of
//! the pipeline (tokenize, kb, match, train, analyze, report, synth).
//!
//! Artifacts are deterministic for identical inputs and carry no timestamps.
//! Errors map to exit codes through [`crate::error::ErrorCategory::exit_code`]; usage
//! errors exit with 2.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::tokenizer::DEFAULT_MAX_LEN;

pub use config::{resolve_input, AnalysisConfig, PathsConfig, PipelineConfig, DATA_ROOT_VAR};

#[derive(Debug, Parser)]
#[command(name = "kbalign", version, about = "Knowledge-base embedding alignment for small transformer encoders")]
#[command(after_help = "Relative input paths are resolved against $KBALIGN_DATA when it is set.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize text with a WordPiece vocabulary, one JSON object per line.
    Tokenize(TokenizeArgs),
    /// Knowledge-base ingestion, graph embedding and indexing.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Find knowledge-rich expressions in a text file.
    Match(MatchArgs),
    /// Train one or more strategy/seed runs from a pipeline config.
    Train(TrainArgs),
    /// Post-training diagnostics.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Aggregate run reports into mean ± standard deviation per strategy.
    Report(ReportArgs),
    /// Generate the synthetic knowledge-injection dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Text file, one sentence per line. Reads stdin when neither this nor TEXT is given.
    #[arg(long, conflicts_with = "text")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Text to tokenize as a single sentence.
    pub text: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Parse and filter an embedding file or a triple file.
    Ingest(IngestArgs),
    /// Train translational entity embeddings on a triple file.
    EmbedGraph(EmbedGraphArgs),
    /// Build the binary exact-match index from an embedding file.
    BuildIndex(BuildIndexArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Embedding file: label followed by DIM floats per line.
    #[arg(long, conflicts_with = "triples", required_unless_present = "triples", requires = "dim")]
    pub embeddings: Option<PathBuf>,
    /// Triple file: head<TAB>relation<TAB>tail per line.
    #[arg(long)]
    pub triples: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Stopword list; entities whose whole surface is a stopword are dropped.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Keep only embedding labels with this prefix (e.g. `/c/en/`), then strip it.
    #[arg(long, requires = "embeddings")]
    pub keep_prefix: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedGraphArgs {
    #[arg(long)]
    pub triples: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long = "lr", default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Text file, one sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Truncate sentences to this many tokens before matching.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Pipeline config with [paths], [train] and [analysis] sections.
    #[arg(long)]
    pub config: PathBuf,
    /// Strategies to run (baseline, pt, ft, pt+ft); comma separated.
    #[arg(long, value_delimiter = ',')]
    pub strategy: Vec<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Seeds to run; comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    /// Alignment loss variant (squared_l2, smooth_l1, cosine).
    #[arg(long)]
    pub variant: Option<String>,
    /// Train without the visual stream.
    #[arg(long)]
    pub text_only: bool,
    /// Output directory; overrides paths.out.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Nearest neighbors of words in a checkpoint's word-embedding table.
    Neighbors(NeighborsArgs),
    /// Remove index entries containing any keyword and write the pruned index.
    Ablate(AblateArgs),
    /// Linear probes on pooled encoder layers.
    Probe(ProbeArgs),
    /// Distance of related word pairs relative to random pairs.
    Synonyms(SynonymsArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Report file; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelInputArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Vocabulary; defaults to paths.vocab of --config.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Pipeline config supplying default input paths.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NeighborsArgs {
    #[command(flatten)]
    pub input: ModelInputArgs,
    #[arg(long, required = true)]
    pub word: Vec<String>,
    #[arg(short = 'k', default_value_t = 4)]
    pub k: usize,
    /// Distance metric (l2 or cosine).
    #[arg(long, default_value = "l2")]
    pub metric: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Keyword file, one keyword per line.
    #[arg(long)]
    pub keywords: PathBuf,
    /// Pruned index file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub input: ModelInputArgs,
    /// Probe task: wc (word content) or sentlen (sentence length).
    #[arg(long)]
    pub task: String,
    /// Probe data (JSONL of {text, label}); defaults to the matching [analysis] path of --config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `all` or a comma-separated list of layer indices.
    #[arg(long, default_value = "all")]
    pub layers: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also probe with shuffled labels as a chance-level control.
    #[arg(long)]
    pub control: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SynonymsArgs {
    #[command(flatten)]
    pub input: ModelInputArgs,
    /// Tab-separated word pairs; defaults to analysis.synonym_pairs of --config.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Number of random control pairs.
    #[arg(long, default_value_t = 500)]
    pub control: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory of run reports (`*.json`).
    #[arg(long)]
    pub runs: PathBuf,
    /// Aggregate runs even when their experiment fingerprints differ.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub affected: Option<usize>,
    #[arg(long)]
    pub train_entities: Option<usize>,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.category().exit_code()
        }
    }
}
