//! Pipeline configuration file and path resolution.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Environment variable naming the data root for relative input paths.
pub const DATA_ROOT_VAR: &str = "KBALIGN_DATA";

/// Resolves a command-line input path. Relative paths are taken from the
/// data root when it is set, and from the working directory otherwise.
pub fn resolve_input(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_ROOT_VAR) {
        Some(root) if !root.is_empty() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub vocab: PathBuf,
    pub index: PathBuf,
    pub corpus: PathBuf,
    pub task: PathBuf,
    /// Directory that receives run reports, checkpoints, and analysis output.
    pub out: PathBuf,
}

/// Optional analyses run right after each training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Tab-separated word pairs for the synonym distance report.
    pub synonym_pairs: Option<PathBuf>,
    pub synonym_controls: usize,
    /// Word-content probe data (JSONL of `{text, label}`).
    pub probe_wc: Option<PathBuf>,
    /// Sentence-length probe data.
    pub probe_length: Option<PathBuf>,
    /// Words whose nearest neighbors are recorded.
    pub neighbors: Vec<String>,
    pub k: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            synonym_pairs: None,
            synonym_controls: 500,
            probe_wc: None,
            probe_length: None,
            neighbors: Vec::new(),
            k: 4,
            seed: 0,
        }
    }
}

impl AnalysisConfig {
    pub fn is_empty(&self) -> bool {
        self.synonym_pairs.is_none() && self.probe_wc.is_none() && self.probe_length.is_none() && self.neighbors.is_empty()
    }
}

/// Contents of a `train --config` file: input paths, the training
/// configuration, and analysis toggles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl PipelineConfig {
    /// Parses `path`. Relative paths inside the file are taken relative to
    /// the file's own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [&mut paths.vocab, &mut paths.index, &mut paths.corpus, &mut paths.task, &mut paths.out] {
            fix(p);
        }
        let a = &mut self.analysis;
        for p in [&mut a.synonym_pairs, &mut a.probe_wc, &mut a.probe_length].into_iter().flatten() {
            fix(p);
        }
    }

    /// Checks the training configuration, that every input exists, and that
    /// the output directory can be created.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let p = &self.paths;
        let a = &self.analysis;
        let inputs = [Some(&p.vocab), Some(&p.index), Some(&p.corpus), Some(&p.task), a.synonym_pairs.as_ref(), a.probe_wc.as_ref(), a.probe_length.as_ref()];
        for path in inputs.into_iter().flatten() {
            if !path.is_file() {
                return Err(Error::InvalidConfig(format!("input {} does not exist", path.display())));
            }
        }
        fs::create_dir_all(&p.out).map_err(|e| Error::io(&p.out, e))?;
        let probe = p.out.join(".write-test");
        fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
        fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))?;
        Ok(())
    }
}
