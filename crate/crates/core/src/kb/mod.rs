//! Knowledge-base ingestion: embedding files, triple files, filtering, and
//! the exact-match index over tokenized surface forms.

mod graph;
mod index;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

pub use graph::{embed_graph, GraphEmbedConfig, GraphEmbedding, KnowledgeGraph};
pub use index::{BuildStats, KnowledgeEntry, KnowledgeIndex};

use crate::error::{Error, Result};

/// One row of an embedding file before tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeRecord {
    /// Label as it appears in the file, e.g. `/c/en/healthy_food`.
    pub label: String,
    /// Textual expression: the label with underscores turned into spaces.
    pub surface: String,
    pub vector: Vec<f32>,
}

impl KnowledgeRecord {
    pub fn new(label: impl Into<String>, vector: Vec<f32>) -> Self {
        let label = label.into();
        KnowledgeRecord {
            surface: surface_of(&label),
            label,
            vector,
        }
    }
}

fn surface_of(label: &str) -> String {
    label.replace('_', " ")
}

/// Parses a whitespace-separated embedding file: a label followed by `dim` floats.
///
/// A leading `<count> <dim>` header line, as shipped with Numberbatch and word2vec
/// text files, is skipped.
pub fn ingest_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<Vec<KnowledgeRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, dim).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

pub(crate) fn parse_embeddings(
    text: &str,
    dim: usize,
) -> std::result::Result<Vec<KnowledgeRecord>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let label = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        if i == 0 && values.len() == 1 && label.parse::<u64>().is_ok() && values[0].parse::<u64>().is_ok() {
            let header_dim: usize = values[0].parse().unwrap();
            if header_dim != dim {
                return Err((lineno, format!("header declares dimension {header_dim}, expected {dim}")));
            }
            continue;
        }
        if label.is_empty() {
            return Err((lineno, "empty label".to_string()));
        }
        if values.len() != dim {
            return Err((lineno, format!("expected {dim} values, found {}", values.len())));
        }
        let mut vector = Vec::with_capacity(dim);
        for v in values {
            let x: f32 = v
                .parse()
                .map_err(|_| (lineno, format!("invalid number {v:?}")))?;
            if !x.is_finite() {
                return Err((lineno, format!("non-finite value {v:?}")));
            }
            vector.push(x);
        }
        out.push(KnowledgeRecord::new(label, vector));
    }
    Ok(out)
}

/// Writes records in the embedding file format.
pub fn write_embeddings(path: impl AsRef<Path>, records: &[KnowledgeRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&r.label);
        for x in &r.vector {
            out.push(' ');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a stopword list, one word per line. Blank lines and `#` comments are ignored.
pub fn load_word_list(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect())
}

/// Drops records whose whole surface is a stopword.
///
/// With `keep_prefix`, only records whose raw label starts with the prefix are
/// kept, and the prefix is stripped before the surface is recomputed.
pub fn filter_entries(
    records: Vec<KnowledgeRecord>,
    stopwords: &HashSet<String>,
    keep_prefix: Option<&str>,
) -> Vec<KnowledgeRecord> {
    records
        .into_iter()
        .filter_map(|mut r| {
            if let Some(prefix) = keep_prefix {
                let stripped = r.label.strip_prefix(prefix)?.to_string();
                r.surface = surface_of(&stripped);
                r.label = stripped;
            }
            if r.surface.is_empty() || stopwords.contains(&r.surface.to_lowercase()) {
                None
            } else {
                Some(r)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_underscored_label() {
        let recs = parse_embeddings("healthy_food 0.1 0.2\n", 2).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].surface, "healthy food");
        assert_eq!(recs[0].vector, vec![0.1f32, 0.2]);
    }

    #[test]
    fn wrong_column_count_names_line() {
        let err = parse_embeddings("a 1 2\nb 0.1 0.2 0.3\n", 2).unwrap_err();
        assert_eq!(err.0, 2);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        fs::write(&p, "a 1 2\nb 0.1 0.2 0.3\n").unwrap();
        let msg = ingest_embeddings(&p, 2).unwrap_err().to_string();
        assert!(msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn non_finite_and_empty_label() {
        assert!(parse_embeddings("a NaN 1\n", 2).is_err());
        assert!(parse_embeddings("a inf 1\n", 2).is_err());
        assert!(parse_embeddings(" 1 2\n", 2).is_err());
    }

    #[test]
    fn numberbatch_header_and_width() {
        let dim = 300;
        let mut text = format!("2 {dim}\n");
        for label in ["/c/en/apple", "/c/en/healthy_food"] {
            text.push_str(label);
            for j in 0..dim {
                text.push_str(&format!(" {:.4}", (j as f32) * 0.001 - 0.1));
            }
            text.push('\n');
        }
        let recs = parse_embeddings(&text, dim).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.vector.len() == 300));
        let kept = filter_entries(recs, &HashSet::new(), Some("/c/en/"));
        assert_eq!(kept[1].surface, "healthy food");
    }

    #[test]
    fn stopword_filtering() {
        let recs = vec![
            KnowledgeRecord::new("the", vec![0.0]),
            KnowledgeRecord::new("healthy_food", vec![1.0]),
        ];
        let stop: HashSet<String> = ["the".to_string()].into();
        let out = filter_entries(recs.clone(), &stop, None);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].surface, "healthy food");
        assert_eq!(filter_entries(recs.clone(), &HashSet::new(), None), recs);
    }

    #[test]
    fn prefix_filter_drops_other_languages() {
        let recs = vec![
            KnowledgeRecord::new("/c/en/dog", vec![0.0]),
            KnowledgeRecord::new("/c/fr/chien", vec![1.0]),
        ];
        let out = filter_entries(recs, &HashSet::new(), Some("/c/en/"));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].label, "dog");
    }

    proptest! {
        #[test]
        fn filter_is_set_difference(
            surfaces in prop::collection::vec("[a-d]{1,2}", 0..30),
            stop in prop::collection::hash_set("[a-d]{1,2}", 0..8),
        ) {
            let recs: Vec<_> = surfaces.iter().map(|s| KnowledgeRecord::new(s.clone(), vec![0.0])).collect();
            let out = filter_entries(recs.clone(), &stop, None);
            let expected: Vec<_> = recs.into_iter().filter(|r| !stop.contains(&r.surface)).collect();
            prop_assert!(out.len() <= surfaces.len());
            prop_assert_eq!(out, expected);
        }
    }
}
