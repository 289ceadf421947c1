//! Post-training diagnostics over word embeddings, indexes and encoder layers.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeIndex;
use crate::model::Model;
use crate::tensor::{dot, Matrix};
use crate::tokenizer::{SubwordVocabulary, TokenId, TokenSequence};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    L2,
    Cosine,
}

impl std::str::FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "euclidean" => Ok(DistanceMetric::L2),
            "cosine" | "cos" => Ok(DistanceMetric::Cosine),
            other => Err(Error::InvalidInput(format!("unknown metric {other:?}"))),
        }
    }
}

impl DistanceMetric {
    /// L2 distance, or `1 − cos` (zero-norm vectors count as orthogonal).
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            DistanceMetric::Cosine => {
                let na = dot(a, a).sqrt();
                let nb = dot(b, b).sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot(a, b) / (na * nb)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub token: String,
    pub id: TokenId,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub query: String,
    pub metric: DistanceMetric,
    pub neighbors: Vec<Neighbor>,
}

fn word_id(vocab: &SubwordVocabulary, word: &str) -> Result<TokenId> {
    vocab
        .id(word)
        .ok_or_else(|| Error::InvalidInput(format!("{word:?} is not in the vocabulary")))
}

fn check_table(table: &Matrix, vocab: &SubwordVocabulary) -> Result<()> {
    if table.rows != vocab.len() {
        return Err(Error::DimensionMismatch {
            expected: vocab.len(),
            found: table.rows,
            context: "embedding table rows vs vocabulary size".into(),
        });
    }
    Ok(())
}

/// Exact k nearest rows to `word`, excluding the word itself; ties go to the lower id.
pub fn nearest_neighbors(
    table: &Matrix,
    vocab: &SubwordVocabulary,
    word: &str,
    k: usize,
    metric: DistanceMetric,
) -> Result<NeighborReport> {
    check_table(table, vocab)?;
    let q = word_id(vocab, word)?;
    let query = table.row(q as usize);
    let mut all: Vec<(f64, TokenId)> = (0..table.rows as TokenId)
        .filter(|&id| id != q)
        .map(|id| (metric.distance(query, table.row(id as usize)), id))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    Ok(NeighborReport {
        query: word.to_string(),
        metric,
        neighbors: all
            .into_iter()
            .map(|(distance, id)| Neighbor {
                token: vocab.token(id).unwrap_or_default().to_string(),
                id,
                distance,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub keywords: Vec<String>,
    pub removed: usize,
    pub remaining: usize,
    pub removed_surfaces: Vec<String>,
}

/// Drops every entry whose surface contains a keyword as a whole word
/// (case-insensitive). Blank keywords are ignored.
pub fn ablate_index(index: &KnowledgeIndex, keywords: &[String]) -> Result<(KnowledgeIndex, AblationReport)> {
    if keywords.is_empty() {
        return Err(Error::InvalidInput("ablation needs at least one keyword".into()));
    }
    let set: BTreeSet<String> = keywords
        .iter()
        .map(|k| k.trim().to_lowercase())
        .filter(|k| !k.is_empty())
        .collect();
    let hit = |surface: &str| surface.split_whitespace().any(|w| set.contains(&w.to_lowercase()));
    let removed_surfaces: Vec<String> = index
        .entries()
        .iter()
        .filter(|e| hit(&e.surface))
        .map(|e| e.surface.clone())
        .collect();
    let pruned = index.retain(|e| !hit(&e.surface));
    let report = AblationReport {
        keywords: set.into_iter().collect(),
        removed: removed_surfaces.len(),
        remaining: pruned.len(),
        removed_surfaces,
    };
    Ok((pruned, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynonymReport {
    pub pairs: usize,
    pub pair_mean: f64,
    pub control_pairs: usize,
    pub control_mean: f64,
    /// `pair_mean / control_mean`.
    pub ratio: f64,
}

/// Mean L2 distance over the given pairs against the mean over `control`
/// seeded random pairs of distinct words drawn from the same word pool.
pub fn synonym_distance_report(
    table: &Matrix,
    vocab: &SubwordVocabulary,
    pairs: &[(String, String)],
    control: usize,
    seed: u64,
) -> Result<SynonymReport> {
    check_table(table, vocab)?;
    if pairs.is_empty() || control == 0 {
        return Err(Error::InvalidInput("need at least one pair and one control pair".into()));
    }
    let ids = pairs
        .iter()
        .map(|(a, b)| Ok((word_id(vocab, a)?, word_id(vocab, b)?)))
        .collect::<Result<Vec<_>>>()?;
    let dist = |a: TokenId, b: TokenId| DistanceMetric::L2.distance(table.row(a as usize), table.row(b as usize));
    let pair_mean = ids.iter().map(|&(a, b)| dist(a, b)).sum::<f64>() / ids.len() as f64;

    let pool: Vec<TokenId> = ids
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if pool.len() < 2 {
        return Err(Error::Degenerate("control pairs need at least two distinct words".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut control_sum = 0.0;
    for _ in 0..control {
        let a = rng.gen_range(0..pool.len());
        let mut b = rng.gen_range(0..pool.len() - 1);
        if b >= a {
            b += 1;
        }
        control_sum += dist(pool[a], pool[b]);
    }
    let control_mean = control_sum / control as f64;
    if control_mean == 0.0 {
        return Err(Error::Degenerate("random pairs have zero mean distance".into()));
    }
    Ok(SynonymReport {
        pairs: ids.len(),
        pair_mean,
        control_pairs: control,
        control_mean,
        ratio: pair_mean / control_mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: String,
    pub layer: usize,
    pub accuracy: f64,
    pub train_examples: usize,
    pub test_examples: usize,
}

/// Held-out fraction of the probe split.
pub const PROBE_TEST_FRACTION: f64 = 0.2;
pub const PROBE_ITERATIONS: usize = 300;
const PROBE_LEARNING_RATE: f64 = 0.5;
const PROBE_L2: f64 = 1e-4;

/// Multinomial logistic regression on standardized features, full-batch
/// gradient descent with a fixed iteration cap; accuracy on a seeded held-out split.
pub fn probe(task: &str, representations: &[Vec<f64>], labels: &[usize], layer: usize, split_seed: u64) -> Result<ProbeResult> {
    if representations.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: representations.len(),
            found: labels.len(),
            context: "one label per representation".into(),
        });
    }
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::InvalidInput("probing needs at least two classes".into()));
    }
    let k = classes.iter().max().unwrap() + 1;
    let d = representations[0].len();
    if representations.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidInput("representations differ in width".into()));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let n_test = ((labels.len() as f64 * PROBE_TEST_FRACTION).round() as usize).clamp(1, labels.len() - 1);
    let (test, train) = order.split_at(n_test);

    let mut mean = vec![0.0; d];
    for &i in train {
        for (m, x) in mean.iter_mut().zip(&representations[i]) {
            *m += x / train.len() as f64;
        }
    }
    let mut scale = vec![0.0; d];
    for &i in train {
        for ((s, x), m) in scale.iter_mut().zip(&representations[i]).zip(&mean) {
            *s += (x - m) * (x - m) / train.len() as f64;
        }
    }
    let scale: Vec<f64> = scale.iter().map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 0.0 }).collect();
    let features = |i: usize| -> Vec<f64> {
        representations[i]
            .iter()
            .zip(&mean)
            .zip(&scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect()
    };
    let xs: Vec<Vec<f64>> = (0..labels.len()).map(features).collect();

    let mut w = vec![vec![0.0; d]; k];
    let mut b = vec![0.0; k];
    let logits = |w: &[Vec<f64>], b: &[f64], x: &[f64]| -> Vec<f64> { w.iter().zip(b).map(|(wc, bc)| dot(wc, x) + bc).collect() };
    for _ in 0..PROBE_ITERATIONS {
        let mut gw = vec![vec![0.0; d]; k];
        let mut gb = vec![0.0; k];
        for &i in train {
            let z = logits(&w, &b, &xs[i]);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let g = e[c] / s - f64::from(u8::from(c == labels[i]));
                gb[c] += g;
                for (gwc, x) in gw[c].iter_mut().zip(&xs[i]) {
                    *gwc += g * x;
                }
            }
        }
        let n = train.len() as f64;
        for c in 0..k {
            b[c] -= PROBE_LEARNING_RATE * gb[c] / n;
            for (wc, g) in w[c].iter_mut().zip(&gw[c]) {
                *wc -= PROBE_LEARNING_RATE * (g / n + PROBE_L2 * *wc);
            }
        }
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let z = logits(&w, &b, &xs[i]);
            let mut best = 0;
            for c in 1..k {
                if z[c] > z[best] {
                    best = c;
                }
            }
            best == labels[i]
        })
        .count();
    Ok(ProbeResult {
        task: task.to_string(),
        layer,
        accuracy: correct as f64 / test.len() as f64,
        train_examples: train.len(),
        test_examples: test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSweep {
    pub task: String,
    pub layers: Vec<ProbeResult>,
    /// The layer with the highest accuracy (first on ties).
    pub best: ProbeResult,
}

/// Probes the mean-pooled output of each requested text layer.
pub fn probe_layers(
    model: &Model,
    task: &str,
    sentences: &[TokenSequence],
    labels: &[usize],
    layers: &[usize],
    pad: TokenId,
    split_seed: u64,
) -> Result<ProbeSweep> {
    if layers.is_empty() {
        return Err(Error::InvalidInput("no layers to probe".into()));
    }
    if let Some(&bad) = layers.iter().find(|&&l| l >= model.config.text_layers) {
        return Err(Error::OutOfRange { position: bad, len: model.config.text_layers });
    }
    let reps: Vec<Vec<Vec<f64>>> = sentences
        .par_iter()
        .map(|s| {
            let fwd = model.forward(&s.ids, None, pad)?;
            layers.iter().map(|&l| fwd.pooled_layer_representation(l)).collect()
        })
        .collect::<Result<_>>()?;
    let results = layers
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let x: Vec<Vec<f64>> = reps.iter().map(|r| r[j].clone()).collect();
            probe(task, &x, labels, l, split_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = results[0].clone();
    for r in &results[1..] {
        if r.accuracy > best.accuracy {
            best = r.clone();
        }
    }
    Ok(ProbeSweep { task: task.to_string(), layers: results, best })
}

/// Seeded permutation of labels, used as the chance-level control.
pub fn shuffled_labels(labels: &[usize], seed: u64) -> Vec<usize> {
    let mut out = labels.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

/// Unique words of a pair list, in first-seen order.
pub fn pair_words(pairs: &[(String, String)]) -> Vec<String> {
    let mut seen = HashSet::new();
    pairs
        .iter()
        .flat_map(|(a, b)| [a, b])
        .filter(|w| seen.insert(w.as_str()))
        .cloned()
        .collect()
}
