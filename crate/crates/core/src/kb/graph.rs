//! Translational graph embedding for small knowledge graphs.
//!
//! Triples are scored by `-‖h + r - t‖` and trained with a margin ranking loss
//! against one corrupted triple per positive (head or tail replaced uniformly
//! at random). Entity vectors are kept on the unit sphere.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::KnowledgeRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    triples: Vec<(String, String, String)>,
}

impl KnowledgeGraph {
    /// Builds a graph, dropping exact duplicate triples (first occurrence kept).
    pub fn new<I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (String, String, String)>,
    {
        let mut seen = HashSet::new();
        let triples = triples
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect();
        KnowledgeGraph { triples }
    }

    /// Reads `head<TAB>relation<TAB>tail` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut triples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 || parts.iter().any(|p| p.trim().is_empty()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected head<TAB>relation<TAB>tail".to_string(),
                });
            }
            triples.push((
                parts[0].trim().to_string(),
                parts[1].trim().to_string(),
                parts[2].trim().to_string(),
            ));
        }
        Ok(KnowledgeGraph::new(triples))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (h, r, t) in &self.triples {
            out.push_str(&format!("{h}\t{r}\t{t}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn triples(&self) -> &[(String, String, String)] {
        &self.triples
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphEmbedConfig {
    pub dim: usize,
    pub epochs: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GraphEmbedConfig {
    fn default() -> Self {
        GraphEmbedConfig {
            dim: 16,
            epochs: 200,
            margin: 1.0,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphEmbedding {
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub entity_vectors: Vec<Vec<f64>>,
    pub relation_vectors: Vec<Vec<f64>>,
    /// Mean ranking loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl GraphEmbedding {
    pub fn entity(&self, name: &str) -> Option<&[f64]> {
        let i = self.entities.iter().position(|e| e == name)?;
        Some(&self.entity_vectors[i])
    }

    pub fn relation(&self, name: &str) -> Option<&[f64]> {
        let i = self.relations.iter().position(|e| e == name)?;
        Some(&self.relation_vectors[i])
    }

    /// Entity vectors as knowledge records keyed by entity string.
    pub fn records(&self) -> Vec<KnowledgeRecord> {
        self.entities
            .iter()
            .zip(&self.entity_vectors)
            .map(|(e, v)| KnowledgeRecord::new(e.clone(), v.iter().map(|&x| x as f32).collect()))
            .collect()
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Returns `h + r - t` and its norm.
fn residual(h: &[f64], r: &[f64], t: &[f64]) -> (Vec<f64>, f64) {
    let d: Vec<f64> = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t).collect();
    let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    (d, n)
}

pub fn embed_graph(graph: &KnowledgeGraph, config: &GraphEmbedConfig) -> Result<GraphEmbedding> {
    if graph.is_empty() {
        return Err(Error::InvalidInput("knowledge graph has no triples".into()));
    }
    if config.dim == 0 {
        return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
    }
    let dim = config.dim;

    let mut entities = Vec::new();
    let mut relations = Vec::new();
    let mut entity_ids = HashMap::new();
    let mut relation_ids = HashMap::new();
    let intern = |name: &str, ids: &mut HashMap<String, usize>, list: &mut Vec<String>| {
        *ids.entry(name.to_string()).or_insert_with(|| {
            list.push(name.to_string());
            list.len() - 1
        })
    };
    let triples: Vec<(usize, usize, usize)> = graph
        .triples
        .iter()
        .map(|(h, r, t)| {
            (
                intern(h, &mut entity_ids, &mut entities),
                intern(r, &mut relation_ids, &mut relations),
                intern(t, &mut entity_ids, &mut entities),
            )
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 6.0 / (dim as f64).sqrt();
    let init = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-bound..bound)).collect();
                normalize(&mut v);
                v
            })
            .collect()
    };
    let mut ent = init(entities.len(), &mut rng);
    let mut rel = init(relations.len(), &mut rng);

    let n_ent = entities.len();
    let lr = config.learning_rate;
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (h, r, t) = triples[i];
            if n_ent < 2 {
                continue;
            }
            let corrupt_head = rng.gen_bool(0.5);
            let original = if corrupt_head { h } else { t };
            let mut other = rng.gen_range(0..n_ent - 1);
            if other >= original {
                other += 1;
            }
            let (nh, nt) = if corrupt_head { (other, t) } else { (h, other) };

            let (dp, np) = residual(&ent[h], &rel[r], &ent[t]);
            let (dn, nn) = residual(&ent[nh], &rel[r], &ent[nt]);
            let loss = config.margin + np - nn;
            if loss <= 0.0 {
                continue;
            }
            total += loss;

            // d loss / d(h + r - t) for the positive and negative residuals
            let gp: Vec<f64> = if np > 0.0 { dp.iter().map(|x| x / np).collect() } else { vec![0.0; dim] };
            let gn: Vec<f64> = if nn > 0.0 { dn.iter().map(|x| -x / nn).collect() } else { vec![0.0; dim] };

            for k in 0..dim {
                rel[r][k] -= lr * (gp[k] + gn[k]);
                ent[h][k] -= lr * gp[k];
                ent[t][k] += lr * gp[k];
                ent[nh][k] -= lr * gn[k];
                ent[nt][k] += lr * gn[k];
            }
            for e in [h, t, nh, nt] {
                normalize(&mut ent[e]);
            }
        }
        epoch_losses.push(total / triples.len() as f64);
    }

    Ok(GraphEmbedding {
        entities,
        relations,
        entity_vectors: ent,
        relation_vectors: rel,
        epoch_losses,
    })
}
