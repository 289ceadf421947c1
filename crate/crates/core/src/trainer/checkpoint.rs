//! Versioned binary checkpoint: magic, version, a JSON header, then raw
//! little-endian f64 tensors in the order the header lists them.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Phase, TrainConfig};
use crate::align::ProjectionParams;
use crate::binio::{read_bytes, read_f64, read_magic, read_u32, write_bytes, write_f64, write_u32};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::model::{Model, ModelConfig};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{Matrix, ParamStore};
use crate::tokenizer::TokenId;

const MAGIC: &[u8; 8] = b"KBACKPT\0";
const VERSION: u32 = 1;
const HEADER_LIMIT: u64 = 64 << 20;

/// Everything needed to resume or evaluate a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub projection: ProjectionParams,
    pub optimizer: Optimizer,
    pub projection_optimizer: Optimizer,
    /// Vocabulary the weights were trained with.
    pub vocab: Fingerprint,
    /// Knowledge index the alignment targets came from.
    pub index: Fingerprint,
    pub pad: TokenId,
    /// Answer strings in label order, once fine-tuned.
    pub answers: Vec<String>,
    pub phases: Vec<Phase>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    kind: OptimizerKind,
    learning_rate: f64,
    steps: u64,
    slots: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    config_fingerprint: Fingerprint,
    model: ModelConfig,
    vocab: Fingerprint,
    index: Fingerprint,
    pad: TokenId,
    answers: Vec<String>,
    phases: Vec<Phase>,
    optimizer: OptimizerHeader,
    projection_optimizer: OptimizerHeader,
    tensors: Vec<TensorHeader>,
}

fn optimizer_header(o: &Optimizer) -> OptimizerHeader {
    OptimizerHeader {
        kind: o.kind,
        learning_rate: o.learning_rate,
        steps: o.steps,
        slots: o.first_moment.len(),
    }
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = self.model.params.iter().map(|(n, m)| (format!("model/{n}"), m)).collect();
        out.push(("projection/weight".into(), &self.projection.weight));
        out.push(("projection/bias".into(), &self.projection.bias));
        for (tag, o) in [("optimizer", &self.optimizer), ("projection_optimizer", &self.projection_optimizer)] {
            for (i, m) in o.first_moment.iter().enumerate() {
                out.push((format!("{tag}/m/{i}"), m));
            }
            for (i, m) in o.second_moment.iter().enumerate() {
                out.push((format!("{tag}/v/{i}"), m));
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tensors = self.tensors();
        let header = Header {
            config: self.config.clone(),
            config_fingerprint: self.config.fingerprint(),
            model: self.model.config.clone(),
            vocab: self.vocab,
            index: self.index,
            pad: self.pad,
            answers: self.answers.clone(),
            phases: self.phases.clone(),
            optimizer: optimizer_header(&self.optimizer),
            projection_optimizer: optimizer_header(&self.projection_optimizer),
            tensors: tensors
                .iter()
                .map(|(n, m)| TensorHeader { name: n.clone(), rows: m.rows, cols: m.cols })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> io::Result<()> {
            w.write_all(MAGIC)?;
            write_u32(w, VERSION)?;
            write_bytes(w, &json)?;
            for (_, m) in &tensors {
                for &x in &m.data {
                    write_f64(w, x)?;
                }
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let format_err = |message: String| Error::Format { path: path.to_path_buf(), message };
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        read_magic(&mut r, MAGIC).map_err(|e| format_err(e.to_string()))?;
        let version = read_u32(&mut r).map_err(|e| format_err(e.to_string()))?;
        if version != VERSION {
            return Err(format_err(format!("unsupported checkpoint version {version}")));
        }
        let json = read_bytes(&mut r, HEADER_LIMIT).map_err(|e| format_err(e.to_string()))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| format_err(format!("header: {e}")))?;
        if header.config.fingerprint() != header.config_fingerprint {
            return Err(Error::FingerprintMismatch("checkpoint header config does not match its fingerprint".into()));
        }

        let mut params = ParamStore::new();
        let mut projection_weight = None;
        let mut projection_bias = None;
        let mut moments: [Vec<Vec<Matrix>>; 2] = Default::default();
        let slots = [header.optimizer.slots, header.projection_optimizer.slots];
        for (k, s) in slots.iter().enumerate() {
            moments[k] = vec![Vec::with_capacity(*s), Vec::with_capacity(*s)];
        }
        for t in &header.tensors {
            let len = t.rows.checked_mul(t.cols).ok_or_else(|| format_err(format!("tensor {} too large", t.name)))?;
            let data = read_tensor(&mut r, len).map_err(|e| format_err(format!("tensor {}: {e}", t.name)))?;
            let m = Matrix::from_vec(t.rows, t.cols, data);
            let name = t.name.as_str();
            if let Some(p) = name.strip_prefix("model/") {
                params.insert(p, m);
            } else if name == "projection/weight" {
                projection_weight = Some(m);
            } else if name == "projection/bias" {
                projection_bias = Some(m);
            } else {
                let (slot, rest) = if let Some(rest) = name.strip_prefix("projection_optimizer/") {
                    (1, rest)
                } else if let Some(rest) = name.strip_prefix("optimizer/") {
                    (0, rest)
                } else {
                    return Err(format_err(format!("unknown tensor {name}")));
                };
                let which = match rest.split('/').next() {
                    Some("m") => 0,
                    Some("v") => 1,
                    _ => return Err(format_err(format!("unknown tensor {name}"))),
                };
                moments[slot][which].push(m);
            }
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
            return Err(format_err("trailing bytes after tensors".into()));
        }

        let restore = |h: &OptimizerHeader, m: &mut Vec<Vec<Matrix>>| -> Result<Optimizer> {
            let second = m.pop().unwrap_or_default();
            let first = m.pop().unwrap_or_default();
            if first.len() != h.slots || second.len() != h.slots {
                return Err(format_err("optimizer state does not match its header".into()));
            }
            Ok(Optimizer {
                kind: h.kind,
                learning_rate: h.learning_rate,
                steps: h.steps,
                first_moment: first,
                second_moment: second,
            })
        };
        let optimizer = restore(&header.optimizer, &mut moments[0])?;
        let projection_optimizer = restore(&header.projection_optimizer, &mut moments[1])?;
        let projection = ProjectionParams {
            weight: projection_weight.ok_or_else(|| format_err("missing projection weight".into()))?,
            bias: projection_bias.ok_or_else(|| format_err("missing projection bias".into()))?,
        };
        if params.by_name("emb.word").is_none() {
            return Err(format_err("missing word embeddings".into()));
        }
        if !projection.is_finite() || params.values().iter().any(|m| !m.is_finite()) {
            return Err(format_err("non-finite weights".into()));
        }
        Ok(Checkpoint {
            config: header.config,
            model: Model { config: header.model, params },
            projection,
            optimizer,
            projection_optimizer,
            vocab: header.vocab,
            index: header.index,
            pad: header.pad,
            answers: header.answers,
            phases: header.phases,
        })
    }
}

fn read_tensor(r: &mut impl Read, len: usize) -> io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        out.push(read_f64(r)?);
    }
    Ok(out)
}
