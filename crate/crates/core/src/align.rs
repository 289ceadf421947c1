//! Alignment objective between expression embeddings and knowledge embeddings.
//!
//! An expression embedding is the sum of the word-embedding rows of a matched
//! span. A learned affine projection maps it into the knowledge space, and the
//! loss sums a per-pair distance between projection and target over all pairs
//! in the batch (no averaging).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeIndex;
use crate::matcher::MatchSpan;
use crate::model::fan_in_uniform;
use crate::tensor::{dot, Matrix};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentVariant {
    #[default]
    SquaredL2,
    SmoothL1,
    Cosine,
}

impl std::str::FromStr for AlignmentVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_l2" | "l2" | "mse" => Ok(AlignmentVariant::SquaredL2),
            "smooth_l1" => Ok(AlignmentVariant::SmoothL1),
            "cosine" => Ok(AlignmentVariant::Cosine),
            other => Err(Error::InvalidConfig(format!("unknown alignment variant {other:?}"))),
        }
    }
}

/// Huber threshold for the smooth-L1 variant.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// Affine map from the word-embedding space (`d_e`) to the knowledge space (`d_v`):
/// `c' = c · weight + bias` with `weight` of shape `d_e × d_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl ProjectionParams {
    /// Fan-in scaled uniform weights, zero bias.
    pub fn new(d_model: usize, d_knowledge: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProjectionParams {
            weight: fan_in_uniform(&mut rng, d_model, d_knowledge),
            bias: Matrix::zeros(1, d_knowledge),
        }
    }

    pub fn d_model(&self) -> usize {
        self.weight.rows
    }

    pub fn d_knowledge(&self) -> usize {
        self.weight.cols
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.is_finite()
    }
}

/// Matched expressions with their summed embeddings and knowledge targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentBatch {
    pub spans: Vec<MatchSpan>,
    /// Token ids making up each span; every one of them receives the
    /// span's expression gradient.
    pub tokens: Vec<Vec<TokenId>>,
    pub expressions: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl AlignmentBatch {
    pub fn len(&self) -> usize {
        self.expressions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expressions.is_empty()
    }

    /// Adds every span of one sentence, reading expression rows from `table`.
    pub fn push_sentence(
        &mut self,
        ids: &[TokenId],
        spans: &[MatchSpan],
        table: &Matrix,
        index: &KnowledgeIndex,
    ) -> Result<()> {
        for span in spans {
            if span.end > ids.len() || span.start >= span.end {
                return Err(Error::OutOfRange {
                    position: span.end,
                    len: ids.len(),
                });
            }
            let toks = ids[span.start..span.end].to_vec();
            let rows: Vec<Vec<f64>> = crate::model::embed_tokens(&toks, table)?;
            let c = expression_embedding(&rows, &MatchSpan { start: 0, end: rows.len(), entry: span.entry })?;
            self.spans.push(*span);
            self.tokens.push(toks);
            self.expressions.push(c);
            self.targets.push(index.entry(span.entry).vector.iter().map(|&x| x as f64).collect());
        }
        Ok(())
    }
}

/// Sum of the word vectors covered by `span`.
pub fn expression_embedding(word_vectors: &[Vec<f64>], span: &MatchSpan) -> Result<Vec<f64>> {
    if span.start >= span.end || span.end > word_vectors.len() {
        return Err(Error::OutOfRange {
            position: span.end,
            len: word_vectors.len(),
        });
    }
    let mut sum = word_vectors[span.start].clone();
    for row in &word_vectors[span.start + 1..span.end] {
        if row.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                found: row.len(),
                context: "word vector width".into(),
            });
        }
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v;
        }
    }
    Ok(sum)
}

pub fn project(c: &[f64], params: &ProjectionParams) -> Result<Vec<f64>> {
    if c.len() != params.d_model() {
        return Err(Error::DimensionMismatch {
            expected: params.d_model(),
            found: c.len(),
            context: "expression embedding width".into(),
        });
    }
    let mut out = params.bias.data.clone();
    for (i, &ci) in c.iter().enumerate() {
        for (o, w) in out.iter_mut().zip(params.weight.row(i)) {
            *o += ci * w;
        }
    }
    Ok(out)
}

/// Loss of one (projection, target) pair and its gradient with respect to the projection.
fn pair_loss(projected: &[f64], target: &[f64], variant: AlignmentVariant) -> Result<(f64, Vec<f64>)> {
    if projected.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: projected.len(),
            found: target.len(),
            context: "knowledge embedding width".into(),
        });
    }
    let diff: Vec<f64> = projected.iter().zip(target).map(|(p, t)| p - t).collect();
    match variant {
        AlignmentVariant::SquaredL2 => Ok((dot(&diff, &diff), diff.iter().map(|d| 2.0 * d).collect())),
        AlignmentVariant::SmoothL1 => {
            let mut loss = 0.0;
            let grad = diff
                .iter()
                .map(|&d| {
                    if d.abs() < SMOOTH_L1_BETA {
                        loss += 0.5 * d * d / SMOOTH_L1_BETA;
                        d / SMOOTH_L1_BETA
                    } else {
                        loss += d.abs() - 0.5 * SMOOTH_L1_BETA;
                        d.signum()
                    }
                })
                .collect();
            Ok((loss, grad))
        }
        AlignmentVariant::Cosine => {
            let np = dot(projected, projected).sqrt();
            let nt = dot(target, target).sqrt();
            if np == 0.0 || nt == 0.0 {
                return Err(Error::Degenerate("zero-norm vector under cosine alignment".into()));
            }
            let pt = dot(projected, target);
            let cos = pt / (np * nt);
            let grad = projected
                .iter()
                .zip(target)
                .map(|(p, t)| -(t / (np * nt) - pt * p / (np * np * np * nt)))
                .collect();
            Ok((1.0 - cos, grad))
        }
    }
}

pub fn alignment_loss(batch: &AlignmentBatch, params: &ProjectionParams, variant: AlignmentVariant) -> Result<f64> {
    check_batch(batch)?;
    let mut total = 0.0;
    for (c, v) in batch.expressions.iter().zip(&batch.targets) {
        total += pair_loss(&project(c, params)?, v, variant)?.0;
    }
    Ok(total)
}

fn check_batch(batch: &AlignmentBatch) -> Result<()> {
    if batch.expressions.len() != batch.targets.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.expressions.len(),
            found: batch.targets.len(),
            context: "one target per expression".into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentGradients {
    pub loss: f64,
    pub weight: Matrix,
    pub bias: Matrix,
    /// dL/dc_k per pair; shared by every token of the span.
    pub expressions: Vec<Vec<f64>>,
}

impl AlignmentGradients {
    /// Adds `scale · dL/dc_k` to the table row of every token in each span.
    pub fn accumulate_into_table(&self, batch: &AlignmentBatch, table_grad: &mut Matrix, scale: f64) {
        for (toks, g) in batch.tokens.iter().zip(&self.expressions) {
            for &id in toks {
                for (t, v) in table_grad.row_mut(id as usize).iter_mut().zip(g) {
                    *t += scale * v;
                }
            }
        }
    }

    /// Per-position gradients for a sentence of `len` tokens given the pairs'
    /// spans; positions outside every span get exact zeros.
    pub fn token_gradients(&self, batch: &AlignmentBatch, len: usize) -> Vec<Vec<f64>> {
        let width = self.weight.rows;
        let mut out = vec![vec![0.0; width]; len];
        for (span, g) in batch.spans.iter().zip(&self.expressions) {
            for row in &mut out[span.start..span.end] {
                for (o, v) in row.iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }
}

pub fn alignment_gradients(
    batch: &AlignmentBatch,
    params: &ProjectionParams,
    variant: AlignmentVariant,
) -> Result<AlignmentGradients> {
    check_batch(batch)?;
    let (de, dv) = (params.d_model(), params.d_knowledge());
    let mut grads = AlignmentGradients {
        loss: 0.0,
        weight: Matrix::zeros(de, dv),
        bias: Matrix::zeros(1, dv),
        expressions: Vec::with_capacity(batch.len()),
    };
    for (c, v) in batch.expressions.iter().zip(&batch.targets) {
        let projected = project(c, params)?;
        let (loss, g) = pair_loss(&projected, v, variant)?;
        grads.loss += loss;
        for (b, gi) in grads.bias.data.iter_mut().zip(&g) {
            *b += gi;
        }
        let mut gc = vec![0.0; de];
        for i in 0..de {
            let wrow = params.weight.row(i);
            gc[i] = dot(wrow, &g);
            for (w, gj) in grads.weight.row_mut(i).iter_mut().zip(&g) {
                *w += c[i] * gj;
            }
        }
        grads.expressions.push(gc);
    }
    Ok(grads)
}

/// `L_main + λ · L_align`; with λ = 0 the result is `L_main` exactly.
pub fn combined_loss(main: f64, align: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("alignment weight must be a finite non-negative number, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(main);
    }
    Ok(main + lambda * align)
}
