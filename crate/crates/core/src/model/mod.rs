//! Desk-scale two-stream transformer encoder.
//!
//! Text tokens go through word + position + segment embeddings and a stack of
//! post-norm self-attention layers. When visual features are supplied and the
//! visual stream is enabled, they are projected to the model width and a stack
//! of cross-attention layers lets the text attend to them. Task heads read the
//! mean of the final text states over non-pad positions.

mod loss;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{binary_cross_entropy, main_loss, softmax_cross_entropy, HeadKind};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::tensor::{Gradients, Matrix, ParamId, ParamStore, Tape, Var};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Word-embedding width.
    pub d_model: usize,
    /// Knowledge-embedding width targeted by the alignment projection.
    pub d_knowledge: usize,
    pub text_layers: usize,
    pub cross_layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_text_len: usize,
    pub visual_dim: usize,
    pub text_only: bool,
    /// Size of the answer classifier; 0 leaves the head out.
    pub num_answers: usize,
    pub binary_head: bool,
    /// Half-width of the uniform distribution for embedding initialization.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 64,
            d_knowledge: 16,
            text_layers: 2,
            cross_layers: 1,
            heads: 2,
            ff_dim: 128,
            max_text_len: 20,
            visual_dim: 8,
            text_only: false,
            num_answers: 0,
            binary_head: false,
            init_scale: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if self.d_model == 0 || self.d_knowledge == 0 || self.ff_dim == 0 {
            return bad("model widths must be positive");
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.text_layers == 0 {
            return bad("text_layers must be positive");
        }
        if self.max_text_len == 0 {
            return bad("max_text_len must be at least 1");
        }
        if !self.text_only && self.cross_layers > 0 && self.visual_dim == 0 {
            return bad("visual_dim must be positive when the visual stream is enabled");
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return bad("init_scale must be positive");
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::builder()
            .str("model-config")
            .bytes(&serde_json::to_vec(self).expect("config serializes"))
            .finish()
    }

    fn uses_visual(&self) -> bool {
        !self.text_only && self.cross_layers > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect())
}

fn ones(cols: usize) -> Matrix {
    Matrix::from_vec(1, cols, vec![1.0; cols])
}

/// Symmetric uniform initialization scaled by fan-in.
pub(crate) fn fan_in_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    uniform(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let s = config.init_scale;
        let mut p = ParamStore::new();

        p.insert("emb.word", uniform(&mut rng, config.vocab_size, d, s));
        p.insert("emb.pos", uniform(&mut rng, config.max_text_len, d, s));
        p.insert("emb.seg", uniform(&mut rng, 1, d, s));
        p.insert("emb.ln.g", ones(d));
        p.insert("emb.ln.b", Matrix::zeros(1, d));

        let block = |p: &mut ParamStore, prefix: &str, rng: &mut ChaCha8Rng| {
            for w in ["wq", "wk", "wv", "wo"] {
                p.insert(format!("{prefix}.attn.{w}"), fan_in_uniform(rng, d, d));
                p.insert(format!("{prefix}.attn.b{}", &w[1..]), Matrix::zeros(1, d));
            }
            p.insert(format!("{prefix}.ln1.g"), ones(d));
            p.insert(format!("{prefix}.ln1.b"), Matrix::zeros(1, d));
            p.insert(format!("{prefix}.ff.w1"), fan_in_uniform(rng, d, config.ff_dim));
            p.insert(format!("{prefix}.ff.b1"), Matrix::zeros(1, config.ff_dim));
            p.insert(format!("{prefix}.ff.w2"), fan_in_uniform(rng, config.ff_dim, d));
            p.insert(format!("{prefix}.ff.b2"), Matrix::zeros(1, d));
            p.insert(format!("{prefix}.ln2.g"), ones(d));
            p.insert(format!("{prefix}.ln2.b"), Matrix::zeros(1, d));
        };
        for l in 0..config.text_layers {
            block(&mut p, &format!("text.{l}"), &mut rng);
        }
        if config.uses_visual() {
            p.insert("vis.proj.w", fan_in_uniform(&mut rng, config.visual_dim, d));
            p.insert("vis.proj.b", Matrix::zeros(1, d));
            p.insert("vis.ln.g", ones(d));
            p.insert("vis.ln.b", Matrix::zeros(1, d));
            for l in 0..config.cross_layers {
                block(&mut p, &format!("cross.{l}"), &mut rng);
            }
        }

        p.insert("head.mlm.w", fan_in_uniform(&mut rng, d, config.vocab_size));
        p.insert("head.mlm.b", Matrix::zeros(1, config.vocab_size));
        let mut model = Model { config, params: p };
        if model.config.num_answers > 0 {
            model.reset_answer_head(model.config.num_answers, seed);
        }
        if model.config.binary_head {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a7);
            model.params.insert("head.bin.w", fan_in_uniform(&mut rng, d, 1));
            model.params.insert("head.bin.b", Matrix::zeros(1, 1));
        }
        Ok(model)
    }

    /// (Re)creates the answer classifier with `k` outputs, seeded independently
    /// of the encoder.
    pub fn reset_answer_head(&mut self, k: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a55);
        self.config.num_answers = k;
        self.params.insert("head.cls.w", fan_in_uniform(&mut rng, self.config.d_model, k));
        self.params.insert("head.cls.b", Matrix::zeros(1, k));
    }

    pub fn ensure_binary_head(&mut self, seed: u64) {
        if self.params.id("head.bin.w").is_none() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a7);
            self.params.insert("head.bin.w", fan_in_uniform(&mut rng, self.config.d_model, 1));
            self.params.insert("head.bin.b", Matrix::zeros(1, 1));
        }
        self.config.binary_head = true;
    }

    pub fn word_embeddings(&self) -> &Matrix {
        self.params.by_name("emb.word").expect("word table")
    }

    pub fn word_embedding_id(&self) -> ParamId {
        self.params.expect("emb.word")
    }

    /// Rows of the word-embedding table for `ids`, before positions are added.
    pub fn embed_tokens(&self, ids: &[TokenId]) -> Result<Vec<Vec<f64>>> {
        embed_tokens(ids, self.word_embeddings())
    }

    /// Runs the encoder and records it on a fresh tape.
    pub fn forward<'a>(&'a self, ids: &[TokenId], visual: Option<&Matrix>, pad: TokenId) -> Result<Forward<'a>> {
        let cfg = &self.config;
        if ids.len() > cfg.max_text_len {
            return Err(Error::DimensionMismatch {
                expected: cfg.max_text_len,
                found: ids.len(),
                context: "text length exceeds max_text_len".into(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::IdOutOfRange {
                id: bad,
                size: cfg.vocab_size,
            });
        }
        if let Some(v) = visual {
            if v.cols != cfg.visual_dim {
                return Err(Error::DimensionMismatch {
                    expected: cfg.visual_dim,
                    found: v.cols,
                    context: "visual feature width".into(),
                });
            }
        }

        let p = &self.params;
        let mut t = Tape::new(p);
        let keep: Vec<bool> = ids.iter().map(|&id| id != pad).collect();
        let n = ids.len();

        let positions: Vec<u32> = (0..n as u32).collect();
        let words = t.gather(p.expect("emb.word"), ids);
        let pos = t.gather(p.expect("emb.pos"), &positions);
        let seg = t.gather(p.expect("emb.seg"), &vec![0; n]);
        let x = t.add(words, pos);
        let x = t.add(x, seg);
        let g = t.param_named("emb.ln.g");
        let b = t.param_named("emb.ln.b");
        let mut h = t.layer_norm(x, g, b);

        let mut layers = Vec::with_capacity(cfg.text_layers);
        for l in 0..cfg.text_layers {
            h = self.block(&mut t, &format!("text.{l}"), h, h, &keep);
            layers.push(h);
        }

        if let Some(v) = visual.filter(|v| cfg.uses_visual() && v.rows > 0) {
            let feats = t.constant(v.clone());
            let w = t.param_named("vis.proj.w");
            let bv = t.param_named("vis.proj.b");
            let proj = t.linear(feats, w, bv);
            let g = t.param_named("vis.ln.g");
            let b = t.param_named("vis.ln.b");
            let vis = t.layer_norm(proj, g, b);
            let all = vec![true; v.rows];
            for l in 0..cfg.cross_layers {
                h = self.block(&mut t, &format!("cross.{l}"), h, vis, &all);
            }
        }

        let pooled = t.mean_rows(h, &keep);
        Ok(Forward {
            tape: t,
            layers,
            last: h,
            pooled,
            keep,
        })
    }

    /// Summed masked-token cross-entropy at `positions`, with parameter gradients.
    pub fn mlm_loss(
        &self,
        ids: &[TokenId],
        visual: Option<&Matrix>,
        pad: TokenId,
        positions: &[usize],
        targets: &[usize],
    ) -> Result<(f64, Gradients)> {
        let mut fwd = self.forward(ids, visual, pad)?;
        if positions.is_empty() {
            return Ok((0.0, self.params.zero_grads()));
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= ids.len()) {
            return Err(Error::OutOfRange { position: p, len: ids.len() });
        }
        let logits = fwd.mlm_logits(positions);
        let (loss, g) = softmax_cross_entropy(fwd.tape.value(logits), targets)?;
        Ok((loss, fwd.tape.backward(&[(logits, g)])))
    }

    /// Cross-entropy of the answer classifier for one example.
    pub fn answer_loss(&self, ids: &[TokenId], visual: Option<&Matrix>, pad: TokenId, label: usize) -> Result<(f64, Gradients)> {
        let mut fwd = self.forward(ids, visual, pad)?;
        let logits = fwd.answer_logits();
        let (loss, g) = softmax_cross_entropy(fwd.tape.value(logits), &[label])?;
        Ok((loss, fwd.tape.backward(&[(logits, g)])))
    }

    /// Binary cross-entropy of the binary head for one example.
    pub fn binary_loss(&self, ids: &[TokenId], visual: Option<&Matrix>, pad: TokenId, label: usize) -> Result<(f64, Gradients)> {
        let mut fwd = self.forward(ids, visual, pad)?;
        let logit = fwd.binary_logit();
        let (loss, g) = binary_cross_entropy(fwd.tape.value(logit), &[label])?;
        Ok((loss, fwd.tape.backward(&[(logit, g)])))
    }

    /// Attention (queries from `q_src`, keys/values from `kv_src`) + FFN, each
    /// with a residual connection and post-norm.
    fn block(&self, t: &mut Tape, prefix: &str, q_src: Var, kv_src: Var, key_keep: &[bool]) -> Var {
        let d = self.config.d_model;
        let heads = self.config.heads;
        let hd = d / heads;
        let w = |t: &mut Tape, name: &str| t.param_named(&format!("{prefix}.{name}"));

        let (wq, bq) = (w(t, "attn.wq"), w(t, "attn.bq"));
        let (wk, bk) = (w(t, "attn.wk"), w(t, "attn.bk"));
        let (wv, bv) = (w(t, "attn.wv"), w(t, "attn.bv"));
        let q = t.linear(q_src, wq, bq);
        let k = t.linear(kv_src, wk, bk);
        let v = t.linear(kv_src, wv, bv);
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for hi in 0..heads {
            let qh = t.slice_cols(q, hi * hd, hd);
            let kh = t.slice_cols(k, hi * hd, hd);
            let vh = t.slice_cols(v, hi * hd, hd);
            let scores = t.scaled_scores(qh, kh, scale);
            let probs = t.masked_softmax(scores, key_keep);
            outs.push(t.matmul(probs, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { t.concat_cols(&outs) };
        let (wo, bo) = (w(t, "attn.wo"), w(t, "attn.bo"));
        let attn = t.linear(cat, wo, bo);
        let res = t.add(q_src, attn);
        let (g1, b1) = (w(t, "ln1.g"), w(t, "ln1.b"));
        let h = t.layer_norm(res, g1, b1);

        let (w1, fb1) = (w(t, "ff.w1"), w(t, "ff.b1"));
        let (w2, fb2) = (w(t, "ff.w2"), w(t, "ff.b2"));
        let f = t.linear(h, w1, fb1);
        let f = t.gelu(f);
        let f = t.linear(f, w2, fb2);
        let res = t.add(h, f);
        let (g2, b2) = (w(t, "ln2.g"), w(t, "ln2.b"));
        t.layer_norm(res, g2, b2)
    }
}

/// Row lookup in a word-embedding table.
pub fn embed_tokens(ids: &[TokenId], table: &Matrix) -> Result<Vec<Vec<f64>>> {
    ids.iter()
        .map(|&id| {
            if (id as usize) < table.rows {
                Ok(table.row(id as usize).to_vec())
            } else {
                Err(Error::IdOutOfRange { id, size: table.rows })
            }
        })
        .collect()
}

/// A recorded forward pass.
pub struct Forward<'a> {
    pub tape: Tape<'a>,
    /// Output of each text self-attention layer.
    pub layers: Vec<Var>,
    /// Final text states (after cross-attention when used).
    pub last: Var,
    /// Mean of `last` over non-pad positions.
    pub pooled: Var,
    pub keep: Vec<bool>,
}

impl Forward<'_> {
    pub fn pooled_output(&self) -> &[f64] {
        &self.tape.value(self.pooled).data
    }

    /// Mean over non-pad positions of one text layer's output.
    pub fn pooled_layer_representation(&self, layer: usize) -> Result<Vec<f64>> {
        let &var = self.layers.get(layer).ok_or(Error::OutOfRange {
            position: layer,
            len: self.layers.len(),
        })?;
        let h = self.tape.value(var);
        let count = self.keep.iter().filter(|&&k| k).count();
        let mut out = vec![0.0; h.cols];
        if count == 0 {
            return Ok(out);
        }
        for r in (0..h.rows).filter(|&r| self.keep[r]) {
            for (o, v) in out.iter_mut().zip(h.row(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= count as f64);
        Ok(out)
    }

    /// Vocabulary logits at the given positions.
    pub fn mlm_logits(&mut self, positions: &[usize]) -> Var {
        let t = &mut self.tape;
        let sel = t.select_rows(self.last, positions);
        let w = t.param_named("head.mlm.w");
        let b = t.param_named("head.mlm.b");
        t.linear(sel, w, b)
    }

    /// `1 × K` answer logits from the pooled output.
    pub fn answer_logits(&mut self) -> Var {
        let t = &mut self.tape;
        let w = t.param_named("head.cls.w");
        let b = t.param_named("head.cls.b");
        t.linear(self.pooled, w, b)
    }

    /// `1 × 1` binary logit from the pooled output.
    pub fn binary_logit(&mut self) -> Var {
        let t = &mut self.tape;
        let w = t.param_named("head.bin.w");
        let b = t.param_named("head.bin.b");
        t.linear(self.pooled, w, b)
    }
}

#[cfg(test)]
mod tests;
