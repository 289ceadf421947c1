//! Dense row-major matrices and a small reverse-mode tape for the encoder.
//!
//! The tape records each operation with whatever it needs for the backward
//! pass. Parameters are referenced by id rather than copied, and gradients for
//! them accumulate into a [`Gradients`] buffer shaped like the [`ParamStore`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Matrix::from_vec(1, v.len(), v.to_vec())
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t shape");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul shape");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add shape");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Named parameter tensors in a fixed registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    by_name: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        if let Some(&i) = self.by_name.get(&name) {
            self.values[i] = value;
            return ParamId(i);
        }
        let id = self.values.len();
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    /// Panics if `name` is not registered.
    pub fn expect(&self, name: &str) -> ParamId {
        self.id(name).unwrap_or_else(|| panic!("parameter {name} not registered"))
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients(self.values.iter().map(|m| Matrix::zeros(m.rows, m.cols)).collect())
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Matrix>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.0[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|m| m.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Matrix::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Matrix),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    Gather { table: ParamId, ids: Vec<u32> },
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    LayerNorm { x: Var, gamma: Var, xhat: Matrix, inv_std: Vec<f64> },
    Gelu(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ScaledScores { q: Var, k: Var, scale: f64 },
    MaskedSoftmax { x: Var, keep: Vec<bool> },
    MeanRows { x: Var, keep: Vec<bool>, count: usize },
    SelectRows { x: Var, rows: Vec<usize> },
}

struct Node {
    value: Value,
    op: Op,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Var {
        let id = self.params.expect(name);
        self.param(id)
    }

    /// Rows `ids` of a parameter table.
    pub fn gather(&mut self, table: ParamId, ids: &[u32]) -> Var {
        let t = self.params.get(table);
        let mut out = Matrix::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id as usize));
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 × d` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows, 1, "bias must be a row vector");
        let mut out = self.value(x).clone();
        for r in 0..out.rows {
            for (o, v) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += v;
            }
        }
        self.push(out, Op::AddRow(x, bias))
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let g = self.value(gamma);
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let xh = (row[c] - mean) * is;
                xhat.set(r, c, xh);
                out.set(r, c, xh * g.data[c]);
            }
        }
        let scaled = self.push(out, Op::LayerNorm { x, gamma, xhat, inv_std });
        self.add_row(scaled, beta)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = gelu(*v));
        self.push(out, Op::Gelu(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows, len);
        for r in 0..xv.rows {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols].copy_from_slice(pv.row(r));
            }
            offset += pv.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// `scale · q · kᵀ`
    pub fn scaled_scores(&mut self, q: Var, k: Var, scale: f64) -> Var {
        let mut out = self.value(q).matmul_t(self.value(k));
        out.scale(scale);
        self.push(out, Op::ScaledScores { q, k, scale })
    }

    /// Row-wise softmax over the columns flagged in `keep`; other columns get
    /// probability zero. A row with no kept column is all zeros.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.cols, keep.len(), "softmax mask width");
        let mut out = Matrix::zeros(xv.rows, xv.cols);
        for r in 0..xv.rows {
            let row = xv.row(r);
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let orow = out.row_mut(r);
            let mut sum = 0.0;
            for c in 0..row.len() {
                if keep[c] {
                    orow[c] = (row[c] - max).exp();
                    sum += orow[c];
                }
            }
            orow.iter_mut().for_each(|v| *v /= sum);
        }
        self.push(out, Op::MaskedSoftmax { x, keep: keep.to_vec() })
    }

    /// Mean over the rows flagged in `keep`, as a `1 × d` row. Zero if none are kept.
    pub fn mean_rows(&mut self, x: Var, keep: &[bool]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows, keep.len(), "mean mask length");
        let count = keep.iter().filter(|&&k| k).count();
        let mut out = Matrix::zeros(1, xv.cols);
        if count > 0 {
            for r in (0..xv.rows).filter(|&r| keep[r]) {
                for (o, v) in out.data.iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
            out.scale(1.0 / count as f64);
        }
        self.push(out, Op::MeanRows { x, keep: keep.to_vec(), count })
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(rows.len(), xv.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(xv.row(r));
        }
        self.push(out, Op::SelectRows { x, rows: rows.to_vec() })
    }

    /// Backpropagates the given output gradients and returns parameter gradients.
    pub fn backward(&self, seeds: &[(Var, Matrix)]) -> Gradients {
        let mut pgrads = self.params.zero_grads();
        self.backward_into(seeds, &mut pgrads);
        pgrads
    }

    pub fn backward_into(&self, seeds: &[(Var, Matrix)], pgrads: &mut Gradients) {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed gradient shape");
            accumulate(&mut grads, *v, g.clone());
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => pgrads.get_mut(*id).add_assign(&g),
                Op::Gather { table, ids } => {
                    let tg = pgrads.get_mut(*table);
                    for (r, &id) in ids.iter().enumerate() {
                        for (t, v) in tg.row_mut(id as usize).iter_mut().zip(g.row(r)) {
                            *t += v;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(x, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::LayerNorm { x, gamma, xhat, inv_std } => {
                    let gv = self.value(*gamma);
                    let cols = g.cols;
                    let mut gg = Matrix::zeros(1, cols);
                    let mut gx = Matrix::zeros(g.rows, cols);
                    for r in 0..g.rows {
                        let grow = g.row(r);
                        let xh = xhat.row(r);
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            gg.data[c] += grow[c] * xh[c];
                            let d = grow[c] * gv.data[c];
                            mean_d += d;
                            mean_dx += d * xh[c];
                        }
                        mean_d /= cols as f64;
                        mean_dx /= cols as f64;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            let d = grow[c] * gv.data[c];
                            out[c] = inv_std[r] * (d - mean_d - xh[c] * mean_dx);
                        }
                    }
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (d, &v) in gx.data.iter_mut().zip(&xv.data) {
                        *d *= gelu_grad(v);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    for r in 0..g.rows {
                        gx.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::ScaledScores { q, k, scale } => {
                    let mut gq = g.matmul(self.value(*k));
                    gq.scale(*scale);
                    let mut gk = g.t_matmul(self.value(*q));
                    gk.scale(*scale);
                    accumulate(&mut grads, *q, gq);
                    accumulate(&mut grads, *k, gk);
                }
                Op::MaskedSoftmax { x, keep } => {
                    let p = self.value(Var(i));
                    let mut gx = Matrix::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let pr = p.row(r);
                        let gr = g.row(r);
                        let s = dot(pr, gr);
                        let out = gx.row_mut(r);
                        for c in 0..g.cols {
                            if keep[c] {
                                out[c] = pr[c] * (gr[c] - s);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows { x, keep, count } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    if *count > 0 {
                        let inv = 1.0 / *count as f64;
                        for r in (0..xv.rows).filter(|&r| keep[r]) {
                            for (o, v) in gx.row_mut(r).iter_mut().zip(&g.data) {
                                *o = v * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SelectRows { x, rows } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    for (i, &r) in rows.iter().enumerate() {
                        for (o, v) in gx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    #[test]
    fn matmul_variants_agree() {
        let a = filled(3, 4, 1);
        let b = filled(4, 5, 2);
        let c = filled(5, 4, 3);
        let ab = a.matmul(&b);
        for i in 0..3 {
            for j in 0..5 {
                let naive: f64 = (0..4).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((ab.get(i, j) - naive).abs() < 1e-12);
            }
        }
        let act = a.matmul_t(&c);
        let at_b = a.t_matmul(&filled(3, 2, 4));
        assert_eq!(act.shape(), (3, 5));
        assert_eq!(at_b.shape(), (4, 2));
        for i in 0..3 {
            for j in 0..5 {
                let naive: f64 = (0..4).map(|k| a.get(i, k) * c.get(j, k)).sum();
                assert!((act.get(i, j) - naive).abs() < 1e-12);
            }
        }
    }

    /// Central-difference check of a scalar function of one parameter.
    fn check(build: impl Fn(&mut Tape, Var) -> Var, init: Matrix) {
        let mut store = ParamStore::new();
        let id = store.insert("p", init);
        let weights = filled(1, 64, 77);
        let eval = |store: &ParamStore| -> (f64, Gradients) {
            let mut tape = Tape::new(store);
            let p = tape.param(id);
            let out = build(&mut tape, p);
            let ov = tape.value(out).clone();
            let w = Matrix::from_vec(ov.rows, ov.cols, weights.data[..ov.data.len()].to_vec());
            let loss: f64 = dot(&ov.data, &w.data);
            (loss, tape.backward(&[(out, w)]))
        };
        let (_, analytic) = eval(&store);
        let n = store.get(id).data.len();
        for j in 0..n {
            let h = 1e-6;
            let mut plus = store.clone();
            plus.get_mut(id).data[j] += h;
            let mut minus = store.clone();
            minus.get_mut(id).data[j] -= h;
            let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
            let a = analytic.get(id).data[j];
            assert!((a - fd).abs() < 1e-6 * (1.0 + fd.abs()), "coord {j}: analytic {a} vs fd {fd}");
        }
    }

    #[test]
    fn layer_norm_gradient() {
        check(
            |t, p| {
                let g = t.constant(filled(1, 5, 9));
                let b = t.constant(filled(1, 5, 10));
                t.layer_norm(p, g, b)
            },
            filled(3, 5, 11),
        );
    }

    #[test]
    fn softmax_attention_gradient() {
        check(
            |t, p| {
                let k = t.constant(filled(4, 3, 12));
                let s = t.scaled_scores(p, k, 0.7);
                let probs = t.masked_softmax(s, &[true, false, true, true]);
                let v = t.constant(filled(4, 2, 13));
                t.matmul(probs, v)
            },
            filled(2, 3, 14),
        );
    }

    #[test]
    fn pooling_slicing_gelu_gradient() {
        check(
            |t, p| {
                let a = t.slice_cols(p, 1, 2);
                let b = t.slice_cols(p, 0, 1);
                let c = t.concat_cols(&[a, b]);
                let g = t.gelu(c);
                let sel = t.select_rows(g, &[2, 0, 2]);
                t.mean_rows(sel, &[true, false, true])
            },
            filled(3, 4, 15),
        );
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut store = ParamStore::new();
        let id = store.insert("emb", filled(4, 2, 16));
        let mut tape = Tape::new(&store);
        let x = tape.gather(id, &[1, 3, 1]);
        let g = tape.backward(&[(x, Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]))]);
        assert_eq!(g.get(id).row(1), &[6.0, 8.0]);
        assert_eq!(g.get(id).row(3), &[3.0, 4.0]);
        assert_eq!(g.get(id).row(0), &[0.0, 0.0]);
    }

    #[test]
    fn masked_softmax_zeroes_masked_columns() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Matrix::from_vec(1, 3, vec![1.0, 100.0, 1.0]));
        let p = tape.masked_softmax(x, &[true, false, true]);
        assert_eq!(tape.value(p).data, vec![0.5, 0.0, 0.5]);
        let none = tape.masked_softmax(x, &[false, false, false]);
        assert_eq!(tape.value(none).data, vec![0.0; 3]);
    }
}
