//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records one forward pass against a borrowed [`ParamStore`];
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! every parameter the pass touched.

use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

/// Learning-rate group a trainable parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Text,
    Image,
    Fusion,
    /// Everything in a single-flow model.
    Joint,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [ParamGroup::Text, ParamGroup::Image, ParamGroup::Fusion, ParamGroup::Joint];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Text => "text",
            ParamGroup::Image => "image",
            ParamGroup::Fusion => "fusion",
            ParamGroup::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Matrix,
    /// Receives weight decay (false for biases and norm gains).
    pub decay: bool,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Matrix, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate param {name}");
        self.params.push(Param {
            name,
            group,
            value,
            decay,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Gather(ParamId, Vec<usize>),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulConst(Var, Matrix),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    MaskedMeanRows(Var, Vec<bool>),
    BceWithLogits(Var, Vec<f64>),
}

struct Node {
    value: Matrix,
    op: Op,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy on a logit.
pub fn bce_with_logit(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Gradients for each parameter of a store, `None` where untouched.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    fn slot(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Matrix {
        self.grads[id.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (id, g) in other.iter() {
            self.slot(id, g.shape()).add_assign(g);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_in_place(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Matrix::sum_sq).sum::<f64>().sqrt()
    }

    /// Rescale so the global L2 norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.value(id).clone();
        self.push(value, Op::Param(id))
    }

    /// Rows `indices` of parameter `id`, as a `len × cols` matrix.
    pub fn gather(&mut self, id: ParamId, indices: &[usize]) -> Var {
        let table = self.store.value(id);
        let mut data = Vec::with_capacity(indices.len() * table.cols());
        for &i in indices {
            data.extend_from_slice(table.row(i));
        }
        let value = Matrix::from_vec(indices.len(), table.cols(), data);
        self.push(value, Op::Gather(id, indices.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b))
    }

    /// Add a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows(), 1, "add_row expects a row vector");
        let mut value = self.value(a).clone();
        assert_eq!(value.cols(), r.cols(), "add_row width");
        let r = r.data().to_vec();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        self.push(value, Op::AddRow(a, row))
    }

    /// Multiply every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        assert_eq!(value.cols(), r.len(), "mul_row width");
        for i in 0..value.rows() {
            for (v, g) in value.row_mut(i).iter_mut().zip(&r) {
                *v *= g;
            }
        }
        self.push(value, Op::MulRow(a, row))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Var {
        let src = self.value(a);
        assert_eq!(src.shape(), mask.shape(), "mul_const shape");
        let data = src.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let value = Matrix::from_vec(src.rows(), src.cols(), data);
        self.push(value, Op::MulConst(a, mask))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        self.push(value, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut value = src.clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Zero-mean unit-variance normalization of each row (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let n = value.cols() as f64;
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        self.push(value, Op::LayerNormRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows(), rows, "concat_cols row count");
            for i in 0..rows {
                value.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
            }
            offset += m.cols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows column count");
            data.extend_from_slice(m.data());
        }
        let rows = data.len() / cols.max(1);
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        let value = Matrix::from_fn(src.rows(), len, |r, c| src.get(r, start + c));
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        let data = src.data()[start * src.cols()..(start + len) * src.cols()].to_vec();
        let value = Matrix::from_vec(len, src.cols(), data);
        self.push(value, Op::SliceRows(a, start))
    }

    /// Mean of the rows where `mask` is true, as a `1 × cols` row.
    pub fn masked_mean_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let src = self.value(a);
        assert_eq!(src.rows(), mask.len(), "mask length");
        let count = mask.iter().filter(|m| **m).count().max(1) as f64;
        let mut out = vec![0.0; src.cols()];
        for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
            for (o, v) in out.iter_mut().zip(src.row(i)) {
                *o += v / count;
            }
        }
        self.push(Matrix::row_vector(out), Op::MaskedMeanRows(a, mask.to_vec()))
    }

    /// Mean binary cross-entropy of `logits` (any shape) against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len(), "bce target count");
        let loss = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| bce_with_logit(z, t))
            .sum::<f64>()
            / targets.len() as f64;
        self.push(Matrix::from_vec(1, 1, vec![loss]), Op::BceWithLogits(logits, targets.to_vec()))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        let mut grads = Gradients::zeros_like(self.store);

        fn acc(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut adj[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(dy) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    grads.slot(*id, dy.shape()).add_assign(&dy);
                }
                Op::Gather(id, rows) => {
                    let shape = self.store.value(*id).shape();
                    let g = grads.slot(*id, shape);
                    for (k, &r) in rows.iter().enumerate() {
                        for (a, b) in g.row_mut(r).iter_mut().zip(dy.row(k)) {
                            *a += b;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let da = dy.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&dy);
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::Transpose(a) => acc(&mut adj, *a, dy.transpose()),
                Op::Add(a, b) => {
                    acc(&mut adj, *a, dy.clone());
                    acc(&mut adj, *b, dy);
                }
                Op::AddRow(a, row) => {
                    let mut dr = vec![0.0; dy.cols()];
                    for i in 0..dy.rows() {
                        for (s, v) in dr.iter_mut().zip(dy.row(i)) {
                            *s += v;
                        }
                    }
                    acc(&mut adj, *row, Matrix::row_vector(dr));
                    acc(&mut adj, *a, dy);
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row).data();
                    let x = self.value(*a);
                    let mut dr = vec![0.0; dy.cols()];
                    let mut da = dy.clone();
                    for i in 0..dy.rows() {
                        for j in 0..dy.cols() {
                            dr[j] += dy.get(i, j) * x.get(i, j);
                            da.set(i, j, dy.get(i, j) * r[j]);
                        }
                    }
                    acc(&mut adj, *row, Matrix::row_vector(dr));
                    acc(&mut adj, *a, da);
                }
                Op::MulConst(a, mask) => {
                    let data = dy.data().iter().zip(mask.data()).map(|(g, m)| g * m).collect();
                    acc(&mut adj, *a, Matrix::from_vec(dy.rows(), dy.cols(), data));
                }
                Op::Scale(a, s) => acc(&mut adj, *a, dy.map(|g| g * s)),
                Op::Tanh(a) => {
                    let y = &node.value;
                    let data = dy.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    acc(&mut adj, *a, Matrix::from_vec(dy.rows(), dy.cols(), data));
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let data = dy.data().iter().zip(x.data()).map(|(g, x)| g * gelu_grad(*x)).collect();
                    acc(&mut adj, *a, Matrix::from_vec(dy.rows(), dy.cols(), data));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = dy.row(i).iter().zip(y.row(i)).map(|(g, y)| g * y).sum();
                        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                            *o = y.get(i, j) * (dy.get(i, j) - dot);
                        }
                    }
                    acc(&mut adj, *a, dx);
                }
                Op::LayerNormRows(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let n = x.cols() as f64;
                    let mut dx = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        let row = x.row(i);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LN_EPS).sqrt();
                        let g = dy.row(i);
                        let mean_g = g.iter().sum::<f64>() / n;
                        let mean_gy = g.iter().zip(y.row(i)).map(|(g, y)| g * y).sum::<f64>() / n;
                        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                            *o = inv * (g[j] - mean_g - y.get(i, j) * mean_gy);
                        }
                    }
                    acc(&mut adj, *a, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let g = Matrix::from_fn(dy.rows(), cols, |r, c| dy.get(r, offset + c));
                        acc(&mut adj, p, g);
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let data = dy.data()[offset * dy.cols()..(offset + rows) * dy.cols()].to_vec();
                        acc(&mut adj, p, Matrix::from_vec(rows, dy.cols(), data));
                        offset += rows;
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut g = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..dy.rows() {
                        g.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                    }
                    acc(&mut adj, *a, g);
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut g = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..dy.rows() {
                        g.row_mut(start + r).copy_from_slice(dy.row(r));
                    }
                    acc(&mut adj, *a, g);
                }
                Op::MaskedMeanRows(a, mask) => {
                    let src = self.value(*a);
                    let count = mask.iter().filter(|m| **m).count().max(1) as f64;
                    let mut g = Matrix::zeros(src.rows(), src.cols());
                    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
                        for (o, d) in g.row_mut(i).iter_mut().zip(dy.data()) {
                            *o = d / count;
                        }
                    }
                    acc(&mut adj, *a, g);
                }
                Op::BceWithLogits(logits, targets) => {
                    let z = self.value(*logits);
                    let scale = dy.get(0, 0) / targets.len() as f64;
                    let data = z
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&z, &t)| scale * (sigmoid(z) - t))
                        .collect();
                    acc(&mut adj, *logits, Matrix::from_vec(z.rows(), z.cols(), data));
                }
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences over every entry of every parameter.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Graph) -> Var) {
        let analytic = {
            let mut g = Graph::new(store);
            let loss = f(&mut g);
            g.backward(loss)
        };
        let eval = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let loss = f(&mut g);
            g.value(loss).get(0, 0)
        };
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        let h = 1e-5;
        for id in ids {
            for k in 0..store.value(id).len() {
                let orig = store.value(id).data()[k];
                store.value_mut(id).data_mut()[k] = orig + h;
                let up = eval(store);
                store.value_mut(id).data_mut()[k] = orig - h;
                let down = eval(store);
                store.value_mut(id).data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.get(id).map(|g| g.data()[k]).unwrap_or(0.0);
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < 1e-5,
                    "{}[{k}]: analytic {a} numeric {numeric}",
                    store.get(id).name
                );
            }
        }
    }

    fn filled(rows: usize, cols: usize, seed: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |r, c| ((r * 7 + c * 3) as f64 * 0.37 + seed).sin())
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut store = ParamStore::new();
        let x = store.add("x", ParamGroup::Fusion, filled(3, 4, 0.1), true);
        let w = store.add("w", ParamGroup::Fusion, filled(4, 4, 0.7), true);
        let b = store.add("b", ParamGroup::Fusion, filled(1, 4, 1.3), false);
        let gain = store.add("gain", ParamGroup::Fusion, filled(1, 4, 2.1), false);
        let table = store.add("table", ParamGroup::Text, filled(5, 4, 0.4), true);
        check(&mut store, |g| {
            let xv = g.param(x);
            let wv = g.param(w);
            let bv = g.param(b);
            let h = g.matmul(xv, wv);
            let h = g.add_row(h, bv);
            let h = g.layer_norm_rows(h);
            let gv = g.param(gain);
            let h = g.mul_row(h, gv);
            let t = g.gelu(h);
            let s = g.softmax_rows(t);
            let tt = g.transpose(s);
            let sq = g.matmul(s, tt);
            let e = g.gather(table, &[0, 3, 3]);
            let both = g.concat_cols(&[sq, e]);
            let left = g.slice_cols(both, 1, 4);
            let th = g.tanh(left);
            let stacked = g.concat_rows(&[th, e]);
            let top = g.slice_rows(stacked, 1, 4);
            let scaled = g.scale(top, 1.7);
            let masked = g.mul_const(scaled, Matrix::from_fn(4, 4, |r, c| ((r + c) % 3) as f64));
            let summed = g.add(masked, scaled);
            let pooled = g.masked_mean_rows(summed, &[true, false, true, true]);
            g.bce_with_logits(pooled, &[1.0, 0.0, 1.0, 0.0])
        });
    }

    #[test]
    fn bce_values() {
        assert!((bce_with_logit(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_with_logit(20.0, 1.0) < 1e-8);
        assert!((bce_with_logit(20.0, 0.0) - 20.0).abs() < 1e-8);
        assert!(bce_with_logit(-800.0, 0.0).is_finite());
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut store = ParamStore::new();
        let p = store.add("p", ParamGroup::Fusion, Matrix::from_vec(1, 2, vec![3.0, 4.0]), true);
        let mut g = Graph::new(&store);
        let v = g.param(p);
        let v = g.scale(v, 10.0);
        let loss = g.masked_mean_rows(v, &[true]);
        let loss = g.slice_cols(loss, 0, 1);
        let mut grads = g.backward(loss);
        assert_eq!(grads.global_norm(), 10.0);
        assert_eq!(grads.clip_global_norm(1.0), 10.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }
}
