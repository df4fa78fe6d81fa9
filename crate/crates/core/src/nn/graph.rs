//! Tape-based reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! `Array2<f64>`; anything higher dimensional (images, per-anchor offsets) is
//! flattened row-major and reshaped explicitly. A graph is cheap to build and is
//! thrown away after [`Graph::backward`], so separate threads can run independent
//! forward passes against the same read-only [`ParamStore`].

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written backward rule (rasterizer, transport cost, ...).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient with respect to each input given the output gradient.
    fn backward(
        &self,
        inputs: &[&Array2<f64>],
        output: &Array2<f64>,
        grad: &Array2<f64>,
    ) -> Vec<Option<Array2<f64>>>;
}

/// Fixed sparse linear map over rows: `out[r] = sum_k w_k * input[idx_k]`.
///
/// Covers gathers, bilinear sampling, patch extraction, box filters and
/// cluster pooling.
#[derive(Clone, Debug, Default)]
pub struct SparseRows {
    pub offsets: Vec<usize>,
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
    pub input_rows: usize,
}

impl SparseRows {
    pub fn new(input_rows: usize) -> Self {
        Self {
            offsets: vec![0],
            index: Vec::new(),
            weight: Vec::new(),
            input_rows,
        }
    }

    pub fn push_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I) {
        for (i, w) in entries {
            debug_assert!(i < self.input_rows);
            self.index.push(i);
            self.weight.push(w);
        }
        self.offsets.push(self.index.len());
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Plain row gather.
    pub fn gather(input_rows: usize, rows: &[usize]) -> Self {
        let mut sp = Self::new(input_rows);
        for &r in rows {
            sp.push_row([(r, 1.0)]);
        }
        sp
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let cols = x.ncols();
        let mut out = Array2::zeros((self.rows(), cols));
        for r in 0..self.rows() {
            let mut row = out.row_mut(r);
            for k in self.offsets[r]..self.offsets[r + 1] {
                let w = self.weight[k];
                let src = x.row(self.index[k]);
                row.zip_mut_with(&src, |o, &v| *o += w * v);
            }
        }
        out
    }

    fn apply_transpose(&self, g: &Array2<f64>) -> Array2<f64> {
        let cols = g.ncols();
        let mut out = Array2::zeros((self.input_rows, cols));
        for r in 0..self.rows() {
            let src = g.row(r);
            for k in self.offsets[r]..self.offsets[r + 1] {
                let w = self.weight[k];
                let mut dst = out.row_mut(self.index[k]);
                dst.zip_mut_with(&src, |o, &v| *o += w * v);
            }
        }
        out
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Recip(Var),
    Square(Var),
    Tanh(Var),
    Sigmoid(Var),
    Silu(Var),
    Softplus(Var),
    Sin(Var),
    Cos(Var),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    SumCols(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Arc<Vec<f64>>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Sparse(Var, Arc<SparseRows>),
    GroupSum(Var, usize),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Variance floor used by the row-wise layer norm.
pub const LAYER_NORM_VAR_FLOOR: f64 = 1e-6;

pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<(u64, usize), Var>,
    frozen: Vec<u64>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(1024),
            params: HashMap::new(),
            frozen: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameters of `store` bound after this call are constants: no gradient reaches them.
    pub fn freeze(&mut self, store: &ParamStore) {
        self.frozen.push(store.uid());
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.len(), 1);
        a[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, value: Array2<f64>, op: Op) -> Var {
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, value: Array2<f64>, op: Op) -> Var {
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        self.push(value, op, rg)
    }

    /// A value that gradients are tracked for (used for input gradients in checks).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a parameter; repeated binds of the same parameter share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.uid(), id.index());
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let trainable = !self.frozen.contains(&store.uid());
        let v = self.push(store.get(id).clone(), Op::Leaf, trainable);
        self.params.insert(key, v);
        v
    }

    // ---- elementwise -------------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "{what}: operand shapes differ"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        self.binary(a, b, v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a) * self.value(b);
        self.binary(a, b, v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "div");
        let v = self.value(a) / self.value(b);
        self.binary(a, b, v, Op::Div(a, b))
    }

    /// `a (n×d) + b (1×d)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (_, d) = self.shape(a);
        assert_eq!(self.shape(b), (1, d), "add_row: expected 1×{d}");
        let v = self.value(a) + self.value(b);
        self.binary(a, b, v, Op::AddRow(a, b))
    }

    /// `a (n×d) * b (1×d)` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (_, d) = self.shape(a);
        assert_eq!(self.shape(b), (1, d), "mul_row: expected 1×{d}");
        let v = self.value(a) * self.value(b);
        self.binary(a, b, v, Op::MulRow(a, b))
    }

    /// `a (n×d) * b (n×1)` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        let (n, _) = self.shape(a);
        assert_eq!(self.shape(b), (n, 1), "mul_col: expected {n}×1");
        let v = self.value(a) * self.value(b);
        self.binary(a, b, v, Op::MulCol(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.unary(a, v, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.unary(a, v, Op::AddScalar(a))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(a).mapv(f);
        self.unary(a, v, op)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 / x, Op::Recip(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.map(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.map(a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.map(a, f64::cos, Op::Cos(a))
    }

    // ---- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.shape(a).1,
            self.shape(b).0,
            "matmul: inner dimensions differ"
        );
        let v = self.value(a).dot(self.value(b));
        self.binary(a, b, v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.shape(a).1,
            self.shape(b).1,
            "matmul_nt: column counts differ"
        );
        let v = self.value(a).dot(&self.value(b).t());
        self.binary(a, b, v, Op::MatMulNT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().as_standard_layout().into_owned();
        self.unary(a, v, Op::Transpose(a))
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.unary(a, v, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        self.unary(a, v, Op::MeanAll(a))
    }

    /// Row sums: n×d → n×1.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.unary(a, v, Op::SumRows(a))
    }

    /// Column sums: n×d → 1×d.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.unary(a, v, Op::SumCols(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - m).exp());
            let z: f64 = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.unary(a, v, Op::SoftmaxRows(a))
    }

    /// Row-wise normalisation to zero mean and unit variance (no affine).
    ///
    /// The mean is computed relative to the first element of the row, so rows
    /// with constant entries normalise to exactly zero.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, d) = x.dim();
        let mut out = Array2::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for (r, row) in x.rows().into_iter().enumerate() {
            let shift = row[0];
            let mean = shift + row.iter().map(|&v| v - shift).sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let floored = var < LAYER_NORM_VAR_FLOOR;
            let istd = 1.0 / var.max(LAYER_NORM_VAR_FLOOR).sqrt();
            // sign bit encodes whether the floor was active
            inv_std.push(if floored { -istd } else { istd });
            let mut o = out.row_mut(r);
            for (dst, &v) in o.iter_mut().zip(row.iter()) {
                *dst = (v - mean) * istd;
            }
        }
        self.unary(a, out, Op::LayerNormRows(a, Arc::new(inv_std)))
    }

    // ---- structure ---------------------------------------------------------

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        assert!(start <= end && end <= self.shape(a).1, "slice_cols out of range");
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.unary(a, v, Op::SliceCols(a, start, end))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        assert!(start <= end && end <= self.shape(a).0, "slice_rows out of range");
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.unary(a, v, Op::SliceRows(a, start, end))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape: element count differs");
        let flat: Vec<f64> = x.iter().cloned().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).unwrap();
        self.unary(a, v, Op::Reshape(a))
    }

    pub fn sparse_rows(&mut self, a: Var, map: Arc<SparseRows>) -> Var {
        assert_eq!(
            map.input_rows,
            self.shape(a).0,
            "sparse_rows: input row count differs"
        );
        let v = map.apply(self.value(a));
        self.unary(a, v, Op::Sparse(a, map))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let map = Arc::new(SparseRows::gather(self.shape(a).0, rows));
        self.sparse_rows(a, map)
    }

    /// Sums consecutive groups of `k` rows: (n·k)×d → n×d.
    pub fn group_sum(&mut self, a: Var, k: usize) -> Var {
        let (nk, d) = self.shape(a);
        assert!(k > 0 && nk % k == 0, "group_sum: rows not divisible by group");
        let x = self.value(a);
        let mut v = Array2::zeros((nk / k, d));
        for i in 0..nk / k {
            let mut dst = v.row_mut(i);
            for j in 0..k {
                dst += &x.row(i * k + j);
            }
        }
        self.unary(a, v, Op::GroupSum(a, k))
    }

    pub fn custom(&mut self, inputs: &[Var], output: Array2<f64>, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&p| self.requires_grad(p));
        self.push(output, Op::Custom(inputs.to_vec(), op), rg)
    }

    // ---- composite helpers ---------------------------------------------------

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.mean(sq)
    }

    /// Normalises each row to unit Euclidean length.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let sq = self.square(a);
        let ss = self.sum_rows(sq);
        let ss = self.add_scalar(ss, eps);
        let norm = self.sqrt(ss);
        let inv = self.recip(norm);
        self.mul_col(a, inv)
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params = HashMap::new();
        for (&(uid, idx), &v) in &self.params {
            params.insert((uid, idx), v);
        }
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.dim(), self.nodes[v.0].value.dim(), "gradient shape mismatch");
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if rg(*b) {
                    self.accumulate(grads, *b, -g);
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    self.accumulate(grads, *a, g * val(*b));
                }
                if rg(*b) {
                    self.accumulate(grads, *b, g * val(*a));
                }
            }
            Op::Div(a, b) => {
                if rg(*a) {
                    self.accumulate(grads, *a, g / val(*b));
                }
                if rg(*b) {
                    let mut gb = g * y;
                    Zip::from(&mut gb).and(val(*b)).for_each(|o, &bv| *o = -*o / bv);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if rg(*b) {
                    self.accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, b) => {
                if rg(*a) {
                    self.accumulate(grads, *a, g * val(*b));
                }
                if rg(*b) {
                    let gb = (g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MulCol(a, b) => {
                if rg(*a) {
                    self.accumulate(grads, *a, g * val(*b));
                }
                if rg(*b) {
                    let gb = (g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g * *k),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                if rg(*a) {
                    self.accumulate(grads, *a, g.dot(&val(*b).t()));
                }
                if rg(*b) {
                    self.accumulate(grads, *b, val(*a).t().dot(g));
                }
            }
            Op::MatMulNT(a, b) => {
                if rg(*a) {
                    self.accumulate(grads, *a, g.dot(val(*b)));
                }
                if rg(*b) {
                    self.accumulate(grads, *b, g.t().dot(val(*a)));
                }
            }
            Op::Transpose(a) => {
                self.accumulate(grads, *a, g.t().as_standard_layout().into_owned())
            }
            Op::Exp(a) => self.accumulate(grads, *a, g * y),
            Op::Log(a) => self.accumulate(grads, *a, g / val(*a)),
            Op::Sqrt(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(y).for_each(|o, &s| *o /= 2.0 * s);
                self.accumulate(grads, *a, ga)
            }
            Op::Recip(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(y).for_each(|o, &r| *o *= -r * r);
                self.accumulate(grads, *a, ga)
            }
            Op::Square(a) => self.accumulate(grads, *a, g * val(*a) * 2.0),
            Op::Tanh(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(y).for_each(|o, &t| *o *= 1.0 - t * t);
                self.accumulate(grads, *a, ga)
            }
            Op::Sigmoid(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(y).for_each(|o, &s| *o *= s * (1.0 - s));
                self.accumulate(grads, *a, ga)
            }
            Op::Silu(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(val(*a)).for_each(|o, &x| {
                    let s = sigmoid(x);
                    *o *= s + x * s * (1.0 - s);
                });
                self.accumulate(grads, *a, ga)
            }
            Op::Softplus(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(val(*a)).for_each(|o, &x| *o *= sigmoid(x));
                self.accumulate(grads, *a, ga)
            }
            Op::Sin(a) => self.accumulate(grads, *a, g * &val(*a).mapv(f64::cos)),
            Op::Cos(a) => self.accumulate(grads, *a, g * &val(*a).mapv(|x| -x.sin())),
            Op::SumAll(a) => {
                let k = g[[0, 0]];
                self.accumulate(grads, *a, Array2::from_elem(val(*a).dim(), k));
            }
            Op::MeanAll(a) => {
                let x = val(*a);
                let k = g[[0, 0]] / x.len() as f64;
                self.accumulate(grads, *a, Array2::from_elem(x.dim(), k));
            }
            Op::SumRows(a) => {
                let d = val(*a).ncols();
                let ga = g.broadcast((g.nrows(), d)).unwrap().to_owned();
                self.accumulate(grads, *a, ga)
            }
            Op::SumCols(a) => {
                let n = val(*a).nrows();
                let ga = g.broadcast((n, g.ncols())).unwrap().to_owned();
                self.accumulate(grads, *a, ga)
            }
            Op::SoftmaxRows(a) => {
                let mut ga = g * y;
                for (mut row, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = row.sum();
                    Zip::from(&mut row).and(&yr).for_each(|o, &yv| *o -= yv * dot);
                }
                self.accumulate(grads, *a, ga)
            }
            Op::LayerNormRows(a, inv_std) => {
                let d = y.ncols() as f64;
                let mut ga = Array2::zeros(y.dim());
                for r in 0..y.nrows() {
                    let s = inv_std[r];
                    let floored = s < 0.0;
                    let istd = s.abs();
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let mean_g = gr.sum() / d;
                    let mean_gy = if floored {
                        0.0
                    } else {
                        gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / d
                    };
                    let mut o = ga.row_mut(r);
                    for j in 0..y.ncols() {
                        o[j] = istd * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                self.accumulate(grads, *a, ga)
            }
            Op::SliceCols(a, start, end) => {
                let mut ga = Array2::zeros(val(*a).dim());
                ga.slice_mut(s![.., *start..*end]).assign(g);
                self.accumulate(grads, *a, ga)
            }
            Op::SliceRows(a, start, end) => {
                let mut ga = Array2::zeros(val(*a).dim());
                ga.slice_mut(s![*start..*end, ..]).assign(g);
                self.accumulate(grads, *a, ga)
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    if rg(p) {
                        self.accumulate(grads, p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    if rg(p) {
                        self.accumulate(grads, p, g.slice(s![off..off + h, ..]).to_owned());
                    }
                    off += h;
                }
            }
            Op::Reshape(a) => {
                let dim = val(*a).dim();
                let flat: Vec<f64> = g.iter().cloned().collect();
                self.accumulate(grads, *a, Array2::from_shape_vec(dim, flat).unwrap())
            }
            Op::Sparse(a, map) => self.accumulate(grads, *a, map.apply_transpose(g)),
            Op::GroupSum(a, k) => {
                let (nk, d) = val(*a).dim();
                let mut ga = Array2::zeros((nk, d));
                for r in 0..nk {
                    ga.row_mut(r).assign(&g.row(r / k));
                }
                self.accumulate(grads, *a, ga)
            }
            Op::Custom(inputs, op) => {
                let ins: Vec<&Array2<f64>> = inputs.iter().map(|&v| val(v)).collect();
                let gs = op.backward(&ins, y, g);
                debug_assert_eq!(gs.len(), inputs.len(), "{}: gradient count", op.name());
                for (&v, gv) in inputs.iter().zip(gs) {
                    if let Some(gv) = gv {
                        self.accumulate(grads, v, gv);
                    }
                }
            }
        }
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    params: HashMap<(u64, usize), Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Per-parameter gradients for `store`, indexed by [`ParamId`]. Parameters
    /// that were not bound, or were frozen, get `None`.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Option<Array2<f64>>> {
        (0..store.len())
            .map(|i| {
                self.params
                    .get(&(store.uid(), i))
                    .and_then(|&v| self.grads[v.0].clone())
            })
            .collect()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
