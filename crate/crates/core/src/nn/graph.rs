//! Reverse-mode differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] rather than copied; each parameter maps to
//! a single leaf node per graph, so using a tensor twice (shared weights,
//! both Siamese branches) accumulates into the same gradient.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::params::{ParamGrads, ParamId, ParamStore};
use crate::Scalar;

/// Node handle within one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Array2<T>),
    Param(ParamId),
}

enum Op<T> {
    Input,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<T>, inv_std: Vec<T> },
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Pick(Var, Vec<(usize, usize)>),
    Sum(Var),
    Dropout(Var, Array2<T>),
    ConvMaxPool { chars: Var, weight: Var, bias: Var, n_chars: usize, width: usize, cols: Array2<T>, argmax: Array2<usize> },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients of every node after [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads[v.0].as_ref()
    }
}

const LN_EPS: f64 = 1e-5;

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph { params, nodes: Vec::with_capacity(256), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, T> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a.view(),
            Value::Param(id) => self.params.get(*id).view(),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn input(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(&self.value(b));
        self.push(y, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(&self.value(b).t());
        self.push(y, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = &self.value(a) + &self.value(b);
        self.push(y, Op::Add(a, b))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let y = &self.value(a) + &self.value(row);
        self.push(y, Op::AddRow(a, row))
    }

    /// Adds an `n×1` column to every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        debug_assert_eq!(self.shape(col).1, 1);
        let y = &self.value(a) + &self.value(col);
        self.push(y, Op::AddCol(a, col))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = &self.value(a) * &self.value(b);
        self.push(y, Op::Mul(a, b))
    }

    /// `scale · a + shift`
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Var {
        let y = self.value(a).mapv(|x| x * scale + shift);
        self.push(y, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.affine(a, s, T::zero())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|x| x.max(T::zero()));
        self.push(y, Op::Relu(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(gelu);
        self.push(y, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|x| x.tanh());
        self.push(y, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(sigmoid);
        self.push(y, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut y = self.value(a).to_owned();
        for mut row in y.rows_mut() {
            let m = row.fold(T::neg_infinity(), |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(y, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut y = self.value(a).to_owned();
        for mut row in y.rows_mut() {
            let lse = logsumexp(row.iter().copied());
            row.mapv_inplace(|x| x - lse);
        }
        self.push(y, Op::LogSoftmaxRows(a))
    }

    /// Row-wise layer normalization with `1×n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = T::from_usize_lossy(xv.ncols());
        let eps = T::lit(LN_EPS);
        let mut xhat = xv.to_owned();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.fold(T::zero(), |acc, &v| acc + v * v) / n;
            let is = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let y = &(&xhat * &self.value(gamma)) + &self.value(beta);
        self.push(y, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Row `r` of the result is row `idx[r]` of `table`.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut y = Array2::zeros((idx.len(), t.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            y.row_mut(r).assign(&t.row(i));
        }
        self.push(y, Op::GatherRows(table, idx))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let y = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(y, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let y = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(y, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(y, Op::ConcatCols(parts))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(y, Op::ConcatRows(parts))
    }

    /// Column vector of the selected `(row, col)` elements.
    pub fn pick(&mut self, a: Var, idx: Vec<(usize, usize)>) -> Var {
        let av = self.value(a);
        let y = Array2::from_shape_fn((idx.len(), 1), |(i, _)| av[idx[i]]);
        self.push(y, Op::Pick(a, idx))
    }

    /// Sum of all elements, as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let y = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(y, Op::Sum(a))
    }

    /// Multiplies by a fixed mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, a: Var, mask: Array2<T>) -> Var {
        let y = &self.value(a) * &mask;
        self.push(y, Op::Dropout(a, mask))
    }

    /// Width-`width` 1-D convolution over each token's characters followed by
    /// a max over positions.
    ///
    /// `chars` stacks `n_chars` character rows per token (`n_tok·n_chars × c`),
    /// `weight` is `width·c × f`, `bias` is `1×f`. Output is `n_tok × f`.
    pub fn conv_max_pool(&mut self, chars: Var, weight: Var, bias: Var, n_chars: usize, width: usize) -> Var {
        let xv = self.value(chars);
        let c = xv.ncols();
        let n_tok = xv.nrows() / n_chars;
        let positions = n_chars - width + 1;
        let mut cols = Array2::zeros((n_tok * positions, width * c));
        for t in 0..n_tok {
            for p in 0..positions {
                let mut row = cols.row_mut(t * positions + p);
                for k in 0..width {
                    row.slice_mut(s![k * c..(k + 1) * c]).assign(&xv.row(t * n_chars + p + k));
                }
            }
        }
        let z = &cols.dot(&self.value(weight)) + &self.value(bias);
        let f = z.ncols();
        let mut y = Array2::zeros((n_tok, f));
        let mut argmax = Array2::zeros((n_tok, f));
        for t in 0..n_tok {
            for j in 0..f {
                let (mut best, mut arg) = (z[[t * positions, j]], 0);
                for p in 1..positions {
                    let v = z[[t * positions + p, j]];
                    if v > best {
                        best = v;
                        arg = p;
                    }
                }
                y[[t, j]] = best;
                argmax[[t, j]] = arg;
            }
        }
        self.push(y, Op::ConvMaxPool { chars, weight, bias, n_chars, width, cols, argmax })
    }

    /// Backpropagates `seed` (shaped like `out`) through the tape.
    pub fn backward(&self, out: Var, seed: Array2<T>) -> Gradients<T> {
        assert_eq!(seed.dim(), self.shape(out), "seed shape must match output");
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }

    /// Gradients of the 1×1 node `loss` with respect to every parameter used.
    pub fn param_grads(&self, loss: Var) -> ParamGrads<T> {
        let g = self.backward(loss, Array2::from_elem((1, 1), T::one()));
        self.collect_param_grads(&g)
    }

    pub fn collect_param_grads(&self, g: &Gradients<T>) -> ParamGrads<T> {
        let v = self
            .param_vars
            .iter()
            .map(|pv| pv.and_then(|pv| g.grads[pv.0].clone()))
            .collect();
        ParamGrads::from_vec(v)
    }

    fn backprop_node(&self, i: usize, gy: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let y = || self.value(Var(i));
        match &self.nodes[i].op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                acc(grads, *a, gy.dot(&self.value(*b).t()));
                acc(grads, *b, self.value(*a).t().dot(gy));
            }
            Op::MatMulNT(a, b) => {
                acc(grads, *a, gy.dot(&self.value(*b)));
                acc(grads, *b, gy.t().dot(&self.value(*a)));
            }
            Op::Add(a, b) => {
                acc(grads, *a, gy.clone());
                acc(grads, *b, gy.clone());
            }
            Op::AddRow(a, r) => {
                acc(grads, *a, gy.clone());
                acc(grads, *r, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::AddCol(a, c) => {
                acc(grads, *a, gy.clone());
                acc(grads, *c, gy.sum_axis(Axis(1)).insert_axis(Axis(1)));
            }
            Op::Mul(a, b) => {
                acc(grads, *a, gy * &self.value(*b));
                acc(grads, *b, gy * &self.value(*a));
            }
            Op::Affine(a, s) => {
                let s = *s;
                acc(grads, *a, gy.mapv(|g| g * s));
            }
            Op::Relu(a) => {
                let mut g = gy.clone();
                g.zip_mut_with(&self.value(*a), |g, &x| {
                    if x <= T::zero() {
                        *g = T::zero()
                    }
                });
                acc(grads, *a, g);
            }
            Op::Gelu(a) => {
                let mut g = gy.clone();
                g.zip_mut_with(&self.value(*a), |g, &x| *g *= gelu_grad(x));
                acc(grads, *a, g);
            }
            Op::Tanh(a) => {
                let mut g = gy.clone();
                g.zip_mut_with(&y(), |g, &t| *g *= T::one() - t * t);
                acc(grads, *a, g);
            }
            Op::Sigmoid(a) => {
                let mut g = gy.clone();
                g.zip_mut_with(&y(), |g, &s| *g *= s * (T::one() - s));
                acc(grads, *a, g);
            }
            Op::SoftmaxRows(a) => {
                let yv = y();
                let mut g = gy * &yv;
                for (mut grow, yrow) in g.rows_mut().into_iter().zip(yv.rows()) {
                    let dot = grow.sum();
                    grow.zip_mut_with(&yrow, |gi, &yi| *gi -= yi * dot);
                }
                acc(grads, *a, g);
            }
            Op::LogSoftmaxRows(a) => {
                let yv = y();
                let mut g = gy.clone();
                for (mut grow, yrow) in g.rows_mut().into_iter().zip(yv.rows()) {
                    let total = grow.sum();
                    grow.zip_mut_with(&yrow, |gi, &li| *gi -= li.exp() * total);
                }
                acc(grads, *a, g);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                acc(grads, *beta, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(grads, *gamma, (gy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                let gxhat = gy * &self.value(*gamma);
                let n = T::from_usize_lossy(gy.ncols());
                let mut gx = Array2::zeros(gy.dim());
                for r in 0..gy.nrows() {
                    let gh = gxhat.row(r);
                    let xh = xhat.row(r);
                    let sum_g = gh.sum();
                    let sum_gx = gh.dot(&xh);
                    let k = inv_std[r] / n;
                    let mut out = gx.row_mut(r);
                    for j in 0..gh.len() {
                        out[j] = k * (n * gh[j] - sum_g - xh[j] * sum_gx);
                    }
                }
                acc(grads, *x, gx);
            }
            Op::GatherRows(table, idx) => {
                let mut g = Array2::zeros(self.shape(*table));
                for (r, &t) in idx.iter().enumerate() {
                    let mut row = g.row_mut(t);
                    row += &gy.row(r);
                }
                acc(grads, *table, g);
            }
            Op::SliceCols(a, start) => {
                let mut g = Array2::zeros(self.shape(*a));
                g.slice_mut(s![.., *start..*start + gy.ncols()]).assign(gy);
                acc(grads, *a, g);
            }
            Op::SliceRows(a, start) => {
                let mut g = Array2::zeros(self.shape(*a));
                g.slice_mut(s![*start..*start + gy.nrows(), ..]).assign(gy);
                acc(grads, *a, g);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(grads, p, gy.slice(s![.., off..off + w]).to_owned());
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    acc(grads, p, gy.slice(s![off..off + h, ..]).to_owned());
                    off += h;
                }
            }
            Op::Pick(a, idx) => {
                let mut g = Array2::zeros(self.shape(*a));
                for (k, &rc) in idx.iter().enumerate() {
                    g[rc] += gy[[k, 0]];
                }
                acc(grads, *a, g);
            }
            Op::Sum(a) => {
                acc(grads, *a, Array2::from_elem(self.shape(*a), gy[[0, 0]]));
            }
            Op::Dropout(a, mask) => acc(grads, *a, gy * mask),
            Op::ConvMaxPool { chars, weight, bias, n_chars, width, cols, argmax } => {
                let (n_tok, f) = gy.dim();
                let positions = n_chars - width + 1;
                let mut gz = Array2::zeros((n_tok * positions, f));
                for t in 0..n_tok {
                    for j in 0..f {
                        gz[[t * positions + argmax[[t, j]], j]] = gy[[t, j]];
                    }
                }
                acc(grads, *bias, gy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(grads, *weight, cols.t().dot(&gz));
                let gcols = gz.dot(&self.value(*weight).t());
                let c = self.shape(*chars).1;
                let mut gx = Array2::zeros(self.shape(*chars));
                for t in 0..n_tok {
                    for p in 0..positions {
                        let src = gcols.row(t * positions + p);
                        for k in 0..*width {
                            let mut dst = gx.row_mut(t * n_chars + p + k);
                            dst += &src.slice(s![k * c..(k + 1) * c]);
                        }
                    }
                }
                acc(grads, *chars, gx);
            }
        }
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
    match &mut grads[v.0] {
        Some(a) => *a += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_C: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = T::lit(0.5);
    half * x * (T::one() + (k * (x + T::lit(GELU_C) * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let c = T::lit(GELU_C);
    let half = T::lit(0.5);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::lit(3.0) * c * x * x)
}

/// Numerically stable `ln Σ exp(xᵢ)`; `-∞` for an empty input.
pub fn logsumexp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = xs.clone().fold(T::neg_infinity(), |m, x| m.max(x));
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<T>().ln()
}
