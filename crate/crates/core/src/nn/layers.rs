//! Parameterized building blocks. Each component owns only [`ParamId`]s and
//! records its forward pass on a caller-supplied [`Graph`].

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::report::{CharEncoding, MAX_CHARS};
use crate::vocab::AdaptiveSoftmaxSpec;
use crate::Scalar;

pub(crate) fn normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| T::lit(dist.sample(rng)))
}

/// Uniform Xavier/Glorot initialization.
pub(crate) fn xavier<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| T::lit(rng.random_range(-a..a)))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(rng, fan_in, fan_out));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Array2::zeros((1, fan_out))));
        Linear { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Array2::ones((1, dim))),
            beta: store.add(format!("{name}.beta"), Array2::zeros((1, dim))),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let (gm, bt) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gm, bt)
    }
}

/// Character-CNN token embedder: character ids → embeddings → per-width
/// convolutions with max-pooling → highway layers → projection to `dim`.
#[derive(Debug, Clone)]
pub struct CharCnn {
    pub char_table: ParamId,
    pub convs: Vec<(usize, ParamId, ParamId)>,
    pub highways: Vec<(Linear, Linear)>,
    pub proj: Linear,
}

impl CharCnn {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        n_char_ids: usize,
        char_dim: usize,
        filters: &[(usize, usize)],
        n_highway: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let char_table = store.add("embed.chars", normal(rng, n_char_ids, char_dim, 1.0));
        let convs = filters
            .iter()
            .map(|&(width, count)| {
                let w = store.add(format!("embed.conv{width}.weight"), xavier(rng, width * char_dim, count));
                let b = store.add(format!("embed.conv{width}.bias"), Array2::zeros((1, count)));
                (width, w, b)
            })
            .collect();
        let total: usize = filters.iter().map(|f| f.1).sum();
        let highways = (0..n_highway)
            .map(|i| {
                let transform = Linear::new(store, &format!("embed.highway{i}.transform"), total, total, true, rng);
                let gate = Linear::new(store, &format!("embed.highway{i}.gate"), total, total, true, rng);
                // start out carrying the input through
                store.get_mut(gate.bias.unwrap()).fill(T::lit(-1.0));
                (transform, gate)
            })
            .collect();
        let proj = Linear::new(store, "embed.proj", total, dim, true, rng);
        CharCnn { char_table, convs, highways, proj }
    }

    /// Embeds each encoding into a `dim`-wide row.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, encodings: &[CharEncoding]) -> Var {
        let idx: Vec<usize> = encodings.iter().flat_map(|e| e.ids().iter().map(|&c| c as usize)).collect();
        let table = g.param(self.char_table);
        let chars = g.gather_rows(table, idx);
        let pooled: Vec<Var> = self
            .convs
            .iter()
            .map(|&(width, w, b)| {
                let (w, b) = (g.param(w), g.param(b));
                g.conv_max_pool(chars, w, b, MAX_CHARS, width)
            })
            .collect();
        let cat = if pooled.len() == 1 { pooled[0] } else { g.concat_cols(pooled) };
        let mut x = g.relu(cat);
        for (transform, gate) in &self.highways {
            let h = transform.forward(g, x);
            let h = g.relu(h);
            let t = gate.forward(g, x);
            let t = g.sigmoid(t);
            // x + t * (h - x)
            let neg_x = g.scale(x, T::lit(-1.0));
            let diff = g.add(h, neg_x);
            let carry = g.mul(t, diff);
            x = g.add(x, carry);
        }
        self.proj.forward(g, x)
    }

    /// Embeds encodings with duplicates computed once; returns one row per
    /// input in input order.
    pub fn forward_dedup<T: Scalar>(&self, g: &mut Graph<T>, encodings: &[CharEncoding]) -> Var {
        let mut unique: Vec<CharEncoding> = Vec::new();
        let mut seen: HashMap<CharEncoding, usize> = HashMap::new();
        let rows: Vec<usize> = encodings
            .iter()
            .map(|e| {
                *seen.entry(*e).or_insert_with(|| {
                    unique.push(*e);
                    unique.len() - 1
                })
            })
            .collect();
        let emb = self.forward(g, &unique);
        if unique.len() == encodings.len() {
            emb
        } else {
            g.gather_rows(emb, rows)
        }
    }
}

/// Post-norm Transformer encoder block.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub qkv: Linear,
    pub out: Linear,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
    pub n_heads: usize,
}

/// Dropout configuration for one forward pass; `None` disables it.
pub struct DropoutCtx<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

pub(crate) fn apply_dropout<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    x: Var,
    ctx: &mut Option<DropoutCtx<'_, R>>,
) -> Var {
    match ctx {
        Some(d) if d.rate > 0.0 => {
            let keep = 1.0 - d.rate;
            let scale = T::lit(1.0 / keep);
            let mask = Array2::from_shape_fn(g.shape(x), |_| {
                if d.rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            });
            g.dropout(x, mask)
        }
        _ => x,
    }
}

impl EncoderLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        n_heads: usize,
        ffn_dim: usize,
        rng: &mut R,
    ) -> Self {
        EncoderLayer {
            qkv: Linear::new(store, &format!("{name}.attn.qkv"), dim, 3 * dim, true, rng),
            out: Linear::new(store, &format!("{name}.attn.out"), dim, dim, true, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            ff1: Linear::new(store, &format!("{name}.ffn.in"), dim, ffn_dim, true, rng),
            ff2: Linear::new(store, &format!("{name}.ffn.out"), ffn_dim, dim, true, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            n_heads,
        }
    }

    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        dropout: &mut Option<DropoutCtx<'_, R>>,
    ) -> Var {
        let dim = g.shape(x).1;
        let dh = dim / self.n_heads;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let qkv = self.qkv.forward(g, x);
        let heads: Vec<Var> = (0..self.n_heads)
            .map(|h| {
                let q = g.slice_cols(qkv, h * dh, (h + 1) * dh);
                let k = g.slice_cols(qkv, dim + h * dh, dim + (h + 1) * dh);
                let v = g.slice_cols(qkv, 2 * dim + h * dh, 2 * dim + (h + 1) * dh);
                let scores = g.matmul_nt(q, k);
                let scores = g.scale(scores, scale);
                let att = g.softmax_rows(scores);
                let att = apply_dropout(g, att, dropout);
                g.matmul(att, v)
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(heads) };
        let attn = self.out.forward(g, cat);
        let attn = apply_dropout(g, attn, dropout);
        let res = g.add(x, attn);
        let x = self.ln1.forward(g, res);

        let h = self.ff1.forward(g, x);
        let h = g.gelu(h);
        let h = self.ff2.forward(g, h);
        let h = apply_dropout(g, h, dropout);
        let res = g.add(x, h);
        self.ln2.forward(g, res)
    }
}

/// Stacked LSTM, gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct LstmStack {
    pub layers: Vec<(ParamId, ParamId, ParamId)>,
    pub dim: usize,
}

/// Hidden and cell state of one LSTM layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmStack {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        n_layers: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|i| {
                let w_ih = store.add(format!("{name}{i}.w_ih"), xavier(rng, dim, 4 * dim));
                let w_hh = store.add(format!("{name}{i}.w_hh"), xavier(rng, dim, 4 * dim));
                let mut b = Array2::zeros((1, 4 * dim));
                b.slice_mut(ndarray::s![.., dim..2 * dim]).fill(T::one());
                let b = store.add(format!("{name}{i}.bias"), b);
                (w_ih, w_hh, b)
            })
            .collect();
        LstmStack { layers, dim }
    }

    /// One timestep over all layers; updates `states` in place and returns
    /// the top layer's hidden state.
    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, input: Var, states: &mut [LstmState]) -> Var {
        let d = self.dim;
        let mut x = input;
        for (&(w_ih, w_hh, b), st) in self.layers.iter().zip(states.iter_mut()) {
            let (w_ih, w_hh, b) = (g.param(w_ih), g.param(w_hh), g.param(b));
            let xi = g.matmul(x, w_ih);
            let hh = g.matmul(st.h, w_hh);
            let z = g.add(xi, hh);
            let z = g.add_row(z, b);
            let i = g.slice_cols(z, 0, d);
            let i = g.sigmoid(i);
            let f = g.slice_cols(z, d, 2 * d);
            let f = g.sigmoid(f);
            let c_hat = g.slice_cols(z, 2 * d, 3 * d);
            let c_hat = g.tanh(c_hat);
            let o = g.slice_cols(z, 3 * d, 4 * d);
            let o = g.sigmoid(o);
            let keep = g.mul(f, st.c);
            let write = g.mul(i, c_hat);
            let c = g.add(keep, write);
            let tc = g.tanh(c);
            let h = g.mul(o, tc);
            *st = LstmState { h, c };
            x = h;
        }
        x
    }
}

/// Frequency-clustered softmax: a head over the most frequent classes plus
/// one gate per tail cluster, each tail scored through a narrower projection.
#[derive(Debug, Clone)]
pub struct AdaptiveSoftmax {
    pub spec: AdaptiveSoftmaxSpec,
    pub head: Linear,
    pub tails: Vec<(ParamId, ParamId)>,
}

impl AdaptiveSoftmax {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        spec: AdaptiveSoftmaxSpec,
        rng: &mut R,
    ) -> Self {
        let head = Linear::new(store, &format!("{name}.head"), dim, spec.head_size() + spec.n_tails(), true, rng);
        let tails = (0..spec.n_tails())
            .map(|i| {
                let (lo, hi) = spec.tail_range(i);
                let td = spec.tail_dim(dim, i);
                let proj = store.add(format!("{name}.tail{i}.proj"), xavier(rng, dim, td));
                let out = store.add(format!("{name}.tail{i}.out"), xavier(rng, td, hi - lo));
                (proj, out)
            })
            .collect();
        AdaptiveSoftmax { spec, head, tails }
    }

    fn tail_log_probs<T: Scalar>(&self, g: &mut Graph<T>, h: Var, i: usize) -> Var {
        let (proj, out) = self.tails[i];
        let (proj, out) = (g.param(proj), g.param(out));
        let p = g.matmul(h, proj);
        let logits = g.matmul(p, out);
        g.log_softmax_rows(logits)
    }

    /// Full `n × size` log-probability matrix.
    pub fn log_probs<T: Scalar>(&self, g: &mut Graph<T>, h: Var) -> Var {
        let c0 = self.spec.head_size();
        let head = self.head.forward(g, h);
        let head = g.log_softmax_rows(head);
        if self.tails.is_empty() {
            return head;
        }
        let mut parts = vec![g.slice_cols(head, 0, c0)];
        for i in 0..self.tails.len() {
            let lp = self.tail_log_probs(g, h, i);
            let gate = g.slice_cols(head, c0 + i, c0 + i + 1);
            parts.push(g.add_col(lp, gate));
        }
        g.concat_cols(parts)
    }

    /// Summed negative log-likelihood of `targets[r]` under row `r` of `h`,
    /// evaluating only the tail clusters that some target falls in.
    pub fn nll<T: Scalar>(&self, g: &mut Graph<T>, h: Var, targets: &[usize]) -> Var {
        debug_assert_eq!(g.shape(h).0, targets.len());
        let c0 = self.spec.head_size();
        let head = self.head.forward(g, h);
        let head = g.log_softmax_rows(head);
        let mut head_picks = Vec::with_capacity(targets.len());
        let mut by_tail: Vec<Vec<usize>> = vec![Vec::new(); self.tails.len()];
        for (r, &t) in targets.iter().enumerate() {
            match self.spec.cluster_of(t) {
                None => head_picks.push((r, t)),
                Some(i) => {
                    head_picks.push((r, c0 + i));
                    by_tail[i].push(r);
                }
            }
        }
        let mut terms = vec![g.pick(head, head_picks)];
        for (i, rows) in by_tail.into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let lo = self.spec.tail_range(i).0;
            let picks: Vec<(usize, usize)> = rows.iter().enumerate().map(|(k, &r)| (k, targets[r] - lo)).collect();
            let hs = g.gather_rows(h, rows);
            let lp = self.tail_log_probs(g, hs, i);
            terms.push(g.pick(lp, picks));
        }
        let all = if terms.len() == 1 { terms[0] } else { g.concat_rows(terms) };
        let total = g.sum(all);
        g.scale(total, T::lit(-1.0))
    }
}
