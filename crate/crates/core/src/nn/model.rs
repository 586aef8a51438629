use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::layers::{
    apply_dropout, normal, AdaptiveSoftmax, CharCnn, DropoutCtx, EncoderLayer, LayerNorm, Linear,
    LstmStack, LstmState,
};
use super::params::ParamStore;
use super::NnError;
use crate::report::{
    char_vocab_size, encode_token_chars, CharEncoding, TokenEntry, TokenizedReport, DEFAULT_SLOT_LEN,
    MAX_CHARS,
};
use crate::vocab::{make_adaptive_spec, AdaptiveSoftmaxSpec, Vocab, CLASS_EOS, DEFAULT_CUTOFF_FRACTIONS};
use crate::Scalar;

/// Filter counts for widths 1..=7 at a 2048-wide concatenation.
const BASE_FILTERS: [usize; 7] = [32, 32, 64, 128, 256, 512, 1024];

/// Character-CNN filters scaled so the concatenated width is about `2·dim`
/// (never below `dim`), each width keeping at least one filter.
pub fn default_filters(dim: usize) -> Vec<(usize, usize)> {
    let total: usize = BASE_FILTERS.iter().sum();
    let mut filters: Vec<(usize, usize)> = BASE_FILTERS
        .iter()
        .enumerate()
        .map(|(i, &n)| (i + 1, (n * 2 * dim / total).max(1)))
        .collect();
    let sum: usize = filters.iter().map(|f| f.1).sum();
    if sum < dim {
        filters.last_mut().unwrap().1 += dim - sum;
    }
    filters
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Roster size `A`.
    pub n_avs: usize,
    /// Slot width `L`.
    pub slot_len: usize,
    /// Hidden size `D`.
    pub dim: usize,
    pub n_enc_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub n_dec_layers: usize,
    pub char_dim: usize,
    /// `(width, count)` per convolution.
    pub filters: Vec<(usize, usize)>,
    pub n_highway: usize,
    pub max_chars: usize,
    /// Output layout over `V + 2` classes (vocab plus EOS and BEN).
    pub adaptive: AdaptiveSoftmaxSpec,
    pub dropout: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: `D = 64`, four encoder layers, eight heads,
    /// four decoder layers.
    pub fn desk(n_avs: usize, n_classes: usize) -> Self {
        Self::with_dim(n_avs, n_classes, 64)
    }

    pub fn with_dim(n_avs: usize, n_classes: usize, dim: usize) -> Self {
        ModelConfig {
            n_avs,
            slot_len: DEFAULT_SLOT_LEN,
            dim,
            n_enc_layers: 4,
            n_heads: if dim % 8 == 0 { 8 } else { 1 },
            ffn_dim: 4 * dim,
            n_dec_layers: 4,
            char_dim: 16,
            filters: default_filters(dim),
            n_highway: 2,
            max_chars: MAX_CHARS,
            adaptive: make_adaptive_spec(n_classes, &DEFAULT_CUTOFF_FRACTIONS).expect("default fractions are valid"),
            dropout: 0.0,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.n_avs * self.slot_len + 1
    }

    pub fn n_classes(&self) -> usize {
        self.adaptive.size
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.n_avs == 0 || self.dim == 0 || self.n_heads == 0 || self.n_dec_layers == 0 {
            return bad("n_avs, dim, n_heads and n_dec_layers must be positive".into());
        }
        if self.dim % self.n_heads != 0 {
            return bad(format!("dim {} not divisible by n_heads {}", self.dim, self.n_heads));
        }
        let total: usize = self.filters.iter().map(|f| f.1).sum();
        if total < self.dim {
            return bad(format!("filter counts sum to {total}, below dim {}", self.dim));
        }
        if self.max_chars != MAX_CHARS {
            return bad(format!("max_chars must be {MAX_CHARS}"));
        }
        if self.filters.iter().any(|&(w, n)| w == 0 || w > MAX_CHARS || n == 0) {
            return bad("filter widths must lie in 1..=22 with a positive count".into());
        }
        if self.slot_len < 3 {
            return bad("slot_len must be at least 3".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        self.adaptive.validate().map_err(|e| NnError::Config(e.to_string()))
    }
}

/// Component handles of the full network.
#[derive(Debug, Clone)]
pub struct Modules {
    pub embed: CharCnn,
    pub position: super::ParamId,
    pub segment: super::ParamId,
    pub embed_ln: LayerNorm,
    pub encoder: Vec<EncoderLayer>,
    pub mtp_head: Linear,
    pub dec_init: Linear,
    pub decoder: LstmStack,
    pub dec_head: Linear,
    pub output: AdaptiveSoftmax,
}

/// Hidden states of one encoded report.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `1×D` state at `<CLS>`.
    pub cls: Var,
    /// `A·L × D` states of the slot positions.
    pub tokens: Var,
}

/// How the label decoder chooses its next input.
#[derive(Debug, Clone, Copy)]
pub enum DecodeMode<'a> {
    /// Feed the gold token; the loss covers every target step.
    TeacherForced(&'a [usize]),
    /// Feed the argmax token but score the gold sequence.
    Guided(&'a [usize]),
    /// Feed the argmax token until EOS or `L` steps.
    Free,
}

pub struct DecodeOutput {
    /// Summed target NLL (`None` in free mode).
    pub loss: Option<Var>,
    /// Argmax class per executed step.
    pub predicted: Vec<usize>,
}

/// Parameters plus the output-class table needed to feed predictions back.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub modules: Modules,
    vocab: Vocab,
    class_chars: Vec<CharEncoding>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        if config.n_classes() != vocab.n_classes() {
            return Err(NnError::Config(format!(
                "adaptive softmax covers {} classes but vocab has {}",
                config.n_classes(),
                vocab.n_classes()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let embed = CharCnn::new(
            &mut store,
            char_vocab_size(config.n_avs),
            config.char_dim,
            &config.filters,
            config.n_highway,
            d,
            &mut rng,
        );
        let position = store.add("embed.position", normal(&mut rng, config.seq_len(), d, 0.02));
        let segment = store.add("embed.segment", normal(&mut rng, config.n_avs + 1, d, 0.02));
        let embed_ln = LayerNorm::new(&mut store, "embed.ln", d);
        let encoder = (0..config.n_enc_layers)
            .map(|i| EncoderLayer::new(&mut store, &format!("encoder{i}"), d, config.n_heads, config.ffn_dim, &mut rng))
            .collect();
        let mtp_head = Linear::new(&mut store, "mtp.hidden", d, d, true, &mut rng);
        let dec_init = Linear::new(&mut store, "decoder.init", d, d * config.n_dec_layers, true, &mut rng);
        let decoder = LstmStack::new(&mut store, "decoder.lstm", d, config.n_dec_layers, &mut rng);
        let dec_head = Linear::new(&mut store, "decoder.hidden", d, d, true, &mut rng);
        let output = AdaptiveSoftmax::new(&mut store, "output", d, config.adaptive.clone(), &mut rng);
        let modules = Modules {
            embed,
            position,
            segment,
            embed_ln,
            encoder,
            mtp_head,
            dec_init,
            decoder,
            dec_head,
            output,
        };
        let class_chars = class_encodings(&vocab);
        Ok(Model { config, params: store, modules, vocab, class_chars })
    }

    /// Rebuilds a model around existing parameters (checkpoint loading).
    pub fn with_params(config: ModelConfig, vocab: Vocab, params: ParamStore<T>) -> Result<Self, NnError> {
        let mut fresh = Model::<T>::new(config, vocab, 0)?;
        for id in fresh.params.ids() {
            let name = fresh.params.name(id).to_string();
            let src = params.find(&name).ok_or_else(|| NnError::Checkpoint(format!("missing tensor {name}")))?;
            let (want, got) = (fresh.params.get(id).dim(), params.get(src).dim());
            if want != got {
                return Err(NnError::Checkpoint(format!("tensor {name}: shape {got:?}, expected {want:?}")));
            }
            fresh.params.get_mut(id).assign(params.get(src));
        }
        if params.len() != fresh.params.len() {
            return Err(NnError::Checkpoint("checkpoint holds unexpected tensors".into()));
        }
        Ok(fresh)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Same model with a different element type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            modules: self.modules.clone(),
            vocab: self.vocab.clone(),
            class_chars: self.class_chars.clone(),
        }
    }

    pub fn class_encoding(&self, class: usize) -> CharEncoding {
        self.class_chars[class]
    }

    /// Token embeddings (`n × D`) for arbitrary encodings.
    pub fn embed_tokens(&self, g: &mut Graph<T>, encodings: &[CharEncoding]) -> Var {
        self.modules.embed.forward_dedup(g, encodings)
    }

    /// Encodes one full input sequence of `A·L + 1` character encodings.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        inputs: &[CharEncoding],
        dropout: &mut Option<DropoutCtx<'_, R>>,
    ) -> Result<EncoderOutput, NnError> {
        let n = self.config.seq_len();
        if inputs.len() != n {
            return Err(NnError::ShapeMismatch { expected: n, got: inputs.len() });
        }
        let m = &self.modules;
        let tok = self.embed_tokens(g, inputs);
        let pos = g.param(m.position);
        let seg_table = g.param(m.segment);
        let segments = (0..n).map(|p| crate::report::segment_index(p, self.config.slot_len)).collect();
        let seg = g.gather_rows(seg_table, segments);
        let x = g.add(tok, pos);
        let x = g.add(x, seg);
        let x = m.embed_ln.forward(g, x);
        let mut x = apply_dropout(g, x, dropout);
        for layer in &m.encoder {
            x = layer.forward(g, x, dropout);
        }
        let cls = g.slice_rows(x, 0, 1);
        let tokens = g.slice_rows(x, 1, n);
        Ok(EncoderOutput { cls, tokens })
    }

    /// Encodes a tokenized report.
    pub fn encode_report(&self, g: &mut Graph<T>, report: &TokenizedReport) -> Result<EncoderOutput, NnError> {
        self.check_layout(report)?;
        self.encode::<ChaCha8Rng>(g, &report.char_encodings(), &mut None)
    }

    pub fn check_layout(&self, report: &TokenizedReport) -> Result<(), NnError> {
        if report.n_avs() != self.config.n_avs || report.slot_len() != self.config.slot_len {
            return Err(NnError::ShapeMismatch { expected: self.config.seq_len(), got: report.len() });
        }
        Ok(())
    }

    /// Inference-only `<CLS>` vector.
    pub fn embed_report(&self, report: &TokenizedReport) -> Result<Array1<T>, NnError> {
        let mut g = Graph::new(&self.params);
        let out = self.encode_report(&mut g, report)?;
        Ok(g.value(out.cls).row(0).to_owned())
    }

    /// Masked-token head: FFNN on the selected rows of `T`.
    fn mtp_hidden(&self, g: &mut Graph<T>, tokens: Var, rows: &[usize]) -> Var {
        let h = g.gather_rows(tokens, rows.to_vec());
        let h = self.modules.mtp_head.forward(g, h);
        g.gelu(h)
    }

    /// Summed NLL of `targets[k]` at slot row `rows[k]` (0-based into `T`).
    pub fn mtp_loss(&self, g: &mut Graph<T>, tokens: Var, rows: &[usize], targets: &[usize]) -> Var {
        let h = self.mtp_hidden(g, tokens, rows);
        self.modules.output.nll(g, h, targets)
    }

    /// Full log-probabilities at the selected slot rows.
    pub fn mtp_log_probs(&self, g: &mut Graph<T>, tokens: Var, rows: &[usize]) -> Var {
        let h = self.mtp_hidden(g, tokens, rows);
        self.modules.output.log_probs(g, h)
    }

    fn dec_hidden(&self, g: &mut Graph<T>, top: Var) -> Var {
        let h = self.modules.dec_head.forward(g, top);
        g.gelu(h)
    }

    /// Autoregressive label decoder seeded from the `<CLS>` state.
    pub fn decode(&self, g: &mut Graph<T>, cls: Var, av_index: usize, mode: DecodeMode<'_>) -> DecodeOutput {
        let d = self.config.dim;
        let m = &self.modules;
        let init = m.dec_init.forward(g, cls);
        let init = g.tanh(init);
        let zero = g.input(Array2::zeros((1, d)));
        let mut states: Vec<LstmState> = (0..self.config.n_dec_layers)
            .map(|l| LstmState { h: g.slice_cols(init, l * d, (l + 1) * d), c: zero })
            .collect();
        let sos = encode_token_chars(&TokenEntry::Sos(av_index));

        match mode {
            DecodeMode::TeacherForced(target) => {
                let inputs: Vec<CharEncoding> = std::iter::once(sos)
                    .chain(target[..target.len().saturating_sub(1)].iter().map(|&c| self.class_chars[c]))
                    .collect();
                let emb = self.embed_tokens(g, &inputs);
                let tops: Vec<Var> = (0..inputs.len())
                    .map(|t| {
                        let x = g.slice_rows(emb, t, t + 1);
                        m.decoder.step(g, x, &mut states)
                    })
                    .collect();
                let top = if tops.len() == 1 { tops[0] } else { g.concat_rows(tops) };
                let h = self.dec_hidden(g, top);
                let lp = m.output.log_probs(g, h);
                let predicted = argmax_rows(g.value(lp));
                let picks = target.iter().enumerate().map(|(t, &c)| (t, c)).collect();
                let picked = g.pick(lp, picks);
                let total = g.sum(picked);
                DecodeOutput { loss: Some(g.scale(total, T::lit(-1.0))), predicted }
            }
            DecodeMode::Guided(target) => self.decode_stepwise(g, &mut states, sos, target.len(), Some(target)),
            DecodeMode::Free => self.decode_stepwise(g, &mut states, sos, self.config.slot_len, None),
        }
    }

    fn decode_stepwise(
        &self,
        g: &mut Graph<T>,
        states: &mut [LstmState],
        sos: CharEncoding,
        max_steps: usize,
        target: Option<&[usize]>,
    ) -> DecodeOutput {
        let m = &self.modules;
        let mut input = sos;
        let mut predicted = Vec::with_capacity(max_steps);
        let mut picks = Vec::new();
        for t in 0..max_steps {
            let x = self.embed_tokens(g, &[input]);
            let top = m.decoder.step(g, x, states);
            let h = self.dec_hidden(g, top);
            let lp = m.output.log_probs(g, h);
            let best = argmax_rows(g.value(lp))[0];
            predicted.push(best);
            if let Some(target) = target {
                picks.push(g.pick(lp, vec![(0, target[t])]));
            } else if best == CLASS_EOS {
                break;
            }
            input = self.class_chars[best];
        }
        let loss = target.map(|_| {
            let all = g.concat_rows(picks);
            let total = g.sum(all);
            g.scale(total, T::lit(-1.0))
        });
        DecodeOutput { loss, predicted }
    }
}

fn class_encodings(vocab: &Vocab) -> Vec<CharEncoding> {
    (0..vocab.n_classes())
        .map(|c| encode_token_chars(&vocab.entry_of_class(c).expect("class in range")))
        .collect()
}

/// Index of the largest entry per row; ties resolve to the lowest index.
pub fn argmax_rows<T: Scalar>(m: ndarray::ArrayView2<'_, T>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
