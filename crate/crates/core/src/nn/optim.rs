use ndarray::Array2;

use super::params::{ParamGrads, ParamStore};
use crate::Scalar;

/// Adam with decoupled weight decay. Decay skips 1-row tensors (biases and
/// layer-norm gains).
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros = |id| Array2::zeros(params.get(id).dim());
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            clip_norm: Some(1.0),
            step: 0,
            m: params.ids().map(zeros).collect(),
            v: params.ids().map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamGrads<T>, lr: f64) {
        self.step += 1;
        let clip = match self.clip_norm {
            Some(max) => {
                let norm = grads.global_norm().to_f64_lossy();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let (lr_t, eps, clip) = (T::lit(lr), T::lit(self.eps), T::lit(clip));
        let decay = T::one() - T::lit(lr * self.weight_decay);
        for (id, g) in grads.iter() {
            let p = params.get_mut(id);
            if p.nrows() > 1 && self.weight_decay > 0.0 {
                p.mapv_inplace(|x| x * decay);
            }
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * clip;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr_t * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}
