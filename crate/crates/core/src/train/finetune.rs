use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::TrainError;
use crate::nn::{mnr_loss_with_grads, AdamW, DropoutCtx, Graph, Model, ParamGrads};
use crate::report::TokenizedReport;
use crate::Scalar;

/// Runs every report through the shared encoder and returns the stacked
/// `<CLS>` states (`n × D`).
pub fn embed_reports<T: Scalar>(model: &Model<T>, reports: &[TokenizedReport]) -> Result<Array2<T>, TrainError> {
    let rows = reports.par_iter().map(|r| model.embed_report(r)).collect::<Result<Vec<_>, _>>()?;
    let mut out = Array2::zeros((rows.len(), model.config.dim));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&src);
    }
    Ok(out)
}

/// MNR loss of a batch without updating parameters.
pub fn finetune_loss<T: Scalar>(
    model: &Model<T>,
    anchors: &[TokenizedReport],
    positives: &[TokenizedReport],
) -> Result<f64, TrainError> {
    let a = embed_reports(model, anchors)?;
    let p = embed_reports(model, positives)?;
    Ok(crate::nn::mnr_loss(a.view(), p.view())?.to_f64_lossy())
}

/// MNR loss of a batch and its gradient. Each branch is a separate graph
/// over the shared parameters; the loss gradient at every `<CLS>` row seeds
/// that branch's backward pass.
pub fn finetune_grads<T: Scalar>(
    model: &Model<T>,
    anchors: &[TokenizedReport],
    positives: &[TokenizedReport],
    dropout: f64,
    seed: u64,
) -> Result<(f64, ParamGrads<T>), TrainError> {
    let k = anchors.len();
    if k != positives.len() {
        return Err(crate::nn::NnError::BatchMismatch { anchors: k, positives: positives.len() }.into());
    }
    if k < 2 {
        return Err(TrainError::BatchTooSmall(k));
    }
    let inputs: Vec<&TokenizedReport> = anchors.iter().chain(positives).collect();
    let graphs = inputs
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            model.check_layout(r)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut ctx = (dropout > 0.0).then(|| DropoutCtx { rate: dropout, rng: &mut rng });
            let mut g = Graph::new(&model.params);
            let out = model.encode(&mut g, &r.char_encodings(), &mut ctx)?;
            Ok((g, out.cls))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let d = model.config.dim;
    let mut a = Array2::zeros((k, d));
    let mut p = Array2::zeros((k, d));
    for (i, (g, cls)) in graphs.iter().enumerate() {
        let mut dst = if i < k { a.row_mut(i) } else { p.row_mut(i - k) };
        dst.assign(&g.value(*cls).row(0));
    }
    let (loss, ga, gp) = mnr_loss_with_grads(a.view(), p.view())?;
    let parts: Vec<ParamGrads<T>> = graphs
        .par_iter()
        .enumerate()
        .map(|(i, (g, cls))| {
            let row = if i < k { ga.row(i) } else { gp.row(i - k) };
            let seed = row.to_owned().insert_axis(ndarray::Axis(0));
            g.collect_param_grads(&g.backward(*cls, seed))
        })
        .collect();
    let mut grads = ParamGrads::zeros_like(&model.params);
    for part in &parts {
        grads.accumulate(part);
    }
    Ok((loss.to_f64_lossy(), grads))
}

/// One Siamese update: both branches run through the same parameters and
/// their gradients sum into the same tensors.
pub fn finetune_step<T: Scalar, R: Rng + ?Sized>(
    model: &mut Model<T>,
    optimizer: &mut AdamW<T>,
    anchors: &[TokenizedReport],
    positives: &[TokenizedReport],
    lr: f64,
    dropout: f64,
    rng: &mut R,
) -> Result<f64, TrainError> {
    let seed = rng.next_u64();
    let (loss, grads) = finetune_grads(model, anchors, positives, dropout, seed)?;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(TrainError::NonFinite("fine-tuning loss".into()));
    }
    optimizer.step(&mut model.params, &grads, lr);
    Ok(loss)
}
