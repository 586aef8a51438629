use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::holdout::{apply_holdout, holdout_classes, select_label_holdout};
use super::masking::{select_mask_targets, MaskPlan};
use super::schedule::TrainSchedule;
use super::TrainError;
use crate::nn::{argmax_rows, AdamW, DecodeMode, DropoutCtx, Graph, Model, NnError, ParamGrads};
use crate::report::TokenizedReport;
use crate::Scalar;

/// One report prepared for both pre-training tasks.
#[derive(Debug, Clone)]
pub struct PretrainSample {
    /// Model input: holdout slot replaced by ABS, then masked.
    pub input: TokenizedReport,
    pub plan: MaskPlan,
    /// Held-out AV and its decoder target classes. `None` when no AV is
    /// eligible or a target token is out of vocabulary.
    pub holdout: Option<(usize, Vec<usize>)>,
    pub teacher_forced: bool,
}

impl PretrainSample {
    /// Slot rows (0-based into the encoder's token block) and target classes.
    pub fn mtp_rows(&self) -> (Vec<usize>, Vec<usize>) {
        self.plan.targets.iter().map(|t| (t.position - 1, t.target)).unzip()
    }
}

pub fn prepare_sample<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    report: &TokenizedReport,
    mask_rate: f64,
    teacher_forcing: f64,
    force_mask: bool,
    rng: &mut R,
) -> PretrainSample {
    let vocab = model.vocab();
    let (held, holdout) = match select_label_holdout(report, rng) {
        Ok(av) => (apply_holdout(report, av), holdout_classes(report, av, vocab).map(|c| (av, c))),
        Err(_) => (report.clone(), None),
    };
    let plan = select_mask_targets(&held, mask_rate, vocab, force_mask, rng);
    let input = plan.apply(&held, vocab);
    let teacher_forced = rng.random_bool(teacher_forcing);
    PretrainSample { input, plan, holdout, teacher_forced }
}

/// Losses and accuracy counts of one pre-training batch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainStats {
    /// Mean NLL per masked target (0 when nothing was masked).
    pub mtp_loss: f64,
    /// Mean summed decoder NLL per report with a usable holdout.
    pub mlp_loss: f64,
    pub total_loss: f64,
    pub mtp_targets: usize,
    pub mtp_correct: usize,
    pub mlp_reports: usize,
    pub mlp_tokens: usize,
    pub mlp_correct: usize,
}

impl PretrainStats {
    pub fn mtp_accuracy(&self) -> f64 {
        ratio(self.mtp_correct, self.mtp_targets)
    }

    pub fn mlp_accuracy(&self) -> f64 {
        ratio(self.mlp_correct, self.mlp_tokens)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

struct SampleResult<T> {
    grads: Option<ParamGrads<T>>,
    mtp_nll: f64,
    mtp_correct: usize,
    mlp_nll: f64,
    mlp_tokens: usize,
    mlp_correct: usize,
}

fn run_sample<T: Scalar>(
    model: &Model<T>,
    sample: &PretrainSample,
    weights: Option<(f64, f64)>,
    dropout: f64,
    seed: u64,
    stream: u64,
) -> Result<SampleResult<T>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut g = Graph::new(&model.params);
    model.check_layout(&sample.input)?;
    let mut ctx = (dropout > 0.0 && weights.is_some()).then(|| DropoutCtx { rate: dropout, rng: &mut rng });
    let enc = model.encode(&mut g, &sample.input.char_encodings(), &mut ctx)?;
    let mut out = SampleResult { grads: None, mtp_nll: 0.0, mtp_correct: 0, mlp_nll: 0.0, mlp_tokens: 0, mlp_correct: 0 };
    let mut terms = Vec::new();

    let (rows, targets) = sample.mtp_rows();
    if !rows.is_empty() {
        let lp = model.mtp_log_probs(&mut g, enc.tokens, &rows);
        let pred = argmax_rows(g.value(lp));
        out.mtp_correct = pred.iter().zip(&targets).filter(|(p, t)| p == t).count();
        let picked = g.pick(lp, targets.iter().enumerate().map(|(r, &c)| (r, c)).collect());
        let sum = g.sum(picked);
        let nll = g.scale(sum, T::lit(-1.0));
        out.mtp_nll = g.scalar(nll).to_f64_lossy();
        if let Some((w, _)) = weights {
            terms.push(g.scale(nll, T::lit(w)));
        }
    }
    if let Some((av, target)) = &sample.holdout {
        let mode = if sample.teacher_forced { DecodeMode::TeacherForced(target) } else { DecodeMode::Guided(target) };
        let dec = model.decode(&mut g, enc.cls, *av, mode);
        let nll = dec.loss.expect("scored decode mode");
        out.mlp_nll = g.scalar(nll).to_f64_lossy();
        out.mlp_tokens = target.len();
        out.mlp_correct = dec.predicted.iter().zip(target).filter(|(p, t)| p == t).count();
        if let Some((_, w)) = weights {
            terms.push(g.scale(nll, T::lit(w)));
        }
    }
    if !terms.is_empty() {
        let loss = terms.into_iter().reduce(|a, b| g.add(a, b)).expect("nonempty");
        out.grads = Some(g.param_grads(loss));
    }
    Ok(out)
}

fn run_batch<T: Scalar>(
    model: &Model<T>,
    samples: &[PretrainSample],
    schedule: Option<&TrainSchedule>,
    seed: u64,
) -> Result<(PretrainStats, Option<ParamGrads<T>>), NnError> {
    let n_targets: usize = samples.iter().map(|s| s.plan.targets.len()).sum();
    let n_mlp = samples.iter().filter(|s| s.holdout.is_some()).count();
    let weights = schedule.map(|s| {
        (
            if n_targets > 0 { s.mtp_weight / n_targets as f64 } else { 0.0 },
            if n_mlp > 0 { s.mlp_weight / n_mlp as f64 } else { 0.0 },
        )
    });
    let dropout = schedule.map_or(0.0, |s| s.dropout);
    let results = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_sample(model, s, weights, dropout, seed, i as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let mut stats = PretrainStats { mtp_targets: n_targets, mlp_reports: n_mlp, ..Default::default() };
    let mut grads: Option<ParamGrads<T>> = None;
    for r in results {
        stats.mtp_loss += r.mtp_nll;
        stats.mtp_correct += r.mtp_correct;
        stats.mlp_loss += r.mlp_nll;
        stats.mlp_tokens += r.mlp_tokens;
        stats.mlp_correct += r.mlp_correct;
        if let Some(g) = r.grads {
            match &mut grads {
                Some(acc) => acc.accumulate(&g),
                None => grads = Some(g),
            }
        }
    }
    stats.mtp_loss /= n_targets.max(1) as f64;
    stats.mlp_loss /= n_mlp.max(1) as f64;
    let (wm, wl) = schedule.map_or((1.0, 1.0), |s| (s.mtp_weight, s.mlp_weight));
    stats.total_loss = wm * stats.mtp_loss + wl * stats.mlp_loss;
    Ok((stats, grads))
}

/// Batch statistics and the gradient of the weighted training loss,
/// without touching the parameters.
pub fn pretrain_grads<T: Scalar>(
    model: &Model<T>,
    samples: &[PretrainSample],
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(PretrainStats, Option<ParamGrads<T>>), TrainError> {
    Ok(run_batch(model, samples, Some(schedule), seed)?)
}

/// Prepares a batch with per-report random streams derived from one draw
/// of `rng`, so results do not depend on the worker count.
pub fn prepare_batch<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    batch: &[TokenizedReport],
    mask_rate: f64,
    teacher_forcing: f64,
    force_mask: bool,
    rng: &mut R,
) -> (Vec<PretrainSample>, u64) {
    let seed = rng.next_u64();
    let samples = batch
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            prepare_sample(model, r, mask_rate, teacher_forcing, force_mask, &mut rng)
        })
        .collect();
    (samples, seed ^ 0x5DEE_CE66_D1CE_4E5B)
}

/// One optimizer update on the combined masked-token and masked-label loss.
pub fn pretrain_step<T: Scalar, R: Rng + ?Sized>(
    model: &mut Model<T>,
    optimizer: &mut AdamW<T>,
    batch: &[TokenizedReport],
    schedule: &TrainSchedule,
    lr: f64,
    rng: &mut R,
) -> Result<PretrainStats, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let (samples, seed) = prepare_batch(model, batch, schedule.mask_rate, schedule.teacher_forcing, false, rng);
    pretrain_step_prepared(model, optimizer, &samples, schedule, lr, seed)
}

/// [`pretrain_step`] on already prepared samples.
pub fn pretrain_step_prepared<T: Scalar>(
    model: &mut Model<T>,
    optimizer: &mut AdamW<T>,
    samples: &[PretrainSample],
    schedule: &TrainSchedule,
    lr: f64,
    seed: u64,
) -> Result<PretrainStats, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let (stats, grads) = pretrain_grads(model, samples, schedule, seed)?;
    if !stats.total_loss.is_finite() {
        return Err(TrainError::NonFinite("pre-training loss".into()));
    }
    if let Some(grads) = grads {
        optimizer.clip_norm = schedule.clip_norm;
        optimizer.step(&mut model.params, &grads, lr);
    }
    Ok(stats)
}

/// Task accuracies on a corpus without updating parameters. Every selected
/// token is replaced by MASK and decoding always feeds back its own argmax.
pub fn evaluate_pretraining<T: Scalar>(
    model: &Model<T>,
    reports: &[TokenizedReport],
    mask_rate: f64,
    seed: u64,
) -> Result<PretrainStats, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = PretrainStats::default();
    let (mut mtp_sum, mut mlp_sum) = (0.0, 0.0);
    for chunk in reports.chunks(256) {
        let (samples, s) = prepare_batch(model, chunk, mask_rate, 0.0, true, &mut rng);
        let (st, _) = run_batch(model, &samples, None, s)?;
        mtp_sum += st.mtp_loss * st.mtp_targets as f64;
        mlp_sum += st.mlp_loss * st.mlp_reports as f64;
        total.mtp_targets += st.mtp_targets;
        total.mtp_correct += st.mtp_correct;
        total.mlp_reports += st.mlp_reports;
        total.mlp_tokens += st.mlp_tokens;
        total.mlp_correct += st.mlp_correct;
    }
    total.mtp_loss = mtp_sum / total.mtp_targets.max(1) as f64;
    total.mlp_loss = mlp_sum / total.mlp_reports.max(1) as f64;
    total.total_loss = total.mtp_loss + total.mlp_loss;
    Ok(total)
}
