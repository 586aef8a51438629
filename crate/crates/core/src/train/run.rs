use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::finetune::finetune_step;
use super::pairs::PairSet;
use super::pretrain::{pretrain_step, PretrainStats};
use super::schedule::{lr_at, ReduceOnPlateau};
use super::{MetricsRecord, TrainConfig, TrainError};
use crate::nn::{AdamW, Model};
use crate::report::TokenizedReport;
use crate::Scalar;

/// Endless shuffled batches of indices `0..n`; a new permutation starts
/// whenever fewer than `size` unused indices remain.
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, size: usize, seed: u64) -> Self {
        let size = size.clamp(1, n.max(1));
        BatchSampler { order: (0..n).collect(), cursor: n, size, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let b = &self.order[self.cursor..self.cursor + self.size];
        self.cursor += self.size;
        b
    }
}

/// Pre-trains for `config.pretrain_steps` steps, calling `on_step` after
/// each update.
pub fn run_pretraining<T: Scalar>(
    model: &mut Model<T>,
    reports: &[TokenizedReport],
    config: &TrainConfig,
    mut on_step: impl FnMut(&MetricsRecord, &PretrainStats),
) -> Result<(), TrainError> {
    config.validate()?;
    if reports.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let schedule = &config.schedule;
    let mut opt = AdamW::new(&model.params, schedule.weight_decay);
    opt.clip_norm = schedule.clip_norm;
    let mut sampler = BatchSampler::new(reports.len(), schedule.batch_size, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let epoch = schedule.steps_per_epoch(reports.len());
    let mut batch = Vec::with_capacity(schedule.batch_size);
    for step in 0..config.pretrain_steps {
        batch.clear();
        batch.extend(sampler.next_batch().iter().map(|&i| reports[i].clone()));
        let lr = lr_at(step, epoch, schedule.pretrain_lr);
        let stats = pretrain_step(model, &mut opt, &batch, schedule, lr, &mut rng)?;
        let rec = MetricsRecord {
            step,
            mtp_loss: Some(stats.mtp_loss),
            mlp_loss: Some(stats.mlp_loss),
            mnr_loss: None,
            lr,
        };
        on_step(&rec, &stats);
    }
    Ok(())
}

/// Siamese fine-tuning on anchor/positive index pairs into `reports`, with
/// the rate reduced when the batch loss plateaus.
pub fn run_finetuning<T: Scalar>(
    model: &mut Model<T>,
    reports: &[TokenizedReport],
    pairs: &PairSet,
    config: &TrainConfig,
    mut on_step: impl FnMut(&MetricsRecord),
) -> Result<(), TrainError> {
    config.validate()?;
    if pairs.len() < 2 {
        return Err(TrainError::BatchTooSmall(pairs.len()));
    }
    if let Some(&(i, j)) = pairs.pairs.iter().find(|&&(i, j)| i.max(j) >= reports.len()) {
        return Err(TrainError::Config(format!("pair ({i}, {j}) refers past the {} reports", reports.len())));
    }
    let schedule = &config.schedule;
    let mut opt = AdamW::new(&model.params, schedule.weight_decay);
    opt.clip_norm = schedule.clip_norm;
    let mut plateau = ReduceOnPlateau::new(schedule.finetune_lr, schedule.plateau_factor, schedule.plateau_patience);
    let mut sampler = BatchSampler::new(pairs.len(), schedule.batch_size.max(2), config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let mut lr = schedule.finetune_lr;
    for step in 0..config.finetune_steps {
        let (anchors, positives): (Vec<TokenizedReport>, Vec<TokenizedReport>) = sampler
            .next_batch()
            .iter()
            .map(|&p| {
                let (a, b) = pairs.pairs[p];
                (reports[a].clone(), reports[b].clone())
            })
            .unzip();
        let loss = finetune_step(model, &mut opt, &anchors, &positives, lr, schedule.dropout, &mut rng)?;
        on_step(&MetricsRecord { step, mtp_loss: None, mlp_loss: None, mnr_loss: Some(loss), lr });
        lr = plateau.observe(loss);
    }
    Ok(())
}
