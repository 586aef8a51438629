use serde::{Deserialize, Serialize};

/// Optimizer and learning-rate settings for both training phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub pretrain_lr: f64,
    /// Steps per warm-restart cycle; `0` means one epoch of the corpus.
    pub epoch_length: usize,
    pub finetune_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub teacher_forcing: f64,
    pub mask_rate: f64,
    pub mtp_weight: f64,
    pub mlp_weight: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub dropout: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            batch_size: 100,
            pretrain_lr: 2.5e-4,
            epoch_length: 0,
            finetune_lr: 1e-6,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
            teacher_forcing: 0.5,
            mask_rate: 0.05,
            mtp_weight: 1.0,
            mlp_weight: 1.0,
            plateau_factor: 0.5,
            plateau_patience: 200,
            dropout: 0.0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(self.pretrain_lr > 0.0 && self.finetune_lr > 0.0) {
            return Err("learning rates must be positive".into());
        }
        for (name, p) in [("teacher_forcing", self.teacher_forcing), ("mask_rate", self.mask_rate), ("dropout", self.dropout)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err("plateau_factor must lie in (0, 1)".into());
        }
        if self.weight_decay < 0.0 || self.mtp_weight < 0.0 || self.mlp_weight < 0.0 {
            return Err("weights must be non-negative".into());
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, corpus_len: usize) -> usize {
        if self.epoch_length > 0 {
            self.epoch_length
        } else {
            corpus_len.div_ceil(self.batch_size).max(1)
        }
    }
}

/// Cosine annealing from `lr0` toward zero within each epoch, restarting
/// at every epoch boundary.
pub fn lr_at(step: usize, epoch_length: usize, lr0: f64) -> f64 {
    let len = epoch_length.max(1);
    let t = (step % len) as f64 / len as f64;
    lr0 * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}

/// Halves (by `factor`) the rate when the monitored loss has not improved
/// for `patience` consecutive observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceOnPlateau {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    bad_steps: usize,
}

impl ReduceOnPlateau {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        ReduceOnPlateau { lr, factor, patience, min_lr: 0.0, best: f64::INFINITY, bad_steps: 0 }
    }

    /// Records a loss and returns the rate to use next.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_steps = 0;
        } else {
            self.bad_steps += 1;
            if self.bad_steps > self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.bad_steps = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cosine_restarts() {
        assert_eq!(lr_at(0, 100, 2.5e-4), 2.5e-4);
        assert_eq!(lr_at(100, 100, 2.5e-4), 2.5e-4);
        assert_relative_eq!(lr_at(50, 100, 2.5e-4), 1.25e-4, max_relative = 1e-12);
        assert!(lr_at(99, 100, 2.5e-4) < 1e-7);
        assert_relative_eq!(lr_at(125, 100, 1.0), lr_at(25, 100, 1.0));
    }

    #[test]
    fn plateau_reduces_after_patience() {
        let mut s = ReduceOnPlateau::new(1e-6, 0.5, 2);
        assert_eq!(s.observe(1.0), 1e-6);
        assert_eq!(s.observe(1.0), 1e-6);
        assert_eq!(s.observe(1.0), 1e-6);
        assert_eq!(s.observe(1.0), 5e-7);
        assert_eq!(s.observe(0.5), 5e-7);
    }

    #[test]
    fn defaults() {
        let s = TrainSchedule::default();
        assert_eq!(s.batch_size, 100);
        assert_eq!(s.pretrain_lr, 2.5e-4);
        assert_eq!(s.finetune_lr, 1e-6);
        assert_eq!(s.plateau_patience, 200);
        assert!(s.validate().is_ok());
        assert_eq!(s.steps_per_epoch(250), 3);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<TrainSchedule>(&json).unwrap(), s);
        assert_eq!(serde_json::from_str::<TrainSchedule>("{\"batch_size\":8}").unwrap().batch_size, 8);
    }
}
