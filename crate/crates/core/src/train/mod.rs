//! Masking, label holdout, pre-training, pair mining and Siamese
//! fine-tuning.

mod finetune;
mod holdout;
mod masking;
mod pairs;
mod pretrain;
mod run;
mod schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use finetune::{embed_reports, finetune_grads, finetune_loss, finetune_step};
pub use holdout::{apply_holdout, eligible_avs, holdout_classes, holdout_target, select_label_holdout};
pub use masking::{select_mask_targets, MaskAction, MaskPlan, MaskTarget, ACTION_MASK, ACTION_RANDOM};
pub use pairs::{digest_distance, mine_blob_pairs, mine_pairs, PairSet, SimilarityDigest, DEFAULT_PAIR_THRESHOLD};
pub use pretrain::{
    evaluate_pretraining, prepare_batch, prepare_sample, pretrain_grads, pretrain_step, pretrain_step_prepared, PretrainSample,
    PretrainStats,
};
pub use run::{run_finetuning, run_pretraining, BatchSampler};
pub use schedule::{lr_at, ReduceOnPlateau, TrainSchedule};

use crate::nn::NnError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("no AV in the report produced a label or benign verdict")]
    NoEligibleAv,
    #[error("fine-tuning needs at least 2 pairs per batch, got {0}")]
    BatchTooSmall(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// One line of the JSON Lines metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtp_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mlp_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mnr_loss: Option<f64>,
    pub lr: f64,
}

/// Training run settings stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub schedule: TrainSchedule,
    pub seed: u64,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub pair_threshold: u32,
    pub max_pairs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: TrainSchedule::default(),
            seed: 0,
            pretrain_steps: 2000,
            finetune_steps: 500,
            pair_threshold: DEFAULT_PAIR_THRESHOLD,
            max_pairs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.schedule.validate().map_err(TrainError::Config)
    }
}
