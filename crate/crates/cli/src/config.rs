use std::path::{Path, PathBuf};

use av2v::dci::DciConfig;
use av2v::nn::ModelConfig;
use av2v::synth::WorldSpec;
use av2v::train::TrainConfig;
use av2v::vocab::{make_adaptive_spec, DEFAULT_CUTOFF_FRACTIONS, DEFAULT_VOCAB_SIZE};
use av2v::Error;
use serde::{Deserialize, Serialize};

/// File locations; any of them may also be given as a flag.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub roster: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub artifacts: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub adaptive: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub dim: Option<usize>,
    pub n_enc_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub n_dec_layers: Option<usize>,
    pub dropout: Option<f64>,
    pub cutoff_fractions: Option<Vec<f64>>,
}

/// Experiment manifest read from `--config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub world: WorldSpec,
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub dci: DciConfig,
    pub vocab_size: usize,
    pub seed: u64,
    pub k: usize,
    pub threshold: u32,
    pub clusters: Option<usize>,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            world: WorldSpec::default(),
            model: ModelOverrides::default(),
            train: TrainConfig::default(),
            dci: DciConfig::default(),
            vocab_size: DEFAULT_VOCAB_SIZE,
            seed: 0,
            k: 10,
            threshold: av2v::train::DEFAULT_PAIR_THRESHOLD,
            clusters: None,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// A single seed drives every random component.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.world.seed = seed;
        self.train.seed = seed;
        self.dci.seed = seed;
    }

    pub fn model_config(&self, n_avs: usize, n_classes: usize) -> Result<ModelConfig, Error> {
        let m = &self.model;
        let mut cfg = ModelConfig::with_dim(n_avs, n_classes, m.dim.unwrap_or(64));
        if let Some(v) = m.n_enc_layers {
            cfg.n_enc_layers = v;
        }
        if let Some(v) = m.n_heads {
            cfg.n_heads = v;
        }
        if let Some(v) = m.ffn_dim {
            cfg.ffn_dim = v;
        }
        if let Some(v) = m.n_dec_layers {
            cfg.n_dec_layers = v;
        }
        if let Some(v) = m.dropout {
            cfg.dropout = v;
        }
        let fractions = m.cutoff_fractions.clone().unwrap_or(DEFAULT_CUTOFF_FRACTIONS.to_vec());
        cfg.adaptive = make_adaptive_spec(n_classes, &fractions)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// First present path or a Config error naming the flag.
pub fn require(flag: Option<&PathBuf>, config: Option<&PathBuf>, name: &str) -> Result<PathBuf, Error> {
    flag.or(config).cloned().ok_or_else(|| Error::Config(format!("missing --{name} (or paths.{} in the config)", name.replace('-', "_"))))
}
