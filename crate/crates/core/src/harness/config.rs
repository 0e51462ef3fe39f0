use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::ModelWidths;
use crate::detect::{DetectorConfig, LossWeights};
use crate::error::{Error, Result};
use crate::interaction::HEATMAP_SIZE;
use crate::model::ModelConfig;

/// Optimizer constants for decoupled weight decay Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, max_grad_norm: None }
    }
}

/// Learning-rate schedule over the run's optimizer steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear warmup, then cosine decay to zero at the last step.
    Cosine,
}

/// Everything that determines a training run. Recorded verbatim in every
/// checkpoint and report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the gaze direction loss.
    pub alpha: f64,
    /// Weight of the heatmap loss.
    pub beta: f64,
    /// Weight of the energy aggregation loss.
    pub gamma: f64,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub warmup_steps: usize,
    pub batch: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps instead of `epochs`.
    pub max_steps: Option<usize>,
    pub eta: usize,
    pub input_size: usize,
    pub heatmap_size: usize,
    pub seed: u64,
    /// Abort when the batch loss exceeds this.
    pub divergence_threshold: f64,
    /// Warm start from a checkpoint sidecar (pretrain then finetune).
    pub init_from: Option<PathBuf>,
    pub optimizer: OptimizerConfig,
    pub loss_weights: LossWeights,
    pub widths: ModelWidths,
    /// `eta` above takes precedence over `detector.eta`.
    pub detector: DetectorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 1000.0,
            gamma: 1.0,
            lr: 1e-4,
            lr_schedule: LrSchedule::Constant,
            warmup_steps: 0,
            batch: 2,
            epochs: 30,
            max_steps: None,
            eta: 2,
            input_size: 224,
            heatmap_size: HEATMAP_SIZE,
            seed: 0,
            divergence_threshold: 1e6,
            init_from: None,
            optimizer: OptimizerConfig::default(),
            loss_weights: LossWeights::default(),
            widths: ModelWidths::default(),
            detector: DetectorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lr", self.lr),
            ("divergence_threshold", self.divergence_threshold),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch == 0 || self.epochs == 0 || self.max_steps == Some(0) {
            return Err(Error::Config("batch, epochs and max_steps must be positive".into()));
        }
        if self.heatmap_size != HEATMAP_SIZE {
            return Err(Error::Config(format!("heatmap_size must be {HEATMAP_SIZE}")));
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 || o.weight_decay < 0.0 {
            return Err(Error::Config("invalid optimizer constants".into()));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_size: self.input_size,
            widths: self.widths,
            detector: DetectorConfig { eta: self.eta, ..self.detector.clone() },
        }
    }

    /// Learning rate for `step` of a `total`-step run.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let span = total.saturating_sub(self.warmup_steps).max(1) as f64;
                let t = (step - self.warmup_steps) as f64 / span;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
            }
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }

}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
