//! Contrastive pretraining, downstream protocols and metrics.

mod export;
mod metrics;
mod protocols;
mod split;

use std::fmt;

pub use export::{export_embeddings, format_sig9};
pub use metrics::{compute_metrics, MetricsReport};
pub use protocols::{
    evaluate, finetune, limited_sample_experiment, linear_eval, pretrain, supervised, ArmStats, ClassifierRun,
    LimitedSampleReport, PretrainRun,
};
pub use split::{draw_per_class, split_dataset, subject_key, Split, SplitSpec, SplitUnit};

use crate::contrastive::{LossMode, DEFAULT_TEMPERATURE};
use crate::nn::NnError;
use crate::signal_io::SignalError;
use crate::transforms::{TransformError, TransformSpec};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("epoch {index} has no stage label")]
    Unlabeled { index: usize },
    #[error("class {class} has {available} training samples, {needed} requested")]
    InsufficientClassSamples { class: String, needed: usize, available: usize },
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no predictions to score")]
    EmptyInput,
    #[error("label {0} outside 0..5")]
    BadLabel(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-finite loss in {phase} epoch {epoch}, batch {batch}")]
    NonFinite { phase: Phase, epoch: usize, batch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Ssl,
    Cls,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ssl => "ssl",
            Self::Cls => "cls",
        })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based training epoch.
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub lr: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} phase={} loss={} lr={}", self.epoch, self.phase, self.loss, self.lr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub temperature: f64,
    /// Views per contrastive batch (2N).
    pub ssl_batch: usize,
    pub cls_batch: usize,
    pub ssl_epochs: usize,
    pub cls_epochs: usize,
    pub ssl_lr: f64,
    pub cls_lr: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub l2: f64,
    pub seed: u64,
    pub transforms: (TransformSpec, TransformSpec),
    pub loss_mode: LossMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            ssl_batch: 512,
            cls_batch: 256,
            ssl_epochs: 70,
            cls_epochs: 70,
            ssl_lr: 0.1,
            cls_lr: 0.01,
            warmup_epochs: 5,
            momentum: 0.9,
            l2: 1e-4,
            seed: 0,
            transforms: (
                TransformSpec::from_name("crop_resize").unwrap(),
                TransformSpec::from_name("permutation").unwrap(),
            ),
            loss_mode: LossMode::Paper,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut problems = Vec::new();
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            problems.push(format!("temperature {} must be positive", self.temperature));
        }
        if self.ssl_batch < 2 {
            problems.push(format!("ssl_batch {} must be at least 2", self.ssl_batch));
        }
        if self.cls_batch < 1 {
            problems.push("cls_batch must be at least 1".to_string());
        }
        if self.ssl_epochs < 1 || self.cls_epochs < 1 {
            problems.push("epoch counts must be at least 1".to_string());
        }
        for (name, v) in [("ssl_lr", self.ssl_lr), ("cls_lr", self.cls_lr), ("l2", self.l2)] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} {v} must be finite and non-negative"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            problems.push(format!("momentum {} outside [0, 1)", self.momentum));
        }
        for t in [&self.transforms.0, &self.transforms.1] {
            if let Err(e) = t.validate() {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(problems.join("; ")))
        }
    }
}
