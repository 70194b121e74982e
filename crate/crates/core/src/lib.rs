//! Self-supervised contrastive pretraining for single-channel EEG sleep
//! staging: EDF ingestion, signal augmentations, the NT-Xent objective, a
//! small differentiable 1-D convolutional network and the downstream
//! evaluation protocols.

pub mod contrastive;
pub mod nn;
pub mod signal_io;
pub mod synthetic;
pub mod training;
pub mod transforms;
