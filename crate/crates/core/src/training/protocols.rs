use rand::seq::SliceRandom;
use serde::Serialize;

use super::metrics::{compute_metrics, MetricsReport};
use super::split::{draw_per_class, split_dataset, SplitSpec};
use super::{EpochLog, Phase, TrainConfig, TrainError};
use crate::nn::{
    argmax_rows, classify, embed, forward_backbone, forward_classifier, init_params, is_backbone, lr_schedule,
    sgd_momentum_step, ForwardCtx, Mode, ModelConfig, Parameters, Tensor, Velocity,
};
use crate::signal_io::EpochDataset;
use crate::transforms::{make_view_pair, RngStream};

// Stream ids for the independent random draws of a run.
const SSL_SHUFFLE: u64 = 1;
const SSL_VIEWS: u64 = 2;
const SSL_DROPOUT: u64 = 3;
const CLS_SHUFFLE: u64 = 4;
const CLS_DROPOUT: u64 = 5;
const LIMITED_DRAW: u64 = 6;
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone)]
pub struct PretrainRun {
    pub params: Parameters<f32>,
    /// Mean contrastive loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClassifierRun {
    pub params: Parameters<f32>,
    pub epoch_losses: Vec<f64>,
    pub metrics: MetricsReport,
}

fn stack(data: &EpochDataset, idx: &[usize]) -> Result<Tensor<f32>, TrainError> {
    let len = data.epochs[idx[0]].samples.len();
    let mut flat = Vec::with_capacity(idx.len() * len);
    for &i in idx {
        flat.extend_from_slice(&data.epochs[i].samples);
    }
    Ok(Tensor::from_vec(&[idx.len(), len], flat)?)
}

fn labels_of(data: &EpochDataset, idx: &[usize]) -> Result<Vec<usize>, TrainError> {
    idx.iter().map(|&i| data.epochs[i].label.map(|l| l.index()).ok_or(TrainError::Unlabeled { index: i })).collect()
}

fn step_lr(epoch: usize, batch: usize, batches: usize, total: usize, base: f64, warmup: usize) -> f64 {
    let e = epoch as f64 + (batch as f64 + 0.5) / batches as f64;
    lr_schedule(e, total as f64, base, warmup as f64)
}

/// Contrastive pretraining of a freshly initialized model.
///
/// Each epoch shuffles the data, groups it into batches of `ssl_batch / 2`
/// originals, builds two views of every original and takes one momentum-SGD
/// step on the contrastive loss of the `ssl_batch` embeddings.
pub fn pretrain(
    cfg: &TrainConfig,
    data: &EpochDataset,
    model: &ModelConfig,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<PretrainRun, TrainError> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(TrainError::EmptyDataset);
    }
    let root = RngStream::new(cfg.seed);
    let mut params = init_params::<f32>(model, cfg.seed)?;
    let mut velocity = Velocity::new();
    let originals = (cfg.ssl_batch / 2).max(2);
    let mut epoch_losses = Vec::with_capacity(cfg.ssl_epochs);
    for epoch in 0..cfg.ssl_epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut root.derive_all(&[SSL_SHUFFLE, epoch as u64]).rng());
        let batches: Vec<&[usize]> = order.chunks(originals).filter(|b| b.len() >= 2).collect();
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let n = batch.len();
            let len = data.epochs[batch[0]].samples.len();
            let mut views = vec![0f32; 2 * n * len];
            let view_stream = root.derive_all(&[SSL_VIEWS, epoch as u64, bi as u64]);
            for (j, &i) in batch.iter().enumerate() {
                let x: Vec<f64> = data.epochs[i].samples.iter().map(|&v| f64::from(v)).collect();
                let (a, b) = make_view_pair(&x, &cfg.transforms.0, &cfg.transforms.1, &view_stream.derive(j as u64))?;
                for (dst, src) in [(j, a), (j + n, b)] {
                    views[dst * len..(dst + 1) * len].iter_mut().zip(src).for_each(|(d, s)| *d = s as f32);
                }
            }
            let input = Tensor::from_vec(&[2 * n, len], views)?;
            let dropout = root.derive_all(&[SSL_DROPOUT, epoch as u64, bi as u64]);
            let (loss, grads, stats) = {
                let mut ctx = ForwardCtx::new(&params, Mode::Train, Some(&dropout));
                let emb = forward_backbone(&mut ctx, model, &input)?;
                let (node, loss) = ctx.graph.contrastive_loss(emb, cfg.temperature, cfg.loss_mode)?;
                (loss.loss, ctx.graph.backward(node)?, ctx.batch_stats)
            };
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { phase: Phase::Ssl, epoch: epoch + 1, batch: bi });
            }
            let lr = step_lr(epoch, bi, batches.len(), cfg.ssl_epochs, cfg.ssl_lr, cfg.warmup_epochs);
            sgd_momentum_step(&mut params, &grads, &mut velocity, lr, cfg.momentum, cfg.l2);
            params.apply_batch_stats(&stats);
            total += loss;
        }
        let mean = total / batches.len() as f64;
        epoch_losses.push(mean);
        let lr = lr_schedule(epoch as f64 + 0.5, cfg.ssl_epochs as f64, cfg.ssl_lr, cfg.warmup_epochs as f64);
        log(&EpochLog { epoch: epoch + 1, phase: Phase::Ssl, loss: mean, lr });
    }
    Ok(PretrainRun { params, epoch_losses })
}

/// Replaces every classifier tensor with its seeded initial value.
fn fresh_classifier(
    mut params: Parameters<f32>,
    model: &ModelConfig,
    seed: u64,
) -> Result<Parameters<f32>, TrainError> {
    params.check_against(model)?;
    let init = init_params::<f32>(model, seed)?;
    for (name, t) in init.iter().filter(|(n, _)| !is_backbone(n)) {
        params.insert(name.clone(), t.clone());
    }
    Ok(params)
}

/// Eval-mode embeddings of the given epochs, computed in chunks.
fn embed_all(
    params: &Parameters<f32>,
    model: &ModelConfig,
    data: &EpochDataset,
    idx: &[usize],
) -> Result<Vec<Vec<f32>>, TrainError> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let e = embed(params, model, &stack(data, chunk)?)?;
        out.extend(e.rows().map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Predicts the stage of every indexed epoch and scores the predictions.
pub fn evaluate(
    params: &Parameters<f32>,
    model: &ModelConfig,
    data: &EpochDataset,
    idx: &[usize],
) -> Result<MetricsReport, TrainError> {
    let labels = labels_of(data, idx)?;
    let mut predictions = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let e = embed(params, model, &stack(data, chunk)?)?;
        predictions.extend(argmax_rows(&classify(params, model, &e)?));
    }
    compute_metrics(&predictions, &labels)
}

/// Supervised training on `train`. With `frozen` only the classifier is
/// updated, on embeddings computed once in eval mode.
fn train_classifier(
    cfg: &TrainConfig,
    model: &ModelConfig,
    mut params: Parameters<f32>,
    data: &EpochDataset,
    train: &[usize],
    frozen: bool,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<(Parameters<f32>, Vec<f64>), TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let labels = labels_of(data, train)?;
    let cached = if frozen { Some(embed_all(&params, model, data, train)?) } else { None };
    let root = RngStream::new(cfg.seed);
    let mut velocity = Velocity::new();
    let mut epoch_losses = Vec::with_capacity(cfg.cls_epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.cls_epochs {
        order.sort_unstable();
        order.shuffle(&mut root.derive_all(&[CLS_SHUFFLE, epoch as u64]).rng());
        let batches: Vec<&[usize]> = order.chunks(cfg.cls_batch).collect();
        let mut total = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let y: Vec<usize> = batch.iter().map(|&j| labels[j]).collect();
            let dropout = root.derive_all(&[CLS_DROPOUT, epoch as u64, bi as u64]);
            let (loss, grads, stats) = {
                let mut ctx = ForwardCtx::new(&params, Mode::Train, Some(&dropout)).trainable(!frozen, true);
                let emb = match &cached {
                    Some(rows) => {
                        let dim = rows[0].len();
                        let flat = batch.iter().flat_map(|&j| rows[j].iter().copied()).collect();
                        ctx.graph.input(Tensor::from_vec(&[batch.len(), dim], flat)?)
                    }
                    None => {
                        let idx: Vec<usize> = batch.iter().map(|&j| train[j]).collect();
                        forward_backbone(&mut ctx, model, &stack(data, &idx)?)?
                    }
                };
                let logits = forward_classifier(&mut ctx, model, emb)?;
                let (node, _) = ctx.graph.softmax_cross_entropy(logits, &y)?;
                let loss = ctx.graph.value(node).data()[0];
                (f64::from(loss), ctx.graph.backward(node)?, ctx.batch_stats)
            };
            if !loss.is_finite() {
                return Err(TrainError::NonFinite { phase: Phase::Cls, epoch: epoch + 1, batch: bi });
            }
            let lr = step_lr(epoch, bi, batches.len(), cfg.cls_epochs, cfg.cls_lr, cfg.warmup_epochs);
            sgd_momentum_step(&mut params, &grads, &mut velocity, lr, cfg.momentum, cfg.l2);
            params.apply_batch_stats(&stats);
            total += loss;
        }
        let mean = total / batches.len() as f64;
        epoch_losses.push(mean);
        let lr = lr_schedule(epoch as f64 + 0.5, cfg.cls_epochs as f64, cfg.cls_lr, cfg.warmup_epochs as f64);
        log(&EpochLog { epoch: epoch + 1, phase: Phase::Cls, loss: mean, lr });
    }
    Ok((params, epoch_losses))
}

fn run_protocol(
    backbone: &Parameters<f32>,
    model: &ModelConfig,
    data: &EpochDataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    frozen: bool,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<ClassifierRun, TrainError> {
    let s = split_dataset(data, split)?;
    let params = fresh_classifier(backbone.clone(), model, cfg.seed)?;
    let (params, epoch_losses) = train_classifier(cfg, model, params, data, &s.train, frozen, log)?;
    let metrics = evaluate(&params, model, data, &s.test)?;
    Ok(ClassifierRun { params, epoch_losses, metrics })
}

/// Trains a fresh classifier on top of a frozen backbone. Backbone tensors,
/// including normalization statistics, are returned unchanged.
pub fn linear_eval(
    backbone: &Parameters<f32>,
    model: &ModelConfig,
    data: &EpochDataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<ClassifierRun, TrainError> {
    run_protocol(backbone, model, data, split, cfg, true, log)
}

/// Trains all weights starting from `backbone` and a fresh classifier.
pub fn finetune(
    backbone: &Parameters<f32>,
    model: &ModelConfig,
    data: &EpochDataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<ClassifierRun, TrainError> {
    run_protocol(backbone, model, data, split, cfg, false, log)
}

/// Fine-tuning from the seeded random initialization.
pub fn supervised(
    model: &ModelConfig,
    data: &EpochDataset,
    split: &SplitSpec,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&EpochLog),
) -> Result<ClassifierRun, TrainError> {
    finetune(&init_params(model, cfg.seed)?, model, data, split, cfg, log)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmStats {
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub accuracies: Vec<f64>,
    pub macro_f1s: Vec<f64>,
}

impl ArmStats {
    fn from_runs(runs: &[MetricsReport]) -> Self {
        let accuracies: Vec<f64> = runs.iter().map(|m| m.accuracy).collect();
        let macro_f1s: Vec<f64> = runs.iter().map(|m| m.macro_f1).collect();
        let (accuracy_mean, accuracy_std) = mean_sample_std(&accuracies);
        let (macro_f1_mean, macro_f1_std) = mean_sample_std(&macro_f1s);
        Self { accuracy_mean, accuracy_std, macro_f1_mean, macro_f1_std, accuracies, macro_f1s }
    }
}

fn mean_sample_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitedSampleReport {
    pub k_per_class: usize,
    pub repetitions: usize,
    pub random_init: ArmStats,
    pub ssl: ArmStats,
}

/// Repeatedly draws `k` training epochs per class and fine-tunes two arms on
/// each draw: the seeded random initialization and the pretrained backbone.
/// Both are scored on the fixed test split. When the draw covers the whole
/// training pool a single repetition is run.
pub fn limited_sample_experiment(
    pretrained: &Parameters<f32>,
    model: &ModelConfig,
    data: &EpochDataset,
    split: &SplitSpec,
    k: usize,
    repetitions: usize,
    cfg: &TrainConfig,
) -> Result<LimitedSampleReport, TrainError> {
    if k == 0 || repetitions == 0 {
        return Err(TrainError::InvalidConfig("k_per_class and repetitions must be positive".into()));
    }
    let s = split_dataset(data, split)?;
    let random = fresh_classifier(init_params(model, cfg.seed)?, model, cfg.seed)?;
    let ssl = fresh_classifier(pretrained.clone(), model, cfg.seed)?;
    let root = RngStream::new(cfg.seed);
    let (mut random_runs, mut ssl_runs) = (Vec::new(), Vec::new());
    for rep in 0..repetitions {
        let draw = draw_per_class(data, &s.train, k, &root.derive_all(&[LIMITED_DRAW, k as u64, rep as u64]))?;
        for (start, runs) in [(&random, &mut random_runs), (&ssl, &mut ssl_runs)] {
            let (p, _) = train_classifier(cfg, model, start.clone(), data, &draw, false, &mut |_| {})?;
            runs.push(evaluate(&p, model, data, &s.test)?);
        }
        if draw.len() == s.train.len() {
            break;
        }
    }
    Ok(LimitedSampleReport {
        k_per_class: k,
        repetitions: ssl_runs.len(),
        random_init: ArmStats::from_runs(&random_runs),
        ssl: ArmStats::from_runs(&ssl_runs),
    })
}
