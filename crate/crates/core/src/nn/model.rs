//! Backbone and classifier definitions.
//!
//! Backbone: stem conv-BN-ReLU, residual blocks
//! (conv-BN-ReLU-dropout-conv-BN plus a parameter-free shortcut, ReLU after
//! the sum), an optional 1x1 head conv with ReLU, then global average
//! pooling. Classifier: dense-ReLU for each hidden width, then a dense
//! logits layer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{BatchStats, Graph, Mode, NodeId};
use super::tensor::{Real, Tensor};
use super::NnError;
use crate::transforms::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper18,
    Tiny,
    Custom,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Paper18 => "paper18",
            Self::Tiny => "tiny",
            Self::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper18" => Some(Self::Paper18),
            "tiny" => Some(Self::Tiny),
            "custom" => Some(Self::Custom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub preset: Preset,
    pub conv_kernel: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    pub blocks: Vec<BlockSpec>,
    /// Output channels of the 1x1 head conv, if present.
    pub head_channels: Option<usize>,
    pub dropout_rate: f64,
    pub classifier_hidden: Vec<usize>,
    pub num_classes: usize,
}

impl ModelConfig {
    /// Stem + 8 two-conv residual blocks + 1x1 head = 18 convolutions.
    pub fn paper18() -> Self {
        let blocks = (0..8)
            .map(|i| BlockSpec { channels: (32 << (i / 2)).min(256), stride: if i % 2 == 1 { 2 } else { 1 } })
            .collect();
        Self {
            preset: Preset::Paper18,
            conv_kernel: 32,
            stem_channels: 32,
            stem_stride: 1,
            blocks,
            head_channels: Some(256),
            dropout_rate: 0.2,
            classifier_hidden: vec![384, 192, 96],
            num_classes: 5,
        }
    }

    /// Desk-scale network: strided stem and two residual blocks.
    pub fn tiny() -> Self {
        Self {
            preset: Preset::Tiny,
            conv_kernel: 32,
            stem_channels: 8,
            stem_stride: 4,
            blocks: vec![BlockSpec { channels: 8, stride: 2 }, BlockSpec { channels: 16, stride: 2 }],
            head_channels: None,
            dropout_rate: 0.2,
            classifier_hidden: vec![384, 192, 96],
            num_classes: 5,
        }
    }

    pub fn from_preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper18 => Self::paper18(),
            Preset::Tiny | Preset::Custom => Self::tiny(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.head_channels.or_else(|| self.blocks.last().map(|b| b.channels)).unwrap_or(self.stem_channels)
    }

    pub fn conv_count(&self) -> usize {
        1 + 2 * self.blocks.len() + usize::from(self.head_channels.is_some())
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.conv_kernel == 0 || self.stem_channels == 0 || self.stem_stride == 0 {
            return bad("kernel, stem channels and stem stride must be positive".into());
        }
        let mut ch = self.stem_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.stride == 0 || b.channels < ch {
                return bad(format!(
                    "block {i}: channels must not shrink ({ch} -> {}) and stride must be positive",
                    b.channels
                ));
            }
            ch = b.channels;
        }
        if self.head_channels == Some(0) || self.num_classes < 2 || self.classifier_hidden.contains(&0) {
            return bad("head, hidden and class counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.preset == Preset::Paper18 && self.conv_count() != 18 {
            return bad(format!("paper18 preset has {} convolutions", self.conv_count()));
        }
        Ok(())
    }

    /// Stable textual form stored in checkpoints.
    pub fn to_canonical_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "preset={}", self.preset.name());
        let _ = writeln!(s, "conv_kernel={}", self.conv_kernel);
        let _ = writeln!(s, "stem_channels={}", self.stem_channels);
        let _ = writeln!(s, "stem_stride={}", self.stem_stride);
        let blocks: Vec<String> = self.blocks.iter().map(|b| format!("{}:{}", b.channels, b.stride)).collect();
        let _ = writeln!(s, "blocks={}", blocks.join(","));
        let _ = writeln!(s, "head_channels={}", self.head_channels.map_or("none".into(), |h| h.to_string()));
        let _ = writeln!(s, "dropout_rate={}", self.dropout_rate);
        let _ = writeln!(s, "classifier_hidden={}", join(&self.classifier_hidden));
        let _ = writeln!(s, "num_classes={}", self.num_classes);
        s
    }

    pub fn from_canonical_text(text: &str) -> Result<Self, NnError> {
        let bad = |k: &str, v: &str| NnError::InvalidConfig(format!("{k}={v}"));
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line, ""))?;
            map.insert(k.trim(), v.trim());
        }
        let get = |k: &str| map.get(k).copied().ok_or_else(|| NnError::InvalidConfig(format!("missing {k}")));
        let num = |k: &str| -> Result<usize, NnError> { get(k)?.parse().map_err(|_| bad(k, get(k).unwrap_or(""))) };
        let list = |k: &str| -> Result<Vec<usize>, NnError> {
            let v = get(k)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',').map(|x| x.trim().parse().map_err(|_| bad(k, v))).collect()
        };
        let blocks_text = get("blocks")?;
        let blocks = if blocks_text.is_empty() {
            Vec::new()
        } else {
            blocks_text
                .split(',')
                .map(|b| {
                    let (c, s) = b.split_once(':').ok_or_else(|| bad("blocks", blocks_text))?;
                    Ok(BlockSpec {
                        channels: c.trim().parse().map_err(|_| bad("blocks", blocks_text))?,
                        stride: s.trim().parse().map_err(|_| bad("blocks", blocks_text))?,
                    })
                })
                .collect::<Result<_, NnError>>()?
        };
        let head = get("head_channels")?;
        let cfg = Self {
            preset: Preset::parse(get("preset")?).ok_or_else(|| bad("preset", get("preset").unwrap_or("")))?,
            conv_kernel: num("conv_kernel")?,
            stem_channels: num("stem_channels")?,
            stem_stride: num("stem_stride")?,
            blocks,
            head_channels: if head == "none" {
                None
            } else {
                Some(head.parse().map_err(|_| bad("head_channels", head))?)
            },
            dropout_rate: get("dropout_rate")?.parse().map_err(|_| bad("dropout_rate", ""))?,
            classifier_hidden: list("classifier_hidden")?,
            num_classes: num("num_classes")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Named tensors: trainable weights plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

pub fn is_backbone(name: &str) -> bool {
    !name.starts_with("classifier.")
}

impl<T: Real> Parameters<T> {
    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, NnError> {
        self.tensors.get(name).ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn insert(&mut self, name: String, t: Tensor<T>) {
        self.tensors.insert(name, t);
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Exponential moving update of running statistics (weight 0.1 on the
    /// new batch).
    pub fn apply_batch_stats(&mut self, stats: &[(String, BatchStats<T>)]) {
        let m = T::of(0.1);
        for (prefix, s) in stats {
            for (suffix, fresh) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                if let Some(t) = self.tensors.get_mut(&format!("{prefix}.{suffix}")) {
                    for (r, &f) in t.data_mut().iter_mut().zip(fresh) {
                        *r = (T::one() - m) * *r + m * f;
                    }
                }
            }
        }
    }

    /// Checks that names and shapes match what `cfg` expects.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<(), NnError> {
        let expected = param_shapes(cfg);
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(NnError::ShapeMismatch(format!("{name}: expected {shape:?}, found {:?}", t.shape())))
                }
                None => return Err(NnError::UnknownParam(name.clone())),
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(NnError::UnknownParam(extra.clone()));
        }
        Ok(())
    }
}

fn conv_shapes(out: &mut BTreeMap<String, Vec<usize>>, name: &str, cout: usize, cin: usize, k: usize, bn: bool) {
    out.insert(format!("{name}.weight"), vec![cout, cin, k]);
    out.insert(format!("{name}.bias"), vec![cout]);
    if bn {
        for s in ["scale", "shift", "running_mean", "running_var"] {
            out.insert(format!("{name}.bn.{s}"), vec![cout]);
        }
    }
}

/// Every parameter name and shape implied by `cfg`.
pub fn param_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let mut out = BTreeMap::new();
    let k = cfg.conv_kernel;
    conv_shapes(&mut out, "stem.conv", cfg.stem_channels, 1, k, true);
    let mut ch = cfg.stem_channels;
    for (i, b) in cfg.blocks.iter().enumerate() {
        conv_shapes(&mut out, &format!("block{i}.conv1"), b.channels, ch, k, true);
        conv_shapes(&mut out, &format!("block{i}.conv2"), b.channels, b.channels, k, true);
        ch = b.channels;
    }
    if let Some(h) = cfg.head_channels {
        conv_shapes(&mut out, "head.conv", h, ch, 1, false);
    }
    let mut width = cfg.embedding_dim();
    let dims: Vec<usize> = cfg.classifier_hidden.iter().copied().chain([cfg.num_classes]).collect();
    for (i, &d) in dims.iter().enumerate() {
        out.insert(format!("classifier.fc{i}.weight"), vec![d, width]);
        out.insert(format!("classifier.fc{i}.bias"), vec![d]);
        width = d;
    }
    out
}

/// Seeded initialization: weights ~ U(-a, a) with a = sqrt(6 / fan_in),
/// biases and BN shifts 0, BN scales 1, running variance 1.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<Parameters<T>, NnError> {
    cfg.validate()?;
    let root = RngStream::new(seed).derive(0x1417);
    let mut tensors = BTreeMap::new();
    for (i, (name, shape)) in param_shapes(cfg).into_iter().enumerate() {
        let n: usize = shape.iter().product();
        let t = if name.ends_with(".weight") {
            let fan_in: usize = shape[1..].iter().product();
            let a = (6.0 / fan_in as f64).sqrt();
            let mut rng = root.derive(i as u64).rng();
            let data = (0..n).map(|_| T::of(rng.random_range(-a..a))).collect();
            Tensor::from_vec(&shape, data)?
        } else if name.ends_with(".scale") || name.ends_with(".running_var") {
            Tensor::full(&shape, T::one())
        } else {
            Tensor::zeros(&shape)
        };
        tensors.insert(name, t);
    }
    Ok(Parameters { tensors })
}

/// One forward pass worth of state: the graph, mode, which parameter groups
/// receive gradients, the dropout stream and collected BN statistics.
pub struct ForwardCtx<'a, T: Real> {
    pub graph: Graph<T>,
    pub params: &'a Parameters<T>,
    pub mode: Mode,
    pub train_backbone: bool,
    pub train_classifier: bool,
    dropout_rng: Option<ChaCha8Rng>,
    pub batch_stats: Vec<(String, BatchStats<T>)>,
}

impl<'a, T: Real> ForwardCtx<'a, T> {
    pub fn new(params: &'a Parameters<T>, mode: Mode, dropout: Option<&RngStream>) -> Self {
        Self {
            graph: Graph::new(),
            params,
            mode,
            train_backbone: mode == Mode::Train,
            train_classifier: mode == Mode::Train,
            dropout_rng: dropout.filter(|_| mode == Mode::Train).map(RngStream::rng),
            batch_stats: Vec::new(),
        }
    }

    pub fn trainable(mut self, backbone: bool, classifier: bool) -> Self {
        self.train_backbone = backbone;
        self.train_classifier = classifier;
        self
    }

    fn p(&mut self, name: &str) -> Result<NodeId, NnError> {
        let trainable = if is_backbone(name) { self.train_backbone } else { self.train_classifier };
        let t = self.params.get(name)?.clone();
        Ok(self.graph.param(name, t, trainable))
    }

    fn conv(&mut self, x: NodeId, name: &str, stride: usize) -> Result<NodeId, NnError> {
        let w = self.p(&format!("{name}.weight"))?;
        let b = self.p(&format!("{name}.bias"))?;
        self.graph.conv1d(x, w, b, stride)
    }

    fn bn(&mut self, x: NodeId, prefix: &str) -> Result<NodeId, NnError> {
        let prefix = format!("{prefix}.bn");
        let scale = self.p(&format!("{prefix}.scale"))?;
        let shift = self.p(&format!("{prefix}.shift"))?;
        let rm = self.params.get(&format!("{prefix}.running_mean"))?;
        let rv = self.params.get(&format!("{prefix}.running_var"))?;
        let (y, stats) = self.graph.batch_norm(x, scale, shift, (rm, rv), self.mode)?;
        if let Some(s) = stats {
            self.batch_stats.push((prefix, s));
        }
        Ok(y)
    }

    fn dropout(&mut self, x: NodeId, rate: f64) -> NodeId {
        let rng = self.dropout_rng.as_mut();
        self.graph.dropout(x, rate, rng)
    }
}

/// Runs the backbone on a `(B, L)` batch of signals; returns the `(B, D)`
/// embedding node.
pub fn forward_backbone<T: Real>(
    ctx: &mut ForwardCtx<'_, T>,
    cfg: &ModelConfig,
    batch: &Tensor<T>,
) -> Result<NodeId, NnError> {
    let &[b, len] = batch.shape() else {
        return Err(NnError::ShapeMismatch(format!("backbone input {:?}, expected (batch, length)", batch.shape())));
    };
    let input = Tensor::from_vec(&[b, 1, len], batch.data().to_vec())?;
    let x = ctx.graph.input(input);
    let mut x = ctx.conv(x, "stem.conv", cfg.stem_stride)?;
    x = ctx.bn(x, "stem.conv")?;
    x = ctx.graph.relu(x);
    for (i, blk) in cfg.blocks.iter().enumerate() {
        let name = format!("block{i}");
        let mut h = ctx.conv(x, &format!("{name}.conv1"), blk.stride)?;
        h = ctx.bn(h, &format!("{name}.conv1"))?;
        h = ctx.graph.relu(h);
        h = ctx.dropout(h, cfg.dropout_rate);
        h = ctx.conv(h, &format!("{name}.conv2"), 1)?;
        h = ctx.bn(h, &format!("{name}.conv2"))?;
        let shortcut = ctx.graph.skip(x, blk.stride, blk.channels)?;
        let sum = ctx.graph.add(h, shortcut)?;
        x = ctx.graph.relu(sum);
    }
    if cfg.head_channels.is_some() {
        x = ctx.conv(x, "head.conv", 1)?;
        x = ctx.graph.relu(x);
    }
    ctx.graph.global_avg_pool(x)
}

/// Dense-ReLU stack followed by the logits layer.
pub fn forward_classifier<T: Real>(
    ctx: &mut ForwardCtx<'_, T>,
    cfg: &ModelConfig,
    embeddings: NodeId,
) -> Result<NodeId, NnError> {
    let layers = cfg.classifier_hidden.len() + 1;
    let mut x = embeddings;
    for i in 0..layers {
        let w = ctx.p(&format!("classifier.fc{i}.weight"))?;
        let b = ctx.p(&format!("classifier.fc{i}.bias"))?;
        x = ctx.graph.dense(x, w, b)?;
        if i + 1 < layers {
            x = ctx.graph.relu(x);
        }
    }
    Ok(x)
}

/// Eval-mode embeddings for a batch of signals, without gradients.
pub fn embed<T: Real>(params: &Parameters<T>, cfg: &ModelConfig, batch: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let mut ctx = ForwardCtx::new(params, Mode::Eval, None).trainable(false, false);
    let e = forward_backbone(&mut ctx, cfg, batch)?;
    Ok(ctx.graph.value(e).clone())
}

/// Eval-mode logits for precomputed embeddings.
pub fn classify<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    embeddings: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    let mut ctx = ForwardCtx::new(params, Mode::Eval, None).trainable(false, false);
    let e = ctx.graph.input(embeddings.clone());
    let l = forward_classifier(&mut ctx, cfg, e)?;
    Ok(ctx.graph.value(l).clone())
}

/// Arg-max class per row.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    logits
        .rows()
        .map(|r| {
            r.iter().enumerate().fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best }).0
        })
        .collect()
}
