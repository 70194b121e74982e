//! Run configuration: line-oriented `key = value` text with dotted keys.
//!
//! Values may be bare or double-quoted; `#` starts a comment outside of
//! quotes. Every key has a default, unknown keys are rejected, and
//! [`RunConfig::to_text`] renders the fully resolved configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use sleep_ssl::contrastive::LossMode;
use sleep_ssl::nn::{ModelConfig, Preset};
use sleep_ssl::signal_io::{DEFAULT_CHANNEL, DEFAULT_EPOCH_SECONDS};
use sleep_ssl::training::{SplitSpec, SplitUnit, TrainConfig};
use sleep_ssl::transforms::TransformSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Labeled dataset cache used by the downstream protocols.
    pub dataset: Option<PathBuf>,
    /// Pretraining cache; when unset the training split of `dataset` is used.
    pub unlabeled: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub channel: String,
    pub epoch_seconds: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::tiny();
        Self {
            dataset: None,
            unlabeled: None,
            checkpoint: None,
            channel: DEFAULT_CHANNEL.to_string(),
            epoch_seconds: DEFAULT_EPOCH_SECONDS,
            model,
            train: TrainConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

/// Splits config text into raw key/value pairs. Syntax problems are
/// collected rather than reported one at a time.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>, Vec<String>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            errors.push(format!("line {}: expected `key = value`, found {line:?}", n + 1));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        let value = match v.strip_prefix('"') {
            Some(rest) => match rest.strip_suffix('"') {
                Some(inner) => inner.to_string(),
                None => {
                    errors.push(format!("line {}: unterminated string for `{k}`", n + 1));
                    continue;
                }
            },
            None => v.to_string(),
        };
        if k.is_empty() {
            errors.push(format!("line {}: empty key", n + 1));
        } else {
            out.push((k.to_string(), value));
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

impl RunConfig {
    /// Builds a config from text, reporting every invalid or unknown key.
    pub fn from_text(text: &str) -> Result<Self, Vec<String>> {
        let pairs = parse_lines(text)?;
        let mut cfg = Self::default();
        let mut errors = Vec::new();
        // The model preset and transform kinds reset their dependent keys,
        // so they are applied first.
        let order = |k: &str| match k {
            "model.preset" | "transform.t1" | "transform.t2" => 0,
            _ => 1,
        };
        let mut sorted: Vec<&(String, String)> = pairs.iter().collect();
        sorted.sort_by_key(|(k, _)| order(k));
        for (k, v) in sorted {
            if let Err(e) = cfg.set(k, v) {
                errors.push(e);
            }
        }
        if errors.is_empty() {
            if let Err(e) = cfg.model.validate() {
                errors.push(e.to_string());
            }
            if let Err(e) = cfg.train.validate() {
                errors.push(e.to_string());
            }
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(errors)
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "data.cache" => self.dataset = path(v),
            "data.unlabeled" => self.unlabeled = path(v),
            "data.channel" => self.channel = v.to_string(),
            "data.epoch_seconds" => self.epoch_seconds = parse_num(key, v)?,
            "checkpoint" => self.checkpoint = path(v),
            "seed" => t.seed = parse_num(key, v)?,
            "model.preset" => {
                let preset = Preset::parse(v).filter(|p| *p != Preset::Custom);
                let preset = preset.ok_or_else(|| format!("model.preset: expected paper18 or tiny, found {v:?}"))?;
                self.model = ModelConfig::from_preset(preset);
            }
            "model.conv_kernel" => self.model.conv_kernel = parse_num(key, v)?,
            "model.dropout" => self.model.dropout_rate = parse_num(key, v)?,
            "train.temperature" => t.temperature = parse_num(key, v)?,
            "train.ssl_batch" => t.ssl_batch = parse_num(key, v)?,
            "train.cls_batch" => t.cls_batch = parse_num(key, v)?,
            "train.ssl_epochs" => t.ssl_epochs = parse_num(key, v)?,
            "train.cls_epochs" => t.cls_epochs = parse_num(key, v)?,
            "train.ssl_lr" => t.ssl_lr = parse_num(key, v)?,
            "train.cls_lr" => t.cls_lr = parse_num(key, v)?,
            "train.warmup_epochs" => t.warmup_epochs = parse_num(key, v)?,
            "train.momentum" => t.momentum = parse_num(key, v)?,
            "train.l2" => t.l2 = parse_num(key, v)?,
            "train.loss_mode" => {
                t.loss_mode = LossMode::parse(v)
                    .ok_or_else(|| format!("train.loss_mode: expected paper or symmetric, found {v:?}"))?
            }
            "transform.t1" | "transform.t2" => {
                let spec = TransformSpec::from_name(v).map_err(|e| format!("{key}: {e}"))?;
                if key == "transform.t1" {
                    t.transforms.0 = spec;
                } else {
                    t.transforms.1 = spec;
                }
            }
            "split.unit" => {
                self.split.unit = SplitUnit::parse(v)
                    .ok_or_else(|| format!("split.unit: expected subject, record or epoch, found {v:?}"))?
            }
            "split.test_fraction" => self.split.test_fraction = parse_num(key, v)?,
            "split.k_per_class" => self.split.k_per_class = Some(parse_num(key, v)?),
            "split.repetitions" => self.split.repetitions = parse_num(key, v)?,
            _ => {
                let param = key.strip_prefix("transform.t1.").map(|p| (0, p));
                let param = param.or_else(|| key.strip_prefix("transform.t2.").map(|p| (1, p)));
                let Some((slot, name)) = param else {
                    return Err(format!("unknown key `{key}`"));
                };
                let spec = if slot == 0 { &mut t.transforms.0 } else { &mut t.transforms.1 };
                spec.set_param(name, v).map_err(|e| format!("{key}: {e}"))?;
            }
        }
        Ok(())
    }

    /// Fully resolved configuration, defaults included, in the input syntax.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let t = &self.train;
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = \"{v}\"");
        };
        line("data.cache", path(&self.dataset));
        line("data.unlabeled", path(&self.unlabeled));
        line("data.channel", self.channel.clone());
        line("data.epoch_seconds", self.epoch_seconds.to_string());
        line("checkpoint", path(&self.checkpoint));
        line("seed", t.seed.to_string());
        line("model.preset", self.model.preset.name().to_string());
        line("model.conv_kernel", self.model.conv_kernel.to_string());
        line("model.dropout", self.model.dropout_rate.to_string());
        line("train.temperature", t.temperature.to_string());
        line("train.ssl_batch", t.ssl_batch.to_string());
        line("train.cls_batch", t.cls_batch.to_string());
        line("train.ssl_epochs", t.ssl_epochs.to_string());
        line("train.cls_epochs", t.cls_epochs.to_string());
        line("train.ssl_lr", t.ssl_lr.to_string());
        line("train.cls_lr", t.cls_lr.to_string());
        line("train.warmup_epochs", t.warmup_epochs.to_string());
        line("train.momentum", t.momentum.to_string());
        line("train.l2", t.l2.to_string());
        line("train.loss_mode", t.loss_mode.name().to_string());
        for (slot, spec) in [("t1", &t.transforms.0), ("t2", &t.transforms.1)] {
            line(&format!("transform.{slot}"), spec.kind().name().to_string());
            for (name, value) in spec.params() {
                line(&format!("transform.{slot}.{name}"), value);
            }
        }
        line("split.unit", self.split.unit.name().to_string());
        line("split.test_fraction", self.split.test_fraction.to_string());
        if let Some(k) = self.split.k_per_class {
            line("split.k_per_class", k.to_string());
        }
        line("split.repetitions", self.split.repetitions.to_string());
        s
    }
}
