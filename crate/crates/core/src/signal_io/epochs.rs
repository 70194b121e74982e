use std::collections::BTreeMap;

use super::edf::EdfRecording;
use super::hypnogram::{HypnogramEntry, StageLabel};
use super::SignalError;

/// Samples per epoch after resampling.
pub const EPOCH_LEN: usize = 3072;
/// Target variance of a normalized epoch.
pub const TARGET_VARIANCE: f64 = 0.5;
pub const DEFAULT_EPOCH_SECONDS: f64 = 30.0;
pub const DEFAULT_CHANNEL: &str = "EEG Fpz-Cz";

#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub samples: Vec<f32>,
    pub label: Option<StageLabel>,
    pub source_id: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochDataset {
    pub epochs: Vec<Epoch>,
    pub class_histogram: BTreeMap<StageLabel, usize>,
    pub provenance: Vec<String>,
}

impl EpochDataset {
    pub fn new(epochs: Vec<Epoch>, provenance: Vec<String>) -> Self {
        let mut class_histogram = BTreeMap::new();
        for e in &epochs {
            if let Some(l) = e.label {
                *class_histogram.entry(l).or_insert(0) += 1;
            }
        }
        Self { epochs, class_histogram, provenance }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Concatenates datasets in order.
    pub fn merge(parts: impl IntoIterator<Item = EpochDataset>) -> Self {
        let mut epochs = Vec::new();
        let mut provenance = Vec::new();
        for p in parts {
            epochs.extend(p.epochs);
            provenance.extend(p.provenance);
        }
        Self::new(epochs, provenance)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self::new(indices.iter().map(|&i| self.epochs[i].clone()).collect(), self.provenance.clone())
    }

    pub fn histogram_line(&self) -> String {
        StageLabel::ALL
            .iter()
            .map(|l| format!("{}={}", l, self.class_histogram.get(l).copied().unwrap_or(0)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Linear interpolation onto `target_len` points; both endpoints are kept.
pub fn resample(signal: &[f64], target_len: usize) -> Result<Vec<f64>, SignalError> {
    if signal.len() < 2 || target_len < 2 {
        return Err(SignalError::LengthTooShort { len: signal.len().min(target_len) });
    }
    Ok(resample_unchecked(signal, target_len))
}

pub(crate) fn resample_unchecked(signal: &[f64], target_len: usize) -> Vec<f64> {
    let n = signal.len();
    if n == target_len {
        return signal.to_vec();
    }
    let scale = (n - 1) as f64 / (target_len - 1) as f64;
    (0..target_len)
        .map(|j| {
            if j == target_len - 1 {
                return signal[n - 1];
            }
            let pos = j as f64 * scale;
            let i = (pos.floor() as usize).min(n - 2);
            let frac = pos - i as f64;
            signal[i] + (signal[i + 1] - signal[i]) * frac
        })
        .collect()
}

/// Population mean and standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Shifts to zero mean and scales to variance 0.5. Near-constant input
/// (std below 1e-12) maps to all zeros.
pub fn normalize(samples: &[f64]) -> Vec<f64> {
    let (mean, std) = mean_std(samples);
    if std < 1e-12 {
        return vec![0.0; samples.len()];
    }
    let k = TARGET_VARIANCE.sqrt() / std;
    samples.iter().map(|v| (v - mean) * k).collect()
}

/// Resamples a raw window to [`EPOCH_LEN`] and normalizes it.
pub fn prepare_window(window: &[f64]) -> Result<Vec<f32>, SignalError> {
    let resampled = resample(window, EPOCH_LEN)?;
    Ok(normalize(&resampled).into_iter().map(|v| v as f32).collect())
}

/// Cuts the scored parts of a recording into fixed-length labeled epochs.
///
/// Unscored windows and windows running past the end of the signal are
/// dropped. `source_id` of each epoch is `<source>:<channel>:<window index>`.
pub fn extract_epochs(
    record: &EdfRecording,
    hypnogram: &[HypnogramEntry],
    channel_label: &str,
    epoch_seconds: f64,
    source: &str,
) -> Result<EpochDataset, SignalError> {
    let not_found = || SignalError::ChannelNotFound(channel_label.to_string());
    let ch = record.header.channel_index(channel_label).ok_or_else(not_found)?;
    let signal = record.signal(channel_label).ok_or_else(not_found)?;
    let fs = record.header.sample_rate(ch).ok_or_else(not_found)?;
    let window = (epoch_seconds * fs).round() as usize;
    if window < 2 {
        return Err(SignalError::LengthTooShort { len: window });
    }

    let mut epochs = Vec::new();
    for entry in hypnogram {
        let Some(label) = entry.stage else { continue };
        let count = (entry.duration_s / epoch_seconds + 1e-9).floor() as usize;
        for w in 0..count {
            let start_s = entry.onset_s + w as f64 * epoch_seconds;
            let start = (start_s * fs).round() as usize;
            let Some(slice) = signal.get(start..start + window) else { continue };
            epochs.push(Epoch {
                samples: prepare_window(slice)?,
                label: Some(label),
                source_id: format!("{source}:{}:{}", channel_label.trim(), (start_s / epoch_seconds).round() as u64),
            });
        }
    }
    if epochs.is_empty() {
        return Err(SignalError::EmptyDataset);
    }
    Ok(EpochDataset::new(epochs, vec![source.to_string()]))
}
