use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::TrainError;
use crate::signal_io::{record_key, EpochDataset, StageLabel};
use crate::transforms::RngStream;

/// Grouping used to keep train and test disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitUnit {
    Subject,
    Record,
    Epoch,
}

impl SplitUnit {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "subject" => Some(Self::Subject),
            "record" => Some(Self::Record),
            "epoch" => Some(Self::Epoch),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Subject => "subject",
            Self::Record => "record",
            Self::Epoch => "epoch",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub unit: SplitUnit,
    /// Fraction of groups (taken from the end of the sorted key list) held
    /// out for testing.
    pub test_fraction: f64,
    pub k_per_class: Option<usize>,
    pub repetitions: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { unit: SplitUnit::Subject, test_fraction: 0.2, k_per_class: None, repetitions: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Subject identifier of a record. Sleep-EDF style names (`SC4ssN...`,
/// `ST7ssN...`) carry the subject in their first five characters; anything
/// else is its own subject.
pub fn subject_key(source_id: &str) -> &str {
    let record = record_key(source_id);
    let source = record.split(':').next().unwrap_or(record);
    let b = source.as_bytes();
    let sleep_edf =
        b.len() >= 6 && b[0] == b'S' && (b[1] == b'C' || b[1] == b'T') && b[2..5].iter().all(u8::is_ascii_digit);
    if sleep_edf {
        &source[..5]
    } else {
        source
    }
}

/// Deterministic split: group keys are sorted and the last
/// `round(test_fraction * groups)` groups (at least one) form the test set. In epoch mode
/// each epoch is its own group, in dataset order.
pub fn split_dataset(data: &EpochDataset, spec: &SplitSpec) -> Result<Split, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(TrainError::InvalidConfig(format!("test_fraction {} outside (0, 1)", spec.test_fraction)));
    }
    let n = data.len();
    let held_out = |groups: usize| ((spec.test_fraction * groups as f64).round() as usize).clamp(1, groups.max(2) - 1);
    if spec.unit == SplitUnit::Epoch {
        if n < 2 {
            return Err(TrainError::InvalidConfig("need at least 2 epochs to split".into()));
        }
        let cut = n - held_out(n);
        return Ok(Split { train: (0..cut).collect(), test: (cut..n).collect() });
    }
    let key = |i: usize| -> &str {
        let id = &data.epochs[i].source_id;
        match spec.unit {
            SplitUnit::Subject => subject_key(id),
            _ => record_key(id),
        }
    };
    let groups: BTreeSet<&str> = (0..n).map(key).collect();
    if groups.len() < 2 {
        return Err(TrainError::InvalidConfig(format!("need at least 2 {}s to split, found 1", spec.unit.name())));
    }
    let test_groups: BTreeSet<&str> = groups.iter().rev().take(held_out(groups.len())).copied().collect();
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| test_groups.contains(key(i)));
    Ok(Split { train, test })
}

/// Draws `k` indices per class present in `pool`, without replacement,
/// reproducibly from `stream`. The result is sorted.
pub fn draw_per_class(
    data: &EpochDataset,
    pool: &[usize],
    k: usize,
    stream: &RngStream,
) -> Result<Vec<usize>, TrainError> {
    let mut by_class: BTreeMap<StageLabel, Vec<usize>> = BTreeMap::new();
    for &i in pool {
        let label = data.epochs[i].label.ok_or(TrainError::Unlabeled { index: i })?;
        by_class.entry(label).or_default().push(i);
    }
    let mut out = Vec::with_capacity(k * by_class.len());
    for (label, mut members) in by_class {
        if members.len() < k {
            return Err(TrainError::InsufficientClassSamples {
                class: label.name().to_string(),
                needed: k,
                available: members.len(),
            });
        }
        members.shuffle(&mut stream.derive(label.index() as u64).rng());
        out.extend_from_slice(&members[..k]);
    }
    out.sort_unstable();
    Ok(out)
}
