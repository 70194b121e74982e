//! Stochastic signal transformations used to build contrastive view pairs.
//!
//! Every transform maps a length-L sequence to a length-L sequence and draws
//! randomness only from the generator it is handed. The `*_with` functions
//! are the deterministic cores with all random choices made explicit.

mod rng;

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::signal_io::epochs::{mean_std, resample_unchecked};
pub use rng::RngStream;

/// Preferred minimum segment length when splitting.
const MIN_SEGMENT: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("input of length {len} is too short for {segments} segments")]
    InputTooShort { len: usize, segments: usize },
    #[error("invalid transform spec: {0}")]
    InvalidSpec(String),
}

/// How many segments a split produces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentCount {
    Fixed(usize),
    /// Uniform integer in `min..=max`.
    Uniform {
        min: usize,
        max: usize,
    },
}

impl SegmentCount {
    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> usize {
        match self {
            Self::Fixed(n) => n,
            Self::Uniform { min, max } => rng.random_range(min..=max),
        }
    }

    fn max(self) -> usize {
        match self {
            Self::Fixed(n) => n,
            Self::Uniform { max, .. } => max,
        }
    }

    fn validate(self) -> Result<(), TransformError> {
        let ok = match self {
            Self::Fixed(n) => n >= 1,
            Self::Uniform { min, max } => min >= 1 && min <= max,
        };
        ok.then_some(()).ok_or_else(|| TransformError::InvalidSpec(format!("segment count {self:?}")))
    }
}

impl fmt::Display for SegmentCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(n) => write!(f, "{n}"),
            Self::Uniform { min, max } => write!(f, "{min}..{max}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Identity,
    TimeWarp,
    GaussianNoise,
    HorizontalFlip,
    Permutation,
    CutoutResize,
    CropResize,
    AverageFilter,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        Self::Identity,
        Self::TimeWarp,
        Self::GaussianNoise,
        Self::HorizontalFlip,
        Self::Permutation,
        Self::CutoutResize,
        Self::CropResize,
        Self::AverageFilter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::TimeWarp => "time_warp",
            Self::GaussianNoise => "gaussian_noise",
            Self::HorizontalFlip => "horizontal_flip",
            Self::Permutation => "permutation",
            Self::CutoutResize => "cutout_resize",
            Self::CropResize => "crop_resize",
            Self::AverageFilter => "average_filter",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// One transformation with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformSpec {
    Identity,
    TimeWarp { segments: SegmentCount, scale_range: (f64, f64) },
    GaussianNoise { mu: f64, sigma_ratio: f64 },
    HorizontalFlip,
    Permutation { segments: SegmentCount },
    CutoutResize { segments: SegmentCount },
    CropResize { segments: SegmentCount },
    AverageFilter { k_range: (usize, usize) },
}

impl TransformSpec {
    /// Default parameters for each kind.
    pub fn default_for(kind: TransformKind) -> Self {
        match kind {
            TransformKind::Identity => Self::Identity,
            TransformKind::TimeWarp => {
                Self::TimeWarp { segments: SegmentCount::Uniform { min: 4, max: 8 }, scale_range: (0.25, 4.0) }
            }
            TransformKind::GaussianNoise => Self::GaussianNoise { mu: 0.0, sigma_ratio: 0.1 },
            TransformKind::HorizontalFlip => Self::HorizontalFlip,
            TransformKind::Permutation => Self::Permutation { segments: SegmentCount::Uniform { min: 4, max: 8 } },
            TransformKind::CutoutResize => Self::CutoutResize { segments: SegmentCount::Uniform { min: 3, max: 6 } },
            TransformKind::CropResize => Self::CropResize { segments: SegmentCount::Uniform { min: 2, max: 4 } },
            TransformKind::AverageFilter => Self::AverageFilter { k_range: (3, 10) },
        }
    }

    pub fn from_name(name: &str) -> Result<Self, TransformError> {
        TransformKind::from_name(name)
            .map(Self::default_for)
            .ok_or_else(|| TransformError::InvalidSpec(format!("unknown transform {name:?}")))
    }

    pub fn kind(&self) -> TransformKind {
        match self {
            Self::Identity => TransformKind::Identity,
            Self::TimeWarp { .. } => TransformKind::TimeWarp,
            Self::GaussianNoise { .. } => TransformKind::GaussianNoise,
            Self::HorizontalFlip => TransformKind::HorizontalFlip,
            Self::Permutation { .. } => TransformKind::Permutation,
            Self::CutoutResize { .. } => TransformKind::CutoutResize,
            Self::CropResize { .. } => TransformKind::CropResize,
            Self::AverageFilter { .. } => TransformKind::AverageFilter,
        }
    }

    /// Parameter names accepted by [`TransformSpec::set_param`].
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Self::Identity | Self::HorizontalFlip => &[],
            Self::TimeWarp { .. } => &["num_segments", "scale_min", "scale_max"],
            Self::GaussianNoise { .. } => &["mu", "sigma_ratio"],
            Self::Permutation { .. } | Self::CutoutResize { .. } | Self::CropResize { .. } => &["num_segments"],
            Self::AverageFilter { .. } => &["k_min", "k_max"],
        }
    }

    /// Current parameter values in the syntax accepted by `set_param`.
    pub fn params(&self) -> Vec<(&'static str, String)> {
        match self {
            Self::Identity | Self::HorizontalFlip => Vec::new(),
            Self::TimeWarp { segments, scale_range } => vec![
                ("num_segments", segments.to_string()),
                ("scale_min", scale_range.0.to_string()),
                ("scale_max", scale_range.1.to_string()),
            ],
            Self::GaussianNoise { mu, sigma_ratio } => {
                vec![("mu", mu.to_string()), ("sigma_ratio", sigma_ratio.to_string())]
            }
            Self::Permutation { segments } | Self::CutoutResize { segments } | Self::CropResize { segments } => {
                vec![("num_segments", segments.to_string())]
            }
            Self::AverageFilter { k_range } => vec![("k_min", k_range.0.to_string()), ("k_max", k_range.1.to_string())],
        }
    }

    /// Overrides one parameter from its textual config value.
    ///
    /// `num_segments` accepts either `n` or `lo..hi`.
    pub fn set_param(&mut self, key: &str, value: &str) -> Result<(), TransformError> {
        let bad = || TransformError::InvalidSpec(format!("{}.{key} = {value:?}", self.kind().name()));
        let real = || value.trim().parse::<f64>().map_err(|_| bad());
        let int = || value.trim().parse::<usize>().map_err(|_| bad());
        let segs = || -> Result<SegmentCount, TransformError> {
            match value.trim().split_once("..") {
                Some((a, b)) => Ok(SegmentCount::Uniform {
                    min: a.trim().parse().map_err(|_| bad())?,
                    max: b.trim().parse().map_err(|_| bad())?,
                }),
                None => Ok(SegmentCount::Fixed(int()?)),
            }
        };
        let mut next = self.clone();
        match (&mut next, key) {
            (Self::TimeWarp { segments, .. }, "num_segments")
            | (Self::Permutation { segments }, "num_segments")
            | (Self::CutoutResize { segments }, "num_segments")
            | (Self::CropResize { segments }, "num_segments") => *segments = segs()?,
            (Self::TimeWarp { scale_range, .. }, "scale_min") => scale_range.0 = real()?,
            (Self::TimeWarp { scale_range, .. }, "scale_max") => scale_range.1 = real()?,
            (Self::GaussianNoise { mu, .. }, "mu") => *mu = real()?,
            (Self::GaussianNoise { sigma_ratio, .. }, "sigma_ratio") => *sigma_ratio = real()?,
            (Self::AverageFilter { k_range }, "k_min") => k_range.0 = int()?,
            (Self::AverageFilter { k_range }, "k_max") => k_range.1 = int()?,
            _ => return Err(TransformError::InvalidSpec(format!("{} has no parameter {key:?}", self.kind().name()))),
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), TransformError> {
        match *self {
            Self::Identity | Self::HorizontalFlip => Ok(()),
            Self::TimeWarp { segments, scale_range: (lo, hi) } => {
                segments.validate()?;
                if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                    return Err(TransformError::InvalidSpec(format!("scale range [{lo}, {hi}]")));
                }
                Ok(())
            }
            Self::GaussianNoise { mu, sigma_ratio } => {
                if !(mu.is_finite() && sigma_ratio.is_finite() && sigma_ratio >= 0.0) {
                    return Err(TransformError::InvalidSpec(format!("noise mu={mu} sigma_ratio={sigma_ratio}")));
                }
                Ok(())
            }
            Self::Permutation { segments } | Self::CutoutResize { segments } | Self::CropResize { segments } => {
                segments.validate()
            }
            Self::AverageFilter { k_range: (lo, hi) } => {
                if lo == 0 || lo > hi {
                    return Err(TransformError::InvalidSpec(format!("filter length range [{lo}, {hi}]")));
                }
                Ok(())
            }
        }
    }

    /// Applies the transform, drawing all random choices from `rng`.
    pub fn apply<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>, TransformError> {
        self.validate()?;
        if let Some(n) = self.segment_count() {
            check_len(x.len(), n.max().max(1))?;
        }
        match *self {
            Self::Identity => Ok(x.to_vec()),
            Self::TimeWarp { segments, scale_range } => time_warp(x, segments, scale_range, rng),
            Self::GaussianNoise { mu, sigma_ratio } => Ok(gaussian_noise(x, mu, sigma_ratio, rng)),
            Self::HorizontalFlip => Ok(horizontal_flip(x)),
            Self::Permutation { segments } => permutation(x, segments, rng),
            Self::CutoutResize { segments } => cutout_resize(x, segments, rng),
            Self::CropResize { segments } => crop_resize(x, segments, rng),
            Self::AverageFilter { k_range } => Ok(average_filter(x, k_range, rng)),
        }
    }

    fn segment_count(&self) -> Option<SegmentCount> {
        match *self {
            Self::TimeWarp { segments, .. }
            | Self::Permutation { segments }
            | Self::CutoutResize { segments }
            | Self::CropResize { segments } => Some(segments),
            _ => None,
        }
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind().name())?;
        match self {
            Self::TimeWarp { segments, scale_range } => {
                write!(f, "(segments={segments}, scale=[{}, {}])", scale_range.0, scale_range.1)
            }
            Self::GaussianNoise { mu, sigma_ratio } => write!(f, "(mu={mu}, sigma_ratio={sigma_ratio})"),
            Self::Permutation { segments } | Self::CutoutResize { segments } | Self::CropResize { segments } => {
                write!(f, "(segments={segments})")
            }
            Self::AverageFilter { k_range } => write!(f, "(k={}..{})", k_range.0, k_range.1),
            Self::Identity | Self::HorizontalFlip => Ok(()),
        }
    }
}

fn check_len(len: usize, segments: usize) -> Result<(), TransformError> {
    if len < 2 * segments {
        return Err(TransformError::InputTooShort { len, segments });
    }
    Ok(())
}

/// Draws `n - 1` sorted cut points splitting `len` samples into `n`
/// contiguous segments, uniformly over all splits whose segments are at
/// least `min(8, len / n)` long.
pub fn random_cuts<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>, TransformError> {
    check_len(len, n.max(1))?;
    if n <= 1 {
        return Ok(Vec::new());
    }
    let min_len = MIN_SEGMENT.min(len / n);
    // Stars and bars: choose n-1 of (slack + n - 1) slots.
    let slack = len - min_len * n;
    let mut slots = rand::seq::index::sample(rng, slack + n - 1, n - 1).into_vec();
    slots.sort_unstable();
    Ok(slots.iter().enumerate().map(|(j, &s)| min_len * (j + 1) + (s - j)).collect())
}

/// Splits `x` at the given sorted cut points.
pub fn split_at_cuts<'a>(x: &'a [f64], cuts: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for &c in cuts {
        out.push(&x[start..c]);
        start = c;
    }
    out.push(&x[start..]);
    out
}

fn resize(x: &[f64], len: usize) -> Vec<f64> {
    if x.len() < 2 {
        return vec![x.first().copied().unwrap_or(0.0); len];
    }
    resample_unchecked(x, len)
}

/// Resamples segment `i` by `factors[i]` (new length `round(len / ω)`, at
/// least 2), concatenates, and resizes back to the input length.
pub fn time_warp_with(x: &[f64], cuts: &[usize], factors: &[f64]) -> Vec<f64> {
    let segs = split_at_cuts(x, cuts);
    assert_eq!(segs.len(), factors.len(), "one scale factor per segment");
    let mut joined = Vec::with_capacity(x.len());
    for (seg, &w) in segs.iter().zip(factors) {
        let target = ((seg.len() as f64 / w).round() as usize).max(2);
        joined.extend(resize(seg, target));
    }
    resize(&joined, x.len())
}

pub fn time_warp<R: Rng + ?Sized>(
    x: &[f64],
    segments: SegmentCount,
    (lo, hi): (f64, f64),
    rng: &mut R,
) -> Result<Vec<f64>, TransformError> {
    let n = segments.sample(rng);
    let cuts = random_cuts(x.len(), n, rng)?;
    let factors: Vec<f64> = (0..n).map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) }).collect();
    Ok(time_warp_with(x, &cuts, &factors))
}

/// Adds i.i.d. Gaussian noise with mean `mu` and standard deviation
/// `sigma_ratio * std(x)`.
pub fn gaussian_noise<R: Rng + ?Sized>(x: &[f64], mu: f64, sigma_ratio: f64, rng: &mut R) -> Vec<f64> {
    let sigma = sigma_ratio * mean_std(x).1;
    if sigma == 0.0 && mu == 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + mu + sigma * z
        })
        .collect()
}

pub fn horizontal_flip(x: &[f64]) -> Vec<f64> {
    x.iter().rev().copied().collect()
}

/// Concatenates the segments in the order given by `order`.
pub fn permute_with(x: &[f64], cuts: &[usize], order: &[usize]) -> Vec<f64> {
    let segs = split_at_cuts(x, cuts);
    assert_eq!(segs.len(), order.len(), "order must cover every segment");
    order.iter().flat_map(|&i| segs[i].iter().copied()).collect()
}

pub fn permutation<R: Rng + ?Sized>(
    x: &[f64],
    segments: SegmentCount,
    rng: &mut R,
) -> Result<Vec<f64>, TransformError> {
    let n = segments.sample(rng);
    let cuts = random_cuts(x.len(), n, rng)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(permute_with(x, &cuts, &order))
}

/// Drops segment `drop`, concatenates the rest and resizes to the input length.
pub fn cutout_with(x: &[f64], cuts: &[usize], drop: usize) -> Vec<f64> {
    let segs = split_at_cuts(x, cuts);
    if segs.len() == 1 {
        return x.to_vec();
    }
    let kept: Vec<f64> =
        segs.iter().enumerate().filter(|&(i, _)| i != drop).flat_map(|(_, s)| s.iter().copied()).collect();
    resize(&kept, x.len())
}

pub fn cutout_resize<R: Rng + ?Sized>(
    x: &[f64],
    segments: SegmentCount,
    rng: &mut R,
) -> Result<Vec<f64>, TransformError> {
    let n = segments.sample(rng);
    let cuts = random_cuts(x.len(), n, rng)?;
    let drop = rng.random_range(0..n);
    Ok(cutout_with(x, &cuts, drop))
}

/// Keeps segment `keep` only and resizes it to the input length.
pub fn crop_with(x: &[f64], cuts: &[usize], keep: usize) -> Vec<f64> {
    resize(split_at_cuts(x, cuts)[keep], x.len())
}

pub fn crop_resize<R: Rng + ?Sized>(
    x: &[f64],
    segments: SegmentCount,
    rng: &mut R,
) -> Result<Vec<f64>, TransformError> {
    let n = segments.sample(rng);
    let cuts = random_cuts(x.len(), n, rng)?;
    let keep = rng.random_range(0..n);
    Ok(crop_with(x, &cuts, keep))
}

/// Forward moving average over `[t, t + k - 1]`; positions past the end
/// repeat the last sample.
pub fn moving_average(x: &[f64], k: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 || k <= 1 {
        return x.to_vec();
    }
    let last = x[n - 1];
    let at = |i: usize| if i < n { x[i] } else { last };
    let inv = 1.0 / k as f64;
    (0..n).map(|t| (0..k).map(|i| at(t + i)).sum::<f64>() * inv).collect()
}

pub fn average_filter<R: Rng + ?Sized>(x: &[f64], (lo, hi): (usize, usize), rng: &mut R) -> Vec<f64> {
    let k = rng.random_range(lo..=hi);
    moving_average(x, k)
}

/// Builds the two views `(T1(x), T2(x))` of one epoch. Each view draws from
/// its own child stream of `stream`.
pub fn make_view_pair(
    x: &[f64],
    t1: &TransformSpec,
    t2: &TransformSpec,
    stream: &RngStream,
) -> Result<(Vec<f64>, Vec<f64>), TransformError> {
    let v1 = t1.apply(x, &mut stream.derive(0).rng())?;
    let v2 = t2.apply(x, &mut stream.derive(1).rng())?;
    Ok((v1, v2))
}
