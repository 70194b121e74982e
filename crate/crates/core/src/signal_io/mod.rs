//! Recording ingestion: EDF/EDF+ decoding, hypnograms, epoching and the
//! dataset cache.

pub mod cache;
pub mod edf;
pub mod epochs;
pub mod hypnogram;

pub use cache::{read_dataset, record_key, write_dataset, DATASET_MAGIC};
pub use edf::{parse_edf, parse_header, serialize_header, write_edf, ChannelSpec, EdfHeader, EdfRecording};
pub use epochs::{
    extract_epochs, mean_std, normalize, prepare_window, resample, Epoch, EpochDataset, DEFAULT_CHANNEL,
    DEFAULT_EPOCH_SECONDS, EPOCH_LEN,
};
pub use hypnogram::{map_stage, parse_hypnogram, HypnogramEntry, HypnogramSource, StageLabel};

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("truncated file: expected at least {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("malformed header field `{field}`: {value:?}")]
    MalformedHeader { field: &'static str, value: String },
    #[error("degenerate calibration on channel {channel:?}")]
    DegenerateCalibration { channel: String },
    #[error("unparsable annotation: {0}")]
    UnparsableAnnotation(String),
    #[error("overlapping hypnogram entries at {first_onset}s and {second_onset}s")]
    OverlappingEntries { first_onset: f64, second_onset: f64 },
    #[error("sequence too short to resample (length {len})")]
    LengthTooShort { len: usize },
    #[error("channel {0:?} not found")]
    ChannelNotFound(String),
    #[error("no scored epochs extracted")]
    EmptyDataset,
    #[error("bad magic: expected {expected}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("epoch has {found} samples, expected 3072")]
    BadEpochLength { found: usize },
    #[error("invalid label code {0}")]
    BadLabel(i8),
    #[error("source id is not UTF-8")]
    BadSourceId,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
