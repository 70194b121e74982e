//! Sleep-stage annotations: EDF+ time-stamped annotation lists (TALs) and a
//! plain-text fallback table.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::SignalError;

const TAL_DURATION: u8 = 0x15;
const TAL_SEPARATOR: u8 = 0x14;
const TAL_END: u8 = 0x00;

/// The five scored sleep stages, encoded 0..=4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageLabel {
    W = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    Rem = 4,
}

impl StageLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [StageLabel; 5] = [Self::W, Self::N1, Self::N2, Self::N3, Self::Rem];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::W => "W",
            Self::N1 => "N1",
            Self::N2 => "N2",
            Self::N3 => "N3",
            Self::Rem => "REM",
        }
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps a scorer's annotation text to a five-class label.
///
/// R&K stages 3 and 4 both become N3. Movement time, unknown stages and
/// anything unrecognised are unscored (`None`).
pub fn map_stage(stage: &str) -> Option<StageLabel> {
    match stage.trim() {
        "Sleep stage W" => Some(StageLabel::W),
        "Sleep stage 1" => Some(StageLabel::N1),
        "Sleep stage 2" => Some(StageLabel::N2),
        "Sleep stage 3" | "Sleep stage 4" => Some(StageLabel::N3),
        "Sleep stage R" => Some(StageLabel::Rem),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypnogramEntry {
    pub onset_s: f64,
    pub duration_s: f64,
    /// `None` is unscored.
    pub stage: Option<StageLabel>,
}

pub enum HypnogramSource<'a> {
    /// Raw bytes of an EDF+ annotation channel.
    Tal(&'a [u8]),
    /// Whitespace-separated `onset duration stage text...` lines.
    Text(&'a str),
}

pub fn parse_hypnogram(source: HypnogramSource<'_>) -> Result<Vec<HypnogramEntry>, SignalError> {
    let mut entries = match source {
        HypnogramSource::Tal(bytes) => parse_tal(bytes)?,
        HypnogramSource::Text(text) => parse_text(text)?,
    };
    entries.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    for pair in entries.windows(2) {
        let end = pair[0].onset_s + pair[0].duration_s;
        if pair[1].onset_s < end - 1e-9 {
            return Err(SignalError::OverlappingEntries {
                first_onset: pair[0].onset_s,
                second_onset: pair[1].onset_s,
            });
        }
    }
    Ok(entries)
}

fn unparsable(detail: impl Into<String>) -> SignalError {
    SignalError::UnparsableAnnotation(detail.into())
}

fn parse_seconds(text: &str, what: &str) -> Result<f64, SignalError> {
    let v: f64 = text.trim().parse().map_err(|_| unparsable(format!("bad {what} {text:?}")))?;
    if !v.is_finite() {
        return Err(unparsable(format!("bad {what} {text:?}")));
    }
    Ok(v)
}

fn parse_text(text: &str) -> Result<Vec<HypnogramEntry>, SignalError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(onset), Some(duration)) = (fields.next(), fields.next()) else {
            return Err(unparsable(format!("line {}: expected onset, duration and stage", n + 1)));
        };
        let stage: Vec<&str> = fields.collect();
        if stage.is_empty() {
            return Err(unparsable(format!("line {}: missing stage text", n + 1)));
        }
        out.push(entry(parse_seconds(onset, "onset")?, parse_seconds(duration, "duration")?, &stage.join(" "))?);
    }
    Ok(out)
}

fn entry(onset_s: f64, duration_s: f64, text: &str) -> Result<HypnogramEntry, SignalError> {
    if onset_s < 0.0 || duration_s < 0.0 {
        return Err(unparsable(format!("negative time in {onset_s} {duration_s} {text}")));
    }
    Ok(HypnogramEntry { onset_s, duration_s, stage: map_stage(text) })
}

/// Decodes the TALs found in an annotation channel.
///
/// Each TAL is `+onset[\x15duration]\x14text\x14...\x14\x00`; zero bytes pad
/// the remainder of each data record. TALs without annotation text (the
/// per-record timekeeping TAL) produce no entries; TALs without a duration
/// produce zero-length entries.
fn parse_tal(bytes: &[u8]) -> Result<Vec<HypnogramEntry>, SignalError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if bytes[pos] == TAL_END {
            pos += 1;
            continue;
        }
        let end = bytes[pos..]
            .windows(2)
            .position(|w| w == [TAL_SEPARATOR, TAL_END])
            .map(|i| pos + i)
            .ok_or_else(|| unparsable(format!("unterminated TAL at byte {pos}")))?;
        let tal = &bytes[pos..end];
        pos = end + 2;

        let mut parts = tal.split(|&b| b == TAL_SEPARATOR);
        let stamp = parts.next().unwrap_or_default();
        let (onset, duration) = match stamp.iter().position(|&b| b == TAL_DURATION) {
            Some(i) => (&stamp[..i], Some(&stamp[i + 1..])),
            None => (stamp, None),
        };
        let onset = std::str::from_utf8(onset).map_err(|_| unparsable("non-UTF-8 onset"))?;
        if !(onset.starts_with('+') || onset.starts_with('-')) {
            return Err(unparsable(format!("onset {onset:?} lacks a sign")));
        }
        let onset_s = parse_seconds(onset, "onset")?;
        let duration_s = match duration {
            Some(d) => {
                parse_seconds(std::str::from_utf8(d).map_err(|_| unparsable("non-UTF-8 duration"))?, "duration")?
            }
            None => 0.0,
        };
        for text in parts {
            if text.is_empty() {
                continue;
            }
            let text = std::str::from_utf8(text).map_err(|_| unparsable("non-UTF-8 annotation text"))?;
            out.push(entry(onset_s, duration_s, text)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_mapping() {
        assert_eq!(map_stage("Sleep stage W"), Some(StageLabel::W));
        assert_eq!(map_stage("Sleep stage 1"), Some(StageLabel::N1));
        assert_eq!(map_stage("Sleep stage 2"), Some(StageLabel::N2));
        assert_eq!(map_stage("Sleep stage 3"), Some(StageLabel::N3));
        assert_eq!(map_stage("Sleep stage 4"), Some(StageLabel::N3));
        assert_eq!(map_stage("Sleep stage R"), Some(StageLabel::Rem));
        assert_eq!(map_stage("Movement time"), None);
        assert_eq!(map_stage("Sleep stage ?"), None);
        assert_eq!(map_stage(""), None);
    }

    #[test]
    fn text_row() {
        let e = parse_hypnogram(HypnogramSource::Text("0 1800 Sleep stage W\n")).unwrap();
        assert_eq!(e, vec![HypnogramEntry { onset_s: 0.0, duration_s: 1800.0, stage: Some(StageLabel::W) }]);
    }

    #[test]
    fn single_tal() {
        let e = parse_hypnogram(HypnogramSource::Tal(b"+0\x1530\x14Sleep stage 1\x14\x00")).unwrap();
        assert_eq!(e, vec![HypnogramEntry { onset_s: 0.0, duration_s: 30.0, stage: Some(StageLabel::N1) }]);
    }

    #[test]
    fn timekeeping_tals_and_padding_are_skipped() {
        let bytes = b"+0\x14\x14\x00+0\x1560\x14Sleep stage 2\x14\x00\x00\x00\x00+60\x14\x14\x00+60\x1530\x14Movement time\x14\x00";
        let e = parse_hypnogram(HypnogramSource::Tal(bytes)).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].stage, Some(StageLabel::N2));
        assert_eq!(e[1].stage, None);
        assert_eq!(e[1].onset_s, 60.0);
    }

    #[test]
    fn empty_channel_gives_no_entries() {
        assert!(parse_hypnogram(HypnogramSource::Tal(&[0u8; 64])).unwrap().is_empty());
        assert!(parse_hypnogram(HypnogramSource::Text("")).unwrap().is_empty());
    }

    #[test]
    fn entries_come_back_sorted() {
        let e = parse_hypnogram(HypnogramSource::Text("30 30 Sleep stage 2\n0 30 Sleep stage W\n")).unwrap();
        assert_eq!(e[0].onset_s, 0.0);
        assert_eq!(e[1].onset_s, 30.0);
    }

    #[test]
    fn overlap_is_rejected() {
        let r = parse_hypnogram(HypnogramSource::Text("0 60 Sleep stage W\n30 30 Sleep stage 1\n"));
        assert!(matches!(r, Err(SignalError::OverlappingEntries { .. })));
    }

    #[test]
    fn garbage_is_unparsable() {
        for bad in [&b"+0\x1530\x14Sleep stage 1"[..], b"0\x14x\x14\x00", b"+abc\x14x\x14\x00"] {
            assert!(matches!(parse_hypnogram(HypnogramSource::Tal(bad)), Err(SignalError::UnparsableAnnotation(_))));
        }
        assert!(parse_hypnogram(HypnogramSource::Text("zero 30 Sleep stage W")).is_err());
        assert!(parse_hypnogram(HypnogramSource::Text("0 30")).is_err());
    }
}
