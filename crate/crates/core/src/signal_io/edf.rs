//! EDF / EDF+ decoding.
//!
//! A file is a 256-byte fixed-width ASCII header, 256 more bytes per
//! channel, then `num_data_records` data records. Each record holds every
//! channel's samples back to back as 16-bit little-endian integers.

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

use super::SignalError;

/// Label used by EDF+ for time-stamped annotation channels.
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

const FIXED_HEADER_BYTES: usize = 256;
const CHANNEL_HEADER_BYTES: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefiltering: String,
    pub samples_per_record: usize,
    pub reserved: String,
}

impl ChannelSpec {
    pub fn is_annotation(&self) -> bool {
        self.label.trim() == ANNOTATION_LABEL
    }

    /// Maps a raw digital sample to physical units.
    pub fn to_physical(&self, digital: i16) -> f64 {
        let d = f64::from(digital);
        let dmin = f64::from(self.digital_min);
        let dmax = f64::from(self.digital_max);
        self.physical_min + (d - dmin) * (self.physical_max - self.physical_min) / (dmax - dmin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfHeader {
    pub version: String,
    pub patient_info: String,
    pub recording_info: String,
    pub start_datetime: NaiveDateTime,
    pub header_bytes: usize,
    /// EDF+ reserved field ("EDF+C", "EDF+D" or blank).
    pub reserved: String,
    /// -1 when the writer did not know the count; resolved on read.
    pub num_data_records: i64,
    pub record_duration_s: f64,
    pub channels: Vec<ChannelSpec>,
}

impl EdfHeader {
    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.label.trim() == label.trim())
    }

    fn record_bytes(&self) -> usize {
        self.channels.iter().map(|c| c.samples_per_record * 2).sum()
    }

    pub fn is_annotation_only(&self) -> bool {
        !self.channels.is_empty() && self.channels.iter().all(ChannelSpec::is_annotation)
    }

    /// Sampling rate of one channel in Hz.
    pub fn sample_rate(&self, channel: usize) -> Option<f64> {
        let c = self.channels.get(channel)?;
        (self.record_duration_s > 0.0).then(|| c.samples_per_record as f64 / self.record_duration_s)
    }
}

/// A decoded recording: header, physical samples for ordinary channels and
/// raw bytes for annotation channels.
#[derive(Debug, Clone)]
pub struct EdfRecording {
    pub header: EdfHeader,
    /// One entry per channel; empty for annotation channels.
    pub signals: Vec<Vec<f64>>,
    /// One entry per channel; the concatenated raw record bytes of
    /// annotation channels, empty for ordinary channels.
    pub annotations: Vec<Vec<u8>>,
}

impl EdfRecording {
    pub fn signal(&self, label: &str) -> Option<&[f64]> {
        let i = self.header.channel_index(label)?;
        (!self.header.channels[i].is_annotation()).then(|| self.signals[i].as_slice())
    }

    /// All annotation-channel bytes, in channel order.
    pub fn annotation_bytes(&self) -> Vec<u8> {
        self.annotations.iter().flatten().copied().collect()
    }
}

struct FieldReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> FieldReader<'a> {
    fn text(&mut self, width: usize, field: &'static str) -> Result<String, SignalError> {
        let end = self.pos + width;
        let raw = self
            .bytes
            .get(self.pos..end)
            .ok_or(SignalError::TruncatedFile { expected: end, found: self.bytes.len() })?;
        self.pos = end;
        if !raw.is_ascii() {
            return Err(SignalError::MalformedHeader { field, value: String::from_utf8_lossy(raw).into_owned() });
        }
        // ASCII checked above.
        Ok(String::from_utf8(raw.to_vec()).unwrap_or_default())
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, field: &'static str) -> Result<T, SignalError> {
        let raw = self.text(width, field)?;
        raw.trim().parse().map_err(|_| SignalError::MalformedHeader { field, value: raw.trim().to_string() })
    }
}

fn parse_start(date: &str, time: &str) -> Result<NaiveDateTime, SignalError> {
    let bad = |field, value: &str| SignalError::MalformedHeader { field, value: value.to_string() };
    let parts = |s: &str| -> Option<[u32; 3]> {
        let mut it = s.trim().split('.').map(|p| p.parse::<u32>().ok());
        let v = [it.next()??, it.next()??, it.next()??];
        it.next().is_none().then_some(v)
    };
    let [dd, mm, yy] = parts(date).ok_or_else(|| bad("startdate", date))?;
    let [h, m, s] = parts(time).ok_or_else(|| bad("starttime", time))?;
    // EDF clipping-date convention: 85..99 -> 19xx, otherwise 20xx.
    let year = if yy >= 85 { 1900 + yy } else { 2000 + yy } as i32;
    let d = NaiveDate::from_ymd_opt(year, mm, dd).ok_or_else(|| bad("startdate", date))?;
    let t = NaiveTime::from_hms_opt(h, m, s).ok_or_else(|| bad("starttime", time))?;
    Ok(NaiveDateTime::new(d, t))
}

/// Parses the fixed-width header block (main header and channel headers).
pub fn parse_header(bytes: &[u8]) -> Result<EdfHeader, SignalError> {
    if bytes.len() < FIXED_HEADER_BYTES {
        return Err(SignalError::TruncatedFile { expected: FIXED_HEADER_BYTES, found: bytes.len() });
    }
    let mut r = FieldReader { bytes, pos: 0 };
    let version = r.text(8, "version")?.trim().to_string();
    let patient_info = r.text(80, "patient")?.trim_end().to_string();
    let recording_info = r.text(80, "recording")?.trim_end().to_string();
    let date = r.text(8, "startdate")?;
    let time = r.text(8, "starttime")?;
    let start_datetime = parse_start(&date, &time)?;
    let header_bytes: usize = r.number(8, "header_bytes")?;
    let reserved = r.text(44, "reserved")?.trim_end().to_string();
    let num_data_records: i64 = r.number(8, "num_data_records")?;
    let record_duration_s: f64 = r.number(8, "record_duration")?;
    let ns: usize = r.number(4, "num_signals")?;

    if header_bytes != FIXED_HEADER_BYTES + CHANNEL_HEADER_BYTES * ns {
        return Err(SignalError::MalformedHeader {
            field: "header_bytes",
            value: format!("{header_bytes} (expected {} for {ns} channels)", 256 + 256 * ns),
        });
    }
    if num_data_records < -1 {
        return Err(SignalError::MalformedHeader { field: "num_data_records", value: num_data_records.to_string() });
    }
    if bytes.len() < header_bytes {
        return Err(SignalError::TruncatedFile { expected: header_bytes, found: bytes.len() });
    }

    // Channel fields are stored column-wise: all labels, then all transducers, ...
    let mut column = |width: usize, field: &'static str| -> Result<Vec<String>, SignalError> {
        (0..ns).map(|_| r.text(width, field)).collect()
    };
    let labels = column(16, "label")?;
    let transducers = column(80, "transducer")?;
    let dims = column(8, "physical_dimension")?;
    let pmin = column(8, "physical_min")?;
    let pmax = column(8, "physical_max")?;
    let dmin = column(8, "digital_min")?;
    let dmax = column(8, "digital_max")?;
    let prefilter = column(80, "prefiltering")?;
    let spr = column(8, "samples_per_record")?;
    let reserved_ch = column(32, "channel_reserved")?;

    fn num<T: std::str::FromStr>(s: &str, field: &'static str) -> Result<T, SignalError> {
        s.trim().parse().map_err(|_| SignalError::MalformedHeader { field, value: s.trim().to_string() })
    }

    let mut channels = Vec::with_capacity(ns);
    for i in 0..ns {
        let ch = ChannelSpec {
            label: labels[i].trim().to_string(),
            transducer: transducers[i].trim_end().to_string(),
            physical_dimension: dims[i].trim().to_string(),
            physical_min: num(&pmin[i], "physical_min")?,
            physical_max: num(&pmax[i], "physical_max")?,
            digital_min: num(&dmin[i], "digital_min")?,
            digital_max: num(&dmax[i], "digital_max")?,
            prefiltering: prefilter[i].trim_end().to_string(),
            samples_per_record: num(&spr[i], "samples_per_record")?,
            reserved: reserved_ch[i].trim_end().to_string(),
        };
        if ch.samples_per_record == 0 {
            return Err(SignalError::MalformedHeader { field: "samples_per_record", value: "0".into() });
        }
        if ch.digital_min == ch.digital_max || ch.physical_min == ch.physical_max {
            return Err(SignalError::DegenerateCalibration { channel: ch.label });
        }
        if ch.digital_min > ch.digital_max {
            return Err(SignalError::MalformedHeader {
                field: "digital_min",
                value: format!("{} > digital_max {}", ch.digital_min, ch.digital_max),
            });
        }
        channels.push(ch);
    }

    let header = EdfHeader {
        version,
        patient_info,
        recording_info,
        start_datetime,
        header_bytes,
        reserved,
        num_data_records,
        record_duration_s,
        channels,
    };
    let d = header.record_duration_s;
    if !(d > 0.0 || (d == 0.0 && header.is_annotation_only())) {
        return Err(SignalError::MalformedHeader {
            field: "record_duration",
            value: header.record_duration_s.to_string(),
        });
    }
    Ok(header)
}

/// Decodes a complete EDF/EDF+ byte image.
///
/// A record count of -1 is resolved by reading whole records to the end of
/// the input.
pub fn parse_edf(bytes: &[u8]) -> Result<EdfRecording, SignalError> {
    let mut header = parse_header(bytes)?;
    let record_bytes = header.record_bytes();
    let payload = &bytes[header.header_bytes..];
    let records = if header.num_data_records == -1 {
        let n = payload.len() / record_bytes;
        header.num_data_records = n as i64;
        n
    } else {
        let n = header.num_data_records as usize;
        let needed = header.header_bytes + n * record_bytes;
        if bytes.len() < needed {
            return Err(SignalError::TruncatedFile { expected: needed, found: bytes.len() });
        }
        n
    };

    let nch = header.channels.len();
    let mut signals: Vec<Vec<f64>> = vec![Vec::new(); nch];
    let mut annotations: Vec<Vec<u8>> = vec![Vec::new(); nch];
    for (i, ch) in header.channels.iter().enumerate() {
        if ch.is_annotation() {
            annotations[i].reserve(records * ch.samples_per_record * 2);
        } else {
            signals[i].reserve(records * ch.samples_per_record);
        }
    }

    for rec in payload.chunks_exact(record_bytes).take(records) {
        let mut off = 0;
        for (i, ch) in header.channels.iter().enumerate() {
            let block = &rec[off..off + ch.samples_per_record * 2];
            off += block.len();
            if ch.is_annotation() {
                annotations[i].extend_from_slice(block);
            } else {
                signals[i].extend(block.chunks_exact(2).map(|b| ch.to_physical(i16::from_le_bytes([b[0], b[1]]))));
            }
        }
    }

    Ok(EdfRecording { header, signals, annotations })
}

fn pad_field(out: &mut Vec<u8>, value: &str, width: usize) {
    let mut b = value.as_bytes().to_vec();
    b.resize(width, b' ');
    b.truncate(width);
    out.extend_from_slice(&b);
}

fn fmt_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e8 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v}");
        s.chars().take(8).collect()
    }
}

/// Serializes a header to its fixed-width byte form.
pub fn serialize_header(header: &EdfHeader) -> Vec<u8> {
    let ns = header.channels.len();
    let mut out = Vec::with_capacity(FIXED_HEADER_BYTES + CHANNEL_HEADER_BYTES * ns);
    let dt = header.start_datetime;
    pad_field(&mut out, &header.version, 8);
    pad_field(&mut out, &header.patient_info, 80);
    pad_field(&mut out, &header.recording_info, 80);
    pad_field(&mut out, &dt.format("%d.%m.%y").to_string(), 8);
    pad_field(&mut out, &dt.format("%H.%M.%S").to_string(), 8);
    pad_field(&mut out, &(FIXED_HEADER_BYTES + CHANNEL_HEADER_BYTES * ns).to_string(), 8);
    pad_field(&mut out, &header.reserved, 44);
    pad_field(&mut out, &header.num_data_records.to_string(), 8);
    pad_field(&mut out, &fmt_number(header.record_duration_s), 8);
    pad_field(&mut out, &ns.to_string(), 4);
    let chs = &header.channels;
    chs.iter().for_each(|c| pad_field(&mut out, &c.label, 16));
    chs.iter().for_each(|c| pad_field(&mut out, &c.transducer, 80));
    chs.iter().for_each(|c| pad_field(&mut out, &c.physical_dimension, 8));
    chs.iter().for_each(|c| pad_field(&mut out, &fmt_number(c.physical_min), 8));
    chs.iter().for_each(|c| pad_field(&mut out, &fmt_number(c.physical_max), 8));
    chs.iter().for_each(|c| pad_field(&mut out, &c.digital_min.to_string(), 8));
    chs.iter().for_each(|c| pad_field(&mut out, &c.digital_max.to_string(), 8));
    chs.iter().for_each(|c| pad_field(&mut out, &c.prefiltering, 80));
    chs.iter().for_each(|c| pad_field(&mut out, &c.samples_per_record.to_string(), 8));
    chs.iter().for_each(|c| pad_field(&mut out, &c.reserved, 32));
    out
}

/// Builds an EDF byte image from a header and per-channel payloads.
///
/// Meant for test fixtures and synthetic recordings. `digital[i]` must hold
/// `num_data_records * samples_per_record` samples for ordinary channels;
/// annotation channels take their bytes from `annotation_records[i]`, one
/// block per record, zero-padded to the channel's record size.
pub fn write_edf(header: &EdfHeader, digital: &[Vec<i16>], annotation_records: &[Vec<Vec<u8>>]) -> Vec<u8> {
    let mut out = serialize_header(header);
    let records = header.num_data_records.max(0) as usize;
    for r in 0..records {
        for (i, ch) in header.channels.iter().enumerate() {
            let n = ch.samples_per_record;
            if ch.is_annotation() {
                let mut block = annotation_records.get(i).and_then(|recs| recs.get(r)).cloned().unwrap_or_default();
                block.resize(n * 2, 0);
                out.extend_from_slice(&block);
            } else {
                for &d in &digital[i][r * n..(r + 1) * n] {
                    out.extend_from_slice(&d.to_le_bytes());
                }
            }
        }
    }
    out
}
