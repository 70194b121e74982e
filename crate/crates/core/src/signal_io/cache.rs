//! Binary dataset cache.
//!
//! Layout, all little-endian: magic `SSLDSET1`, `u64` epoch count, then per
//! epoch 3072 `f32` samples, one `i8` label (-1 unlabeled) and a `u32`
//! length-prefixed UTF-8 source id.

use std::io::{Read, Write};

use super::epochs::{Epoch, EpochDataset, EPOCH_LEN};
use super::hypnogram::StageLabel;
use super::SignalError;

pub const DATASET_MAGIC: &[u8; 8] = b"SSLDSET1";

pub fn write_dataset<W: Write>(dataset: &EpochDataset, mut w: W) -> Result<(), SignalError> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(dataset.epochs.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(EPOCH_LEN * 4 + 64);
    for e in &dataset.epochs {
        if e.samples.len() != EPOCH_LEN {
            return Err(SignalError::BadEpochLength { found: e.samples.len() });
        }
        buf.clear();
        for v in &e.samples {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let label: i8 = e.label.map_or(-1, |l| l.index() as i8);
        buf.extend_from_slice(&label.to_le_bytes());
        buf.extend_from_slice(&(e.source_id.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.source_id.as_bytes());
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<EpochDataset, SignalError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| SignalError::BadMagic { expected: "SSLDSET1", found: String::new() })?;
    if &magic != DATASET_MAGIC {
        return Err(SignalError::BadMagic {
            expected: "SSLDSET1",
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;
    let mut epochs = Vec::with_capacity(count.min(1 << 20));
    let mut raw = vec![0u8; EPOCH_LEN * 4];
    for _ in 0..count {
        r.read_exact(&mut raw)?;
        let samples = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let mut lb = [0u8; 1];
        r.read_exact(&mut lb)?;
        let code = i8::from_le_bytes(lb);
        let label = match code {
            -1 => None,
            c => Some(StageLabel::from_index(c as usize).filter(|_| c >= 0).ok_or(SignalError::BadLabel(c))?),
        };
        let mut lenb = [0u8; 4];
        r.read_exact(&mut lenb)?;
        let mut id = vec![0u8; u32::from_le_bytes(lenb) as usize];
        r.read_exact(&mut id)?;
        let source_id = String::from_utf8(id).map_err(|_| SignalError::BadSourceId)?;
        epochs.push(Epoch { samples, label, source_id });
    }
    let mut provenance: Vec<String> = Vec::new();
    for e in &epochs {
        let src = record_key(&e.source_id);
        if !provenance.iter().any(|p| p == src) {
            provenance.push(src.to_string());
        }
    }
    Ok(EpochDataset::new(epochs, provenance))
}

/// The recording part of a `<source>:<channel>:<index>` id.
pub fn record_key(source_id: &str) -> &str {
    let mut it = source_id.rsplitn(3, ':');
    match (it.next(), it.next(), it.next()) {
        (Some(_), Some(_), Some(src)) => src,
        _ => source_id,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch(v: f32, label: Option<StageLabel>, id: &str) -> Epoch {
        Epoch { samples: vec![v; EPOCH_LEN], label, source_id: id.into() }
    }

    #[test]
    fn round_trip() {
        let ds = EpochDataset::new(
            vec![epoch(0.5, Some(StageLabel::N2), "a.edf:EEG:0"), epoch(-1.0, None, "b.edf:EEG:7")],
            vec!["a.edf".into(), "b.edf".into()],
        );
        let mut bytes = Vec::new();
        write_dataset(&ds, &mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"SSLDSET1");
        assert_eq!(bytes.len(), 16 + 2 * (EPOCH_LEN * 4 + 1 + 4 + 11));
        let back = read_dataset(bytes.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn wrong_magic_names_both() {
        let err = read_dataset(&b"SSLCKPT1\0\0\0\0\0\0\0\0"[..]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("SSLDSET1") && msg.contains("SSLCKPT1"), "{msg}");
    }

    #[test]
    fn truncated_cache_errors() {
        let ds = EpochDataset::new(vec![epoch(1.0, None, "x:y:0")], vec![]);
        let mut bytes = Vec::new();
        write_dataset(&ds, &mut bytes).unwrap();
        assert!(read_dataset(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn record_key_parsing() {
        assert_eq!(record_key("dir/a:b.edf:EEG Fpz-Cz:12"), "dir/a:b.edf");
        assert_eq!(record_key("plain"), "plain");
    }
}
