//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `SSLCKPT1`, a version byte, the model
//! config as u32-length-prefixed canonical text, a u32 tensor count, then per
//! tensor a u32-length-prefixed name, u32 rank, u64 dims and f32 values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{ModelConfig, Parameters};
use super::tensor::Tensor;
use super::NnError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSLCKPT1";
pub const CHECKPOINT_VERSION: u8 = 1;

const MAX_NAME_LEN: usize = 4096;
const MAX_RANK: usize = 8;

pub fn write_checkpoint<W: Write>(cfg: &ModelConfig, params: &Parameters<f32>, mut w: W) -> Result<(), NnError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    let text = cfg.to_canonical_text();
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], NnError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn truncated(e: std::io::Error) -> NnError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        NnError::BadCheckpoint("truncated file".into())
    } else {
        NnError::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize, NnError> {
    Ok(u32::from_le_bytes(read_array(r)?) as usize)
}

fn read_string<R: Read>(r: &mut R, max: usize, what: &str) -> Result<String, NnError> {
    let len = read_u32(r)?;
    if len > max {
        return Err(NnError::BadCheckpoint(format!("{what} length {len} exceeds {max}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| NnError::BadCheckpoint(format!("{what} is not UTF-8")))
}

/// Reads a checkpoint and checks its tensors against the embedded config.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelConfig, Parameters<f32>), NnError> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NnError::BadMagic { expected: "SSLCKPT1", found: String::from_utf8_lossy(&magic).into_owned() });
    }
    let [version] = read_array::<1, _>(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let cfg = ModelConfig::from_canonical_text(&read_string(&mut r, 1 << 16, "config")?)?;
    let count = read_u32(&mut r)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name = read_string(&mut r, MAX_NAME_LEN, "tensor name")?;
        let rank = read_u32(&mut r)?;
        if rank > MAX_RANK {
            return Err(NnError::BadCheckpoint(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_array(&mut r)?) as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n =
            n.filter(|&n| n <= 1 << 28).ok_or_else(|| NnError::BadCheckpoint(format!("{name}: shape {shape:?}")))?;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(truncated)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
            return Err(NnError::BadCheckpoint(format!("duplicate tensor {name}")));
        }
    }
    let params = Parameters::from_map(tensors);
    params.check_against(&cfg)?;
    Ok((cfg, params))
}

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &Parameters<f32>) -> Result<(), NnError> {
    write_checkpoint(cfg, params, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, Parameters<f32>), NnError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::init_params;

    fn sample() -> (ModelConfig, Parameters<f32>, Vec<u8>) {
        let cfg = ModelConfig::tiny();
        let params = init_params(&cfg, 5).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&cfg, &params, &mut buf).unwrap();
        (cfg, params, buf)
    }

    #[test]
    fn round_trip_is_exact() {
        let (cfg, params, buf) = sample();
        let (cfg2, params2) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(params, params2);
    }

    #[test]
    fn wrong_magic_names_both() {
        let (_, _, mut buf) = sample();
        buf[..8].copy_from_slice(b"SSLDSET1");
        let err = read_checkpoint(buf.as_slice()).unwrap_err().to_string();
        assert!(err.contains("SSLCKPT1") && err.contains("SSLDSET1"), "{err}");
    }

    #[test]
    fn every_truncation_is_an_error() {
        let (_, _, buf) = sample();
        for cut in (0..buf.len()).step_by(97) {
            assert!(read_checkpoint(&buf[..cut]).is_err());
        }
    }

    #[test]
    fn shape_mismatch_against_config_is_rejected() {
        let cfg = ModelConfig::tiny();
        let mut params: Parameters<f32> = init_params(&cfg, 5).unwrap();
        params.insert("stem.conv.bias".into(), Tensor::zeros(&[3]));
        let mut buf = Vec::new();
        write_checkpoint(&cfg, &params, &mut buf).unwrap();
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(NnError::ShapeMismatch(_))));
    }
}
