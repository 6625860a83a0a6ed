//! Flat binary checkpoint container.
//!
//! ```text
//! magic        4 bytes  "PNCK"
//! version      u32      1
//! digest       32 bytes SHA-256 of the config JSON below
//! config_len   u32
//! config       config_len bytes of JSON (ModelConfig)
//! count        u32      number of records
//! record*      name_len u32, name (UTF-8), dtype u8 (0 = f32, 1 = f64),
//!              rank u32, dims u64 x rank, values little-endian
//! ```
//!
//! All integers are little-endian. Parameters come first in model order,
//! followed by `<norm>.running_mean` and `<norm>.running_var` for every
//! batch normalization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::blocks::BnRunning;
use super::config::ModelConfig;
use super::model::{NamedTensor, PointNormNet};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const MAGIC: &[u8; 4] = b"PNCK";
pub const VERSION: u32 = 1;

const MAX_NAME: usize = 1 << 16;
const MAX_RANK: usize = 16;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn digest_bytes(json: &[u8]) -> [u8; 32] {
    Sha256::digest(json).into()
}

fn config_json(config: &ModelConfig) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(config)?)
}

/// Hex SHA-256 of the canonical config JSON.
pub fn config_digest(config: &ModelConfig) -> Result<String> {
    Ok(hex(&digest_bytes(&config_json(config)?)))
}

struct Record<'a, T> {
    name: String,
    shape: Vec<usize>,
    values: &'a [T],
}

fn records<T: Float>(net: &PointNormNet<T>) -> Vec<Record<'_, T>> {
    let mut out: Vec<Record<'_, T>> = net
        .params()
        .iter()
        .map(|p| Record {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            values: p.value.data(),
        })
        .collect();
    for (name, r) in net.running_names().iter().zip(net.running()) {
        out.push(Record {
            name: format!("{name}.running_mean"),
            shape: vec![r.mean.len()],
            values: &r.mean,
        });
        out.push(Record {
            name: format!("{name}.running_var"),
            shape: vec![r.var.len()],
            values: &r.var,
        });
    }
    out
}

pub fn write_checkpoint<T: Float, W: Write>(net: &PointNormNet<T>, mut w: W) -> Result<()> {
    let json = config_json(net.config())?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&digest_bytes(&json))?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let recs = records(net);
    w.write_all(&(recs.len() as u32).to_le_bytes())?;
    let mut buf = Vec::new();
    for r in recs {
        w.write_all(&(r.name.len() as u32).to_le_bytes())?;
        w.write_all(r.name.as_bytes())?;
        w.write_all(&[T::DTYPE])?;
        w.write_all(&(r.shape.len() as u32).to_le_bytes())?;
        for &d in &r.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        buf.clear();
        for &v in r.values {
            v.write_le(&mut buf);
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_checkpoint<T: Float>(net: &PointNormNet<T>, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    write_checkpoint(net, BufWriter::new(file))
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.offset))
            } else {
                Error::Io(e)
            }
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().unwrap()))
    }
}

fn read_values<T: Float>(raw: &[u8], dtype: u8) -> Result<Vec<T>> {
    if dtype == T::DTYPE {
        return Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect());
    }
    match dtype {
        0 => Ok(raw
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect()),
        1 => Ok(raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect()),
        other => Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
    }
}

/// Reads a checkpoint. When `expected` is given, its digest must match the
/// stored one.
pub fn read_checkpoint<T: Float, R: Read>(r: R, expected: Option<&ModelConfig>) -> Result<PointNormNet<T>> {
    let mut c = Cursor { inner: r, offset: 0 };
    let magic = c.bytes(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, not a checkpoint file",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let stored = c.bytes(32, "digest")?;
    let len = c.u32("config length")? as usize;
    let json = c.bytes(len, "config")?;
    if digest_bytes(&json)[..] != stored[..] {
        return Err(Error::Checkpoint("config digest does not match stored config".into()));
    }
    if let Some(exp) = expected {
        let want = config_digest(exp)?;
        if want != hex(&stored) {
            return Err(Error::DigestMismatch {
                checkpoint: hex(&stored),
                model: want,
            });
        }
    }
    let config: ModelConfig =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("config does not parse: {e}")))?;
    let mut net = PointNormNet::<T>::new(config, 0)?;

    let count = c.u32("record count")? as usize;
    let expected_count = net.params().len() + 2 * net.running().len();
    if count != expected_count {
        return Err(Error::Checkpoint(format!(
            "{count} records, model needs {expected_count}"
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32("name length")? as usize;
        if name_len > MAX_NAME {
            return Err(Error::Checkpoint(format!("record name of {name_len} bytes")));
        }
        let name = String::from_utf8(c.bytes(name_len, "name")?)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let dtype = c.bytes(1, "dtype")?[0];
        let rank = c.u32("rank")? as usize;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("record {name} has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| c.u64("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let width = match dtype {
            0 => 4,
            1 => 8,
            other => return Err(Error::Checkpoint(format!("record {name}: dtype tag {other}"))),
        };
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= 1 << 32)
            .ok_or_else(|| Error::Checkpoint(format!("record {name}: shape {shape:?} too large")))?;
        let raw = c.bytes(numel * width, &name)?;
        let values = read_values::<T>(&raw, dtype)?;
        tensors.push((name, shape, values));
    }

    let n_params = net.params().len();
    let mut params = Vec::with_capacity(n_params);
    for (name, shape, values) in tensors.drain(..n_params) {
        let value = Tensor::new(shape, values).map_err(|e| Error::Checkpoint(format!("record {name}: {e}")))?;
        params.push(NamedTensor { name, value });
    }
    let mut running = Vec::with_capacity(net.running().len());
    for (pair, base) in tensors.chunks_exact(2).zip(net.running_names()) {
        let (mean, var) = (&pair[0], &pair[1]);
        if mean.0 != format!("{base}.running_mean") || var.0 != format!("{base}.running_var") {
            return Err(Error::Checkpoint(format!(
                "expected running statistics of {base}, found {} and {}",
                mean.0, var.0
            )));
        }
        running.push(BnRunning {
            mean: mean.2.clone(),
            var: var.2.clone(),
        });
    }
    net.load_state(params, running)?;
    Ok(net)
}

/// Dtype tag (0 = f32, 1 = f64) of the first record, or `None` for a
/// checkpoint without records.
pub fn stored_dtype<R: Read>(r: R) -> Result<Option<u8>> {
    let mut c = Cursor { inner: r, offset: 0 };
    if c.bytes(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    c.u32("version")?;
    c.bytes(32, "digest")?;
    let len = c.u32("config length")? as usize;
    c.bytes(len, "config")?;
    if c.u32("record count")? == 0 {
        return Ok(None);
    }
    let name_len = c.u32("name length")? as usize;
    if name_len > MAX_NAME {
        return Err(Error::Checkpoint(format!("record name of {name_len} bytes")));
    }
    c.bytes(name_len, "name")?;
    Ok(Some(c.bytes(1, "dtype")?[0]))
}

pub fn load_checkpoint<T: Float>(path: &Path, expected: Option<&ModelConfig>) -> Result<PointNormNet<T>> {
    let file = File::open(path)?;
    read_checkpoint(BufReader::new(file), expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PointNormNet<f32> {
        let mut c = ModelConfig::tiny(4, 64);
        c.stages.truncate(2);
        c.stages[1].k = 8;
        c.stages[0].k = 8;
        PointNormNet::new(c, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = tiny();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let back: PointNormNet<f32> = read_checkpoint(&buf[..], Some(net.config())).unwrap();
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let net = tiny();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        buf[0] = b'X';
        let err = read_checkpoint::<f32, _>(&buf[..], None).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn digest_mismatch_reports_both() {
        let net = tiny();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        let mut other = net.config().clone();
        other.dropout = 0.25;
        match read_checkpoint::<f32, _>(&buf[..], Some(&other)) {
            Err(Error::DigestMismatch { checkpoint, model }) => {
                assert_eq!(checkpoint, config_digest(net.config()).unwrap());
                assert_eq!(model, config_digest(&other).unwrap());
            }
            other => panic!("expected digest mismatch, got {:?}", other.err()),
        }
    }

    #[test]
    fn truncation_is_a_clean_error() {
        let net = tiny();
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_checkpoint::<f32, _>(&buf[..], None).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    }
}
