//! Single-file model checkpoints.
//!
//! Layout (little-endian): magic `ANTKCKPT`, `u32` version, `u64` spec JSON
//! length and bytes, `u64` tensor count, then per tensor a `u32` rank, `u64`
//! dims and `f64` values. Parameters come first in declaration order, then
//! the mean and variance of every normalization layer.

use std::path::Path;

use crate::arch::{emit_spec, parse_spec};
use crate::error::{Error, Result};
use crate::network::{build_network, Network};
use crate::params::ParamId;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ANTKCKPT";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let spec = emit_spec(&net.spec);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u64).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());
    let stats = net.store.stats();
    let count = net.store.len() + 2 * stats.len();
    out.extend_from_slice(&(count as u64).to_le_bytes());
    let mut put = |shape: &[usize], data: &[f64]| {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    for e in net.store.entries() {
        put(e.value.shape(), e.value.data());
    }
    for s in stats {
        put(&[s.mean.len()], &s.mean);
        put(&[s.var.len()], &s.var);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::Format { offset: start as u64, message: format!("{what} {v} too large") })
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let start = self.pos;
        let rank = self.u32("tensor rank")? as usize;
        if rank > MAX_RANK {
            return Err(Error::Format { offset: start as u64, message: format!("tensor rank {rank} exceeds {MAX_RANK}") });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.len("dimension")?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| self.err(format!("tensor data for shape {shape:?} exceeds the file")))?;
        let raw = self.take(numel * 8, "tensor data")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Tensor::new(shape, data).map_err(|e| Error::Format { offset: start as u64, message: e.to_string() })
    }
}

/// Decodes a checkpoint into a network whose parameters and running
/// statistics are exactly the stored ones.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Format { offset: 0, message: "not a checkpoint (bad magic)".into() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format { offset: 8, message: format!("unsupported checkpoint version {version}") });
    }
    let spec_len = r.len("spec length")?;
    let spec_at = r.pos as u64;
    let spec_bytes = r.take(spec_len, "spec")?;
    let text = std::str::from_utf8(spec_bytes).map_err(|e| Error::Format { offset: spec_at, message: e.to_string() })?;
    let spec = parse_spec(text).map_err(|e| Error::Format { offset: spec_at, message: format!("embedded spec: {e}") })?;
    let mut net = build_network(&spec, 0)?;
    let count_at = r.pos as u64;
    let count = r.len("tensor count")?;
    let expected = net.store.len() + 2 * net.store.stats().len();
    if count != expected {
        return Err(Error::Format { offset: count_at, message: format!("{count} tensors stored, the spec needs {expected}") });
    }
    for k in 0..net.store.len() {
        let at = r.pos as u64;
        let t = r.tensor()?;
        let slot = net.store.get_mut(ParamId(k));
        if t.shape() != slot.shape() {
            return Err(Error::Format {
                offset: at,
                message: format!("tensor {k} has shape {:?}, expected {:?}", t.shape(), slot.shape()),
            });
        }
        *slot = t;
    }
    for k in 0..net.store.stats().len() {
        let c = net.store.stats()[k].mean.len();
        let read = |r: &mut Reader<'_>| -> Result<Vec<f64>> {
            let at = r.pos as u64;
            let t = r.tensor()?;
            if t.shape() != [c] {
                return Err(Error::Format { offset: at, message: format!("statistics {k} have shape {:?}, expected [{c}]", t.shape()) });
            }
            Ok(t.into_data())
        };
        let mean = read(&mut r)?;
        let var = read(&mut r)?;
        let s = &mut net.store.stats_mut()[k];
        s.mean = mean;
        s.var = var;
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(net)
}

pub fn save_checkpoint(path: &Path, net: &Network) -> Result<()> {
    std::fs::write(path, encode_checkpoint(net))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    decode_checkpoint(&std::fs::read(path)?)
}
