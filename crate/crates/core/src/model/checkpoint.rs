//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "RFQCKPT\0"
//! version    u32
//! width      u8       bytes per value: 4 (f32) or 8 (f64)
//! spec_len   u32      followed by the NetworkSpec as JSON text
//! buffers    u32      followed by, per buffer: len u64, len values
//! checksum   u64      FNV-1a over every preceding byte
//! ```
//!
//! Buffers are stored in [`Parameters::buffers`] order.

use std::path::Path;

use super::network::{Network, Parameters};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RFQCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Bytes per stored value: 8 for double-precision networks, else 4.
fn value_width<T>() -> usize {
    if std::mem::size_of::<T>() >= 8 {
        8
    } else {
        4
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn encode_checkpoint<T: Scalar>(net: &Network<T>) -> Result<Vec<u8>> {
    let spec = serde_json::to_vec(net.spec())?;
    let buffers = net.params().buffers();
    let mut out = Vec::with_capacity(64 + spec.len() + 4 * net.params().num_trainable());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let wide = value_width::<T>() == 8;
    out.push(if wide { 8 } else { 4 });
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&(buffers.len() as u32).to_le_bytes());
    for b in buffers {
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        for v in b {
            if wide {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
            }
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 8 {
        return Err(Error::CorruptCheckpoint("missing checksum".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(Error::CorruptCheckpoint("checksum mismatch (truncated or modified)".into()));
    }
    let width = r.take(1, "value width")?[0] as usize;
    if width != 4 && width != 8 {
        return Err(Error::CorruptCheckpoint(format!("value width {width}")));
    }
    let spec_len = r.u32("spec length")? as usize;
    let spec: NetworkSpec = serde_json::from_slice(r.take(spec_len, "spec")?)
        .map_err(|e| Error::CorruptCheckpoint(format!("spec: {e}")))?;
    let template = Network::<T>::build(spec.clone(), 0)
        .map_err(|e| Error::CorruptCheckpoint(format!("spec: {e}")))?;
    let count = r.u32("buffer count")? as usize;
    let mut params: Parameters<T> = template.params().clone();
    let mut targets = params.buffers_mut();
    if count != targets.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{count} buffers, spec needs {}",
            targets.len()
        )));
    }
    for (i, dst) in targets.iter_mut().enumerate() {
        let len = r.u64("buffer length")? as usize;
        if len != dst.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "buffer {i} has {len} values, spec needs {}",
                dst.len()
            )));
        }
        let raw = r.take(len.checked_mul(width).unwrap_or(usize::MAX), "buffer data")?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(width)) {
            let v = if width == 8 {
                T::from_f64(f64::from_le_bytes(chunk.try_into().expect("8 bytes")))
            } else {
                T::from_f32(f32::from_le_bytes(chunk.try_into().expect("4 bytes")))
            };
            *d = v.ok_or_else(|| Error::CorruptCheckpoint("unrepresentable value".into()))?;
        }
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    drop(targets);
    if !params.all_finite() {
        return Err(Error::CorruptCheckpoint("non-finite parameter".into()));
    }
    Network::from_parts(spec, params)
}

/// Writes spec and parameters at the network's own precision; loading into
/// the same scalar type is bit-exact, loading into the other one converts.
pub fn save_checkpoint<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(net)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
