//! Binary checkpoint format.
//!
//! All integers are little-endian `u32`:
//!
//! ```text
//! "MDCA" | version=1 | pathway count
//!   per pathway: name length | UTF-8 name | layer count
//!     per layer: num_features | kernel_h | kernel_w | in_channels | stride
//!                weights as f32, (feature, kh, kw, c) order
//! CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::conv::DictionaryLayer;
use crate::error::{MdcaError, Result};
use crate::network::PathwaySpec;

pub const MAGIC: [u8; 4] = *b"MDCA";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on any single dimension field; larger values are treated as
/// corruption rather than allocation requests.
const MAX_DIM: u32 = 1 << 20;

pub fn encode(pathways: &[PathwaySpec]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    put_u32(&mut buf, pathways.len() as u32);
    for p in pathways {
        put_u32(&mut buf, p.name.len() as u32);
        buf.extend_from_slice(p.name.as_bytes());
        put_u32(&mut buf, p.layers.len() as u32);
        for l in &p.layers {
            for v in [
                l.num_features(),
                l.kernel_h(),
                l.kernel_w(),
                l.in_channels(),
                l.stride(),
            ] {
                put_u32(&mut buf, v as u32);
            }
            for w in l.weights() {
                buf.extend_from_slice(&w.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    buf
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(MdcaError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn dim(&mut self, what: &'static str) -> Result<usize> {
        let v = self.u32(what)?;
        if v > MAX_DIM {
            return Err(MdcaError::DimensionOverflow(format!("{what} = {v}")));
        }
        Ok(v as usize)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<PathwaySpec>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(MdcaError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(MdcaError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n_pathways = r.dim("pathway count")?;
    // Structure is read fully and the checksum verified before any layer is
    // validated, so corruption reports as a checksum failure.
    let mut raw = Vec::with_capacity(n_pathways.min(64));
    for _ in 0..n_pathways {
        let name_len = r.dim("name length")?;
        let name = r.take(name_len, "pathway name")?;
        let n_layers = r.dim("layer count")?;
        let mut layers = Vec::with_capacity(n_layers.min(64));
        for _ in 0..n_layers {
            let nf = r.dim("num_features")?;
            let kh = r.dim("kernel_h")?;
            let kw = r.dim("kernel_w")?;
            let ch = r.dim("in_channels")?;
            let stride = r.dim("stride")?;
            let count = nf
                .checked_mul(kh)
                .and_then(|v| v.checked_mul(kw))
                .and_then(|v| v.checked_mul(ch))
                .filter(|&v| v.checked_mul(4).is_some())
                .ok_or_else(|| {
                    MdcaError::DimensionOverflow(format!("{nf}x{kh}x{kw}x{ch} weights"))
                })?;
            let weights = r.take(count * 4, "weights")?;
            layers.push(([nf, kh, kw, ch, stride], weights));
        }
        raw.push((name, layers));
    }
    let body_len = r.pos;
    let stored = r.u32("checksum")?;
    let computed = crc32fast::hash(&bytes[..body_len]);
    if stored != computed {
        return Err(MdcaError::ChecksumMismatch { stored, computed });
    }
    if r.remaining() != 0 {
        return Err(MdcaError::Decode {
            path: "<checkpoint>".into(),
            message: format!("{} trailing bytes after checksum", r.remaining()),
        });
    }

    let mut pathways = Vec::with_capacity(raw.len());
    for (name, layers) in raw {
        let name = std::str::from_utf8(name).map_err(|e| MdcaError::Decode {
            path: "<checkpoint>".into(),
            message: format!("pathway name is not UTF-8: {e}"),
        })?;
        let layers = layers
            .into_iter()
            .map(|([nf, kh, kw, ch, stride], bytes)| {
                let weights = bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                DictionaryLayer::new(nf, kh, kw, ch, stride, weights)
            })
            .collect::<Result<Vec<_>>>()?;
        pathways.push(PathwaySpec::new(name, layers)?);
    }
    Ok(pathways)
}

pub fn save_checkpoint(path: impl AsRef<Path>, pathways: &[PathwaySpec]) -> Result<()> {
    fs::write(path, encode(pathways))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<PathwaySpec>> {
    decode(&fs::read(path)?)
}
