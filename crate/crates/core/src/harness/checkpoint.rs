//! Binary checkpoints for [`DenoiserNet`].
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "DMBACKPT" | version u32
//! depth u32 | width u32 | kernel u32 | residual u8
//! kind u8 (0 untrained, 1 awgn, 2 deq) | kind payload | seed u64
//! block count u32 | per block: name (u32 len + utf8), rank u32, dims u64..., values f64...
//! crc32 of everything above
//! ```

use std::fs;
use std::path::Path;

use crate::error::{DmbaError, Result};
use crate::numerics::{ParamBlock, ParamVector};
use crate::priors::{Architecture, DenoiserNet, PriorMetadata, TrainingKind};

const MAGIC: &[u8; 8] = b"DMBACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_checkpoint(net: &DenoiserNet) -> Vec<u8> {
    let arch = net.architecture();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u32(&mut buf, arch.depth as u32);
    put_u32(&mut buf, arch.width as u32);
    put_u32(&mut buf, arch.kernel_size as u32);
    buf.push(u8::from(arch.residual));
    match &net.metadata.kind {
        TrainingKind::Untrained => buf.push(0),
        TrainingKind::Awgn { sigma } => {
            buf.push(1);
            buf.extend_from_slice(&sigma.to_le_bytes());
        }
        TrainingKind::Deq { train_operator, tau } => {
            buf.push(2);
            put_str(&mut buf, train_operator);
            buf.extend_from_slice(&tau.to_le_bytes());
        }
    }
    buf.extend_from_slice(&net.metadata.seed.to_le_bytes());
    let params = net.params();
    put_u32(&mut buf, params.num_blocks() as u32);
    for block in params.blocks() {
        put_str(&mut buf, &block.name);
        put_u32(&mut buf, block.shape.len() as u32);
        for &d in &block.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &block.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> DmbaError {
        DmbaError::CorruptFile {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt("unexpected end of data"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.corrupt("invalid utf-8 name"))
    }
}

/// Decodes a checkpoint; with `expected` set, the stored architecture must match.
pub fn decode_checkpoint(bytes: &[u8], path: &Path, expected: Option<Architecture>) -> Result<DenoiserNet> {
    let mut r = Reader { bytes, pos: 0, path };
    if bytes.len() < MAGIC.len() + 8 || r.take(MAGIC.len())? != MAGIC {
        return Err(r.corrupt("not a checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(DmbaError::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(r.corrupt("checksum mismatch"));
    }
    r.bytes = body;

    let arch = Architecture {
        depth: r.u32()? as usize,
        width: r.u32()? as usize,
        kernel_size: r.u32()? as usize,
        residual: r.u8()? != 0,
    };
    if let Some(exp) = expected {
        if exp != arch {
            return Err(DmbaError::ArchMismatch {
                expected: exp.to_string(),
                found: arch.to_string(),
            });
        }
    }
    let kind = match r.u8()? {
        0 => TrainingKind::Untrained,
        1 => TrainingKind::Awgn { sigma: r.f64()? },
        2 => TrainingKind::Deq {
            train_operator: r.string()?,
            tau: r.f64()?,
        },
        other => return Err(r.corrupt(format!("unknown training kind {other}"))),
    };
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let mut params = ParamVector::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        if len.saturating_mul(8) > r.bytes.len() - r.pos {
            return Err(r.corrupt(format!("block {name} overruns the file")));
        }
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.push(ParamBlock::new(name, shape, data)?)?;
    }
    if r.pos != r.bytes.len() {
        return Err(r.corrupt("trailing bytes"));
    }
    DenoiserNet::from_params(arch, params, PriorMetadata { kind, seed })
}

pub fn save_checkpoint(path: &Path, net: &DenoiserNet) -> Result<()> {
    fs::write(path, encode_checkpoint(net)).map_err(|e| DmbaError::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected: Option<Architecture>) -> Result<DenoiserNet> {
    if !path.exists() {
        return Err(DmbaError::MissingCheckpoint(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| DmbaError::io(path, e))?;
    decode_checkpoint(&bytes, path, expected)
}
