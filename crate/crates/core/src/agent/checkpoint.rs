//! Weight checkpoint format.
//!
//! ```text
//! magic     b"FQNW"
//! version   u32 = 1
//! n_sizes   u32
//! sizes     n_sizes x u32        (input, hidden..., output)
//! seed      u64
//! digest    [u8; 32]             (config digest)
//! params    f64 x param_count    (per layer: weights row-major, then bias)
//! ```
//! All little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{AgentError, QNetwork};

const MAGIC: &[u8; 4] = b"FQNW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub config_digest: [u8; 32],
}

pub fn write_checkpoint<W: Write>(mut w: W, net: &QNetwork, meta: &CheckpointMeta) -> Result<(), AgentError> {
    let sizes = net.sizes();
    let mut buf = Vec::with_capacity(64 + 8 * net.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for s in &sizes {
        buf.extend_from_slice(&(*s as u32).to_le_bytes());
    }
    buf.extend_from_slice(&meta.seed.to_le_bytes());
    buf.extend_from_slice(&meta.config_digest);
    for p in net.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(QNetwork, CheckpointMeta), AgentError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(4)? != MAGIC {
        return Err(AgentError::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(AgentError::Checkpoint(format!("unsupported version {version}")));
    }
    let n = cur.u32()? as usize;
    if n > 64 {
        return Err(AgentError::Checkpoint(format!("implausible layer count {n}")));
    }
    let sizes = (0..n).map(|_| cur.u32().map(|s| s as usize)).collect::<Result<Vec<_>, _>>()?;
    let seed = cur.u64()?;
    let config_digest: [u8; 32] = cur.take(32)?.try_into().unwrap();
    let mut net = QNetwork::zeros(&sizes)?;
    for p in net.params_mut() {
        *p = f64::from_bits(cur.u64()?);
    }
    if cur.pos != bytes.len() {
        return Err(AgentError::Checkpoint("trailing bytes".into()));
    }
    Ok((net, CheckpointMeta { seed, config_digest }))
}

pub fn save_checkpoint(path: &Path, net: &QNetwork, meta: &CheckpointMeta) -> Result<(), AgentError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, net, meta)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(QNetwork, CheckpointMeta), AgentError> {
    read_checkpoint(fs::File::open(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AgentError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(AgentError::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, AgentError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, AgentError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
