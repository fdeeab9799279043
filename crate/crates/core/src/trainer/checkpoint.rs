//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "WMK1" | format u32 | config_len u32 | config JSON (UTF-8)
//!        | tensor_count u32
//!        | per tensor: name_len u16 | name | rank u8 | dims u32 * rank | f32 * prod(dims)
//!        | crc32 u32 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, MaskPlan, Model, ModelParams};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 4] = b"WMK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    pub seed: u64,
    pub corpus_digest: String,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    encoder: EncoderConfig,
    plan: MaskPlan,
    meta: CheckpointMeta,
}

pub fn encode_checkpoint(model: &Model, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    model.validate()?;
    let snapshot = Snapshot {
        encoder: model.config.clone(),
        plan: model.plan.clone(),
        meta: meta.clone(),
    };
    let config = serde_json::to_vec(&snapshot)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let tensors = model.params.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::contract(format!("tensor name {name} too long")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Decodes and validates a checkpoint. Nothing is returned unless the whole
/// stream checks out.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Checkpoint {
            offset: bytes.len(),
            message: "truncated header".into(),
        });
    }
    let body_len = bytes.len() - 4;
    let mut cur = Cursor {
        buf: &bytes[..body_len],
        pos: 0,
    };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let version = cur.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint {
            offset: 4,
            message: format!("unsupported format version {version}"),
        });
    }
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
    let actual = crc32fast::hash(&bytes[..body_len]);
    if stored != actual {
        return Err(Error::Checkpoint {
            offset: body_len,
            message: format!("crc mismatch: stored {stored:08x}, computed {actual:08x}"),
        });
    }

    let config_len = cur.u32("config length")? as usize;
    let config_at = cur.pos;
    let config = cur.take(config_len, "config")?;
    let snapshot: Snapshot = serde_json::from_slice(config).map_err(|e| Error::Checkpoint {
        offset: config_at,
        message: format!("config: {e}"),
    })?;

    let count = cur.u32("tensor count")? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name_at = cur.pos;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint {
                offset: name_at,
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = cur.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = cur.u32("dim")? as usize;
            n = n
                .checked_mul(d)
                .ok_or_else(|| cur.err(format!("tensor {name} is too large")))?;
            dims.push(d);
        }
        let data_at = cur.pos;
        let bytes_needed = n
            .checked_mul(4)
            .ok_or_else(|| cur.err(format!("tensor {name} is too large")))?;
        let raw = cur.take(bytes_needed, "tensor data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| Error::Checkpoint {
            offset: data_at,
            message: format!("tensor {name}: {e}"),
        })?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint {
                offset: name_at,
                message: format!("duplicate tensor {name}"),
            });
        }
    }
    if cur.pos != body_len {
        return Err(cur.err("trailing bytes before checksum"));
    }

    let model = Model {
        config: snapshot.encoder,
        plan: snapshot.plan,
        params: ModelParams::from_tensors(tensors),
    };
    model.validate().map_err(|e| Error::Checkpoint {
        offset: config_at,
        message: e.to_string(),
    })?;
    Ok((model, snapshot.meta))
}

pub fn save_checkpoint(model: &Model, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
