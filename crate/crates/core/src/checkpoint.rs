//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      4 bytes  "RGCN"
//! version    u32      1
//! d          u32
//! layers     u32
//! classes    u32
//! mode       u8       0 = single-label, 1 = multi-label
//! flags      u8       bit 0: norm_last_layer
//! dropout    f64
//! eps        f64
//! tensors    u32      count
//! per tensor:
//!   name     u16 length + UTF-8 bytes
//!   rows     u32
//!   cols     u32
//!   data     rows * cols f64, row-major
//! ```
//!
//! Tensors appear in [`GcnModel::tensors`] order and are checked against
//! it on load.

use std::fs;
use std::path::Path;

use crate::data::LabelMode;
use crate::error::{Error, Result};
use crate::model::{GcnModel, ModelConfig};

pub const MAGIC: &[u8; 4] = b"RGCN";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &GcnModel, mode: LabelMode) -> Vec<u8> {
    let c = &model.config;
    let tensors = model.tensors();
    let mut out = Vec::with_capacity(64 + 8 * model.parameter_count());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, c.d as u32, c.layers as u32, c.classes as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(match mode {
        LabelMode::Single => 0,
        LabelMode::Multi => 1,
    });
    out.push(c.norm_last_layer as u8);
    out.extend_from_slice(&c.dropout.to_le_bytes());
    out.extend_from_slice(&c.eps.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.rows as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(GcnModel, LabelMode)> {
    let mut r = Cursor { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let (d, layers, classes) = (r.u32()?, r.u32()?, r.u32()?);
    let mode = match r.u8()? {
        0 => LabelMode::Single,
        1 => LabelMode::Multi,
        m => return Err(Error::Checkpoint(format!("unknown label mode {m}"))),
    };
    let flags = r.u8()?;
    let config = ModelConfig {
        dropout: r.f64()?,
        eps: r.f64()?,
        norm_last_layer: flags & 1 != 0,
        ..ModelConfig::new(d, layers, classes)
    };
    let mut model = GcnModel::zeros(config).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let count = r.u32()?;
    let mut slots = model.tensors_mut();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {count}",
            slots.len()
        )));
    }
    for slot in slots.iter_mut() {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let (rows, cols) = (r.u32()?, r.u32()?);
        if name != slot.name || (rows, cols) != (slot.rows, slot.cols) {
            return Err(Error::Checkpoint(format!(
                "expected tensor {} ({}x{}), found {name} ({rows}x{cols})",
                slot.name, slot.rows, slot.cols
            )));
        }
        for v in slot.data.iter_mut() {
            *v = r.f64()?;
        }
    }
    drop(slots);
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    Ok((model, mode))
}

pub fn save(path: &Path, model: &GcnModel, mode: LabelMode) -> Result<()> {
    fs::write(path, to_bytes(model, mode)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(GcnModel, LabelMode)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
