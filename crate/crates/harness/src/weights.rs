//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"BASTMDL1" | version u8 | tag u8 | id_len u32 | id bytes
//! input_rank u32 | extents u32..
//! layer_count u32
//! per layer: kind u8, then for parametric layers weight and bias tensors
//! tensor: rank u32 | extents u32.. | f64 values
//! ```

use std::fs;
use std::path::Path;

use bast_core::model::{Classifier, Layer, LayerKind, RobustnessTag};
use bast_core::{Shape, Tensor};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"BASTMDL1";
pub const VERSION: u8 = 1;

fn tag_byte(tag: RobustnessTag) -> u8 {
    match tag {
        RobustnessTag::Easy => 0,
        RobustnessTag::Robust => 1,
    }
}

pub fn encode(model: &Classifier) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(tag_byte(model.tag()));
    let id = model.id().as_bytes();
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id);
    put_dims(&mut out, model.input_shape().dims());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.push(layer.kind().tag());
        if let Some((w, b)) = layer.params() {
            put_tensor(&mut out, w);
            put_tensor(&mut out, b);
        }
    }
    out
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) {
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_dims(out, t.dims());
    for v in t.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Cursor over a byte buffer that reports positions in errors.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], context: &'a str) -> Self {
        Reader { bytes, pos: 0, context }
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> HarnessError {
        HarnessError::parse(self.context, self.pos as u64, message)
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(self.error(format!("truncated {what}: need {n} bytes, {left} left")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn dims(&mut self, what: &str) -> Result<Vec<usize>> {
        let rank = self.u32(what)? as usize;
        if rank == 0 || rank > 8 {
            return Err(self.error(format!("{what}: implausible rank {rank}")));
        }
        (0..rank).map(|_| self.u32(what).map(|d| d as usize)).collect()
    }

    pub(crate) fn tensor(&mut self, what: &str) -> Result<Tensor> {
        let dims = self.dims(what)?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.bytes.len()))
            .ok_or_else(|| self.error(format!("{what}: extents {dims:?} exceed the file")))?;
        let raw = self.take(numel * 8, what)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(dims, data).map_err(|e| self.error(format!("{what}: {e}")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        let left = self.bytes.len() - self.pos;
        if left > 0 {
            return Err(self.error(format!("{left} trailing bytes")));
        }
        Ok(())
    }
}

pub fn decode(bytes: &[u8], context: &str) -> Result<Classifier> {
    let mut r = Reader::new(bytes, context);
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(HarnessError::parse(context, 0, "not a model file (bad magic)"));
    }
    let version = r.u8("version")?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let tag = match r.u8("tag")? {
        0 => RobustnessTag::Easy,
        1 => RobustnessTag::Robust,
        other => return Err(r.error(format!("unknown robustness tag {other}"))),
    };
    let id_len = r.u32("id length")? as usize;
    let id = std::str::from_utf8(r.take(id_len, "id")?)
        .map_err(|_| r.error("model id is not UTF-8"))?
        .to_string();
    let input = Shape::new(r.dims("input shape")?).map_err(|e| r.error(e.to_string()))?;
    let count = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for index in 0..count {
        let kind_byte = r.u8("layer kind").map_err(|_| {
            r.error(format!("header declares {count} layers, file ends after {index}"))
        })?;
        let kind = LayerKind::from_tag(kind_byte)
            .ok_or_else(|| r.error(format!("layer {index}: unknown kind {kind_byte}")))?;
        let mut params = || -> Result<(Tensor, Tensor)> {
            let w = r.tensor(&format!("layer {index} ({}) weight", kind.name()))?;
            let b = r.tensor(&format!("layer {index} ({}) bias", kind.name()))?;
            Ok((w, b))
        };
        layers.push(match kind {
            LayerKind::Dense => {
                let (weight, bias) = params()?;
                Layer::Dense { weight, bias }
            }
            LayerKind::Conv3x3 => {
                let (weight, bias) = params()?;
                Layer::Conv3x3 { weight, bias }
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::Flatten => Layer::Flatten,
            LayerKind::AvgPool2x2 => Layer::AvgPool2x2,
        });
    }
    r.finish()?;
    Ok(Classifier::new(id, input, layers, tag)?)
}

pub fn save(model: &Classifier, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| HarnessError::io(path, e))
}

pub fn load(path: &Path) -> Result<Classifier> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}
