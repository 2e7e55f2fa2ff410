//! Raw tensor files and greyscale previews.

use std::fs;
use std::path::Path;

use bast_core::Tensor;

use crate::error::{HarnessError, Result};
use crate::weights::Reader;

pub const MAGIC: &[u8; 8] = b"BASTIMG1";

/// `b"BASTIMG1" | rank u32 | extents u32.. | f64 values`, little-endian.
pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.dims().len() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], context: &str) -> Result<Tensor> {
    let mut r = Reader::new(bytes, context);
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(HarnessError::parse(context, 0, "not a tensor file (bad magic)"));
    }
    let t = r.tensor("tensor")?;
    r.finish()?;
    Ok(t)
}

pub fn save(t: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| HarnessError::io(path, e))
}

pub fn load(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

/// Binary PGM (P5) of the last two axes, mapping `[lo, hi]` onto `0..=255`.
pub fn pgm(t: &Tensor, lo: f64, hi: f64) -> Result<Vec<u8>> {
    let dims = t.dims();
    if dims.len() < 2 || dims[..dims.len() - 2].iter().any(|&d| d != 1) {
        return Err(HarnessError::format(
            "pgm",
            format!("need a single-channel image, got {dims:?}"),
        ));
    }
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    out.extend(
        t.as_slice()
            .iter()
            .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

/// Writes clean, adversarial and amplified-noise previews with a common stem.
pub fn write_previews(dir: &Path, stem: &str, clean: &Tensor, adv: &Tensor, epsilon: f64) -> Result<()> {
    let mut noise = adv.clone();
    noise.add_scaled(clean, -1.0)?;
    for (suffix, bytes) in [
        ("clean", pgm(clean, 0.0, 1.0)?),
        ("adv", pgm(adv, 0.0, 1.0)?),
        ("noise", pgm(&noise, -epsilon, epsilon)?),
    ] {
        let path = dir.join(format!("{stem}_{suffix}.pgm"));
        fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let t = Tensor::new(vec![1, 2, 3], vec![0.0, -1.5, 1e-300, 2.0, 0.25, 7.0]).unwrap();
        let bytes = encode(&t);
        assert_eq!(decode(&bytes, "mem").unwrap(), t);
        assert!(decode(&bytes[..bytes.len() - 1], "mem").is_err());
    }

    #[test]
    fn pgm_header_and_scaling() {
        let t = Tensor::new(vec![1, 1, 3], vec![0.0, 0.5, 1.0]).unwrap();
        let bytes = pgm(&t, 0.0, 1.0).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 128, 255]);
        let rgb = Tensor::zeros(&bast_core::Shape::new(vec![3, 2, 2]).unwrap());
        assert!(pgm(&rgb, 0.0, 1.0).is_err());
    }
}
