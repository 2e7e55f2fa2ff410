//! IDX files as used by MNIST: big-endian magic, big-endian `u32` extents,
//! then unsigned bytes.

use crate::error::{HarnessError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: `count` images of `rows x cols` bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, index: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[index * n..(index + 1) * n]
    }
}

fn header(bytes: &[u8], context: &str, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if bytes.len() >= 4 && word(0) != magic {
        return Err(HarnessError::parse(
            context,
            0,
            format!("bad magic 0x{:08x}, expected 0x{magic:08x}", word(0)),
        ));
    }
    let need = 4 * (1 + dims);
    if bytes.len() < need {
        return Err(HarnessError::parse(
            context,
            bytes.len() as u64,
            format!("header needs {need} bytes, file has {}", bytes.len()),
        ));
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

fn check_len(bytes: &[u8], context: &str, header: usize, payload: usize) -> Result<()> {
    let expected = header + payload;
    if bytes.len() != expected {
        let what = if bytes.len() < expected { "truncated" } else { "trailing data" };
        return Err(HarnessError::parse(
            context,
            bytes.len().min(expected) as u64,
            format!("{what}: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    Ok(())
}

pub fn parse_images(bytes: &[u8], context: &str) -> Result<IdxImages> {
    let dims = header(bytes, context, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    if rows == 0 || cols == 0 {
        return Err(HarnessError::parse(context, 8, "image extents must be positive"));
    }
    check_len(bytes, context, 16, count * rows * cols)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8], context: &str) -> Result<Vec<u8>> {
    let dims = header(bytes, context, LABELS_MAGIC, 1)?;
    check_len(bytes, context, 8, dims[0])?;
    Ok(bytes[8..].to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for word in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> IdxImages {
        IdxImages {
            count: 2,
            rows: 2,
            cols: 3,
            pixels: (0..12).collect(),
        }
    }

    #[test]
    fn images_round_trip() {
        let bytes = encode_images(&sample());
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let parsed = parse_images(&bytes, "t").unwrap();
        assert_eq!(parsed, sample());
        assert_eq!(parsed.image(1), &[6, 7, 8, 9, 10, 11]);
    }

    #[test]
    fn labels_round_trip() {
        let bytes = encode_labels(&[7, 1, 3]);
        assert_eq!(&bytes[..4], &[0, 0, 8, 1]);
        assert_eq!(parse_labels(&bytes, "t").unwrap(), vec![7, 1, 3]);
    }

    #[test]
    fn truncated_file_names_lengths() {
        let bytes = encode_images(&sample());
        let err = parse_images(&bytes[..bytes.len() - 5], "imgs").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 28 bytes, found 23"), "{msg}");
        assert!(msg.contains("byte 23"), "{msg}");
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let bytes = encode_labels(&[1, 2]);
        let err = parse_images(&bytes, "imgs").unwrap_err();
        assert!(err.to_string().contains("bad magic 0x00000801"));
        let err = parse_labels(&encode_images(&sample()), "labels").unwrap_err();
        assert!(matches!(err, HarnessError::Parse { offset: 0, .. }));
    }
}
