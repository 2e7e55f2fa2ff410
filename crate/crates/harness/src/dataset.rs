//! Labelled image ingestion from IDX pairs or CSV files.

use std::fs;
use std::path::{Path, PathBuf};

use bast_core::data::Dataset;
use bast_core::Tensor;

use crate::error::{HarnessError, Result};
use crate::idx;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetSource {
    Idx { images: PathBuf, labels: PathBuf },
    /// One row per image: label, then row-major pixels in 0..=255.
    Csv { path: PathBuf },
}

/// Loads a dataset with pixels scaled to `[0, 1]` and images shaped
/// `[1, rows, cols]`. `num_classes` defaults to the largest label plus one.
pub fn load_dataset(source: &DatasetSource, num_classes: Option<usize>) -> Result<Dataset> {
    let (images, labels) = match source {
        DatasetSource::Idx { images, labels } => read_idx(images, labels)?,
        DatasetSource::Csv { path } => read_csv(path)?,
    };
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Ok(Dataset::new(images, labels, classes)?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| HarnessError::io(path, e))
}

fn to_tensor(pixels: &[u8], rows: usize, cols: usize) -> Tensor {
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Tensor::new(vec![1, rows, cols], data).expect("pixel count matches extents")
}

fn read_idx(images: &Path, labels: &Path) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let img = idx::parse_images(&read(images)?, &images.display().to_string())?;
    let lab = idx::parse_labels(&read(labels)?, &labels.display().to_string())?;
    if img.count != lab.len() {
        return Err(HarnessError::format(
            images.display().to_string(),
            format!("{} images but {} labels in {}", img.count, lab.len(), labels.display()),
        ));
    }
    let tensors = (0..img.count)
        .map(|i| to_tensor(img.image(i), img.rows, img.cols))
        .collect();
    Ok((tensors, lab.into_iter().map(usize::from).collect()))
}

fn read_csv(path: &Path) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let context = path.display().to_string();
    let bytes = read(path)?;
    parse_csv(&bytes, &context)
}

/// Parses CSV rows of `label,p0,p1,...`; images must be square.
pub fn parse_csv(bytes: &[u8], context: &str) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut side = None;
    for record in reader.records() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte());
        let field = |i: usize, max: u32| -> Result<u32> {
            let raw = record.get(i).unwrap_or("").trim();
            raw.parse::<u32>()
                .ok()
                .filter(|v| *v <= max)
                .ok_or_else(|| HarnessError::parse(context, offset, format!("field {i} `{raw}` is not an integer in 0..={max}")))
        };
        let pixels = record.len().saturating_sub(1);
        let s = match side {
            Some(s) => s,
            None => {
                let s = (pixels as f64).sqrt().round() as usize;
                if s == 0 || s * s != pixels {
                    return Err(HarnessError::parse(
                        context,
                        offset,
                        format!("row has {pixels} pixels, which is not a square image"),
                    ));
                }
                side = Some(s);
                s
            }
        };
        if pixels != s * s {
            return Err(HarnessError::parse(
                context,
                offset,
                format!("row has {pixels} pixels, expected {}", s * s),
            ));
        }
        labels.push(field(0, u32::MAX)? as usize);
        let data = (1..=pixels)
            .map(|i| field(i, 255).map(|v| v as u8))
            .collect::<Result<Vec<u8>>>()?;
        images.push(to_tensor(&data, s, s));
    }
    Ok((images, labels))
}
