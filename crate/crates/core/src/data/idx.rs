//! Big-endian IDX containers (the MNIST distribution format).

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{AreaError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn ingest(file: &str, field: &'static str, reason: impl Into<String>) -> AreaError {
    AreaError::Ingest {
        file: file.to_string(),
        field,
        reason: reason.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, file: &str, field: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| ingest(file, field, "file truncated inside header"))
}

pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, file, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(ingest(file, "magic", format!("expected {IMAGES_MAGIC:#010x}, found {magic:#010x}")));
    }
    let count = read_u32(bytes, 4, file, "count")? as usize;
    let rows = read_u32(bytes, 8, file, "rows")? as usize;
    let cols = read_u32(bytes, 12, file, "cols")? as usize;
    let payload = &bytes[16..];
    let expected = count * rows * cols;
    if payload.len() < expected {
        return Err(ingest(
            file,
            "pixels",
            format!("truncated: header promises {expected} bytes, found {}", payload.len()),
        ));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: payload[..expected].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, file, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(ingest(file, "magic", format!("expected {LABELS_MAGIC:#010x}, found {magic:#010x}")));
    }
    let count = read_u32(bytes, 4, file, "count")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(ingest(
            file,
            "labels",
            format!("truncated: header promises {count} labels, found {}", payload.len()),
        ));
    }
    Ok(payload[..count].to_vec())
}

/// Loads an image/label file pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img_name = images.display().to_string();
    let lbl_name = labels.display().to_string();
    let img_bytes = fs::read(images).map_err(|e| AreaError::io(images, e))?;
    let lbl_bytes = fs::read(labels).map_err(|e| AreaError::io(labels, e))?;
    let imgs = parse_idx_images(&img_bytes, &img_name)?;
    let lbls = parse_idx_labels(&lbl_bytes, &lbl_name)?;
    if imgs.count != lbls.len() {
        return Err(ingest(
            &lbl_name,
            "count",
            format!("{} labels for {} images in {img_name}", lbls.len(), imgs.count),
        ));
    }
    if imgs.count == 0 {
        return Err(ingest(&img_name, "count", "no images"));
    }
    let classes = lbls.iter().copied().max().unwrap_or(0) as usize + 1;
    let features = imgs.pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(features, imgs.rows * imgs.cols, lbls, classes, split)
}
