use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdxOptions {
    /// Keep at most this many images (after filtering).
    pub limit: Option<usize>,
    /// Average 2×2 pixel blocks (28×28 → 14×14).
    pub downsample: bool,
    /// Keep only these class labels; manifold index = position in this list.
    pub classes: Option<Vec<u8>>,
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated header: {what} expected at byte {at}, file has {} bytes", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32, kind: &str) -> Result<()> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad {kind} magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

fn check_length(bytes: &[u8], expected: u64, kind: &str) -> Result<()> {
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Format {
            offset: actual,
            message: format!("truncated {kind} file: expected {expected} bytes, found {actual}"),
        });
    }
    if actual > expected {
        return Err(Error::Format {
            offset: expected,
            message: format!("{} trailing bytes after {kind} payload", actual - expected),
        });
    }
    Ok(())
}

fn downsample(pixels: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let (r2, c2) = (rows / 2, cols / 2);
    let mut out = Vec::with_capacity(r2 * c2);
    for r in 0..r2 {
        for c in 0..c2 {
            let at = |dr: usize, dc: usize| pixels[(2 * r + dr) * cols + 2 * c + dc];
            out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
        }
    }
    out
}

/// Parses in-memory IDX image and label files. Pixels map linearly from
/// `[0, 255]` to `[-1, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8], options: &IdxOptions) -> Result<LabeledDataset<f64>> {
    check_magic(images, IMAGE_MAGIC, "image")?;
    let count = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "row count")? as usize;
    let cols = be_u32(images, 12, "column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format {
            offset: 8,
            message: format!("image extent {rows}×{cols} must be positive"),
        });
    }
    check_length(images, 16 + (count * rows * cols) as u64, "image")?;

    check_magic(labels, LABEL_MAGIC, "label")?;
    let label_count = be_u32(labels, 4, "label count")? as usize;
    if label_count != count {
        return Err(Error::Format {
            offset: 4,
            message: format!("label count {label_count} does not match image count {count}"),
        });
    }
    check_length(labels, 8 + count as u64, "label")?;

    if options.downsample && (!rows.is_multiple_of(2) || !cols.is_multiple_of(2)) {
        return Err(Error::contract(format!("cannot halve a {rows}×{cols} image")));
    }
    let (out_rows, out_cols) = if options.downsample { (rows / 2, cols / 2) } else { (rows, cols) };
    let num_classes = match &options.classes {
        Some(c) if c.is_empty() => return Err(Error::contract("class filter is empty")),
        Some(c) => c.len(),
        None => 1 + labels[8..].iter().copied().max().unwrap_or(0) as usize,
    };

    let pixels = rows * cols;
    let mut data = Vec::new();
    let mut kept = Vec::new();
    for i in 0..count {
        if options.limit.is_some_and(|l| kept.len() >= l) {
            break;
        }
        let raw = labels[8 + i];
        let manifold = match &options.classes {
            Some(c) => match c.iter().position(|&d| d == raw) {
                Some(p) => p,
                None => continue,
            },
            None => raw as usize,
        };
        let start = 16 + i * pixels;
        let img: Vec<f64> = images[start..start + pixels]
            .iter()
            .map(|&p| p as f64 / 127.5 - 1.0)
            .collect();
        data.extend(if options.downsample { downsample(&img, rows, cols) } else { img });
        kept.push(manifold);
    }
    if kept.is_empty() {
        return Err(Error::contract("no images left after filtering"));
    }
    let samples = Tensor::matrix(kept.len(), out_rows * out_cols, data)?;
    LabeledDataset::new(samples, vec![out_rows, out_cols], Some(kept), Some(num_classes))
}

/// Reads an IDX image/label file pair from disk.
pub fn load_idx(images_path: &Path, labels_path: &Path, options: &IdxOptions) -> Result<LabeledDataset<f64>> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels, options).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{} / {}: {message}", images_path.display(), labels_path.display()),
        },
        other => other,
    })
}
