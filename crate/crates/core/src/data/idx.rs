use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::dataset::{LabeledSet, Origin};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: one row per image, pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub x: Matrix,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes)?;
        std::fs::write(path, enc.finish()?)?;
    } else {
        std::fs::write(path, bytes)?;
    }
    Ok(())
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format("IDX header is truncated"))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(format!(
            "IDX image magic is {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    let expected = n * rows * cols;
    if body.len() != expected {
        return Err(Error::format(format!(
            "IDX image body has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let data = body.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(IdxImages {
        rows,
        cols,
        x: Matrix::new(n, rows * cols, data)?,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(format!(
            "IDX label magic is {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::format(format!(
            "IDX label body has {} bytes, header implies {n}",
            body.len()
        )));
    }
    Ok(body.iter().map(|&b| usize::from(b)).collect())
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_idx_images(&read_maybe_gz(path.as_ref())?)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    parse_idx_labels(&read_maybe_gz(path.as_ref())?)
}

/// Image file bytes; pixels are `round(255·v)` and must lie in `[0, 1]`.
pub fn idx_images_bytes(x: &Matrix, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != x.cols() {
        return Err(Error::config(format!(
            "{rows}×{cols} images do not match {} columns",
            x.cols()
        )));
    }
    if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::config("IDX pixels must lie in [0, 1]"));
    }
    let mut out = Vec::with_capacity(16 + x.data().len());
    for v in [IMAGES_MAGIC, x.rows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(x.data().iter().map(|v| (v * 255.0).round() as u8));
    Ok(out)
}

pub fn idx_labels_bytes(labels: &[usize]) -> Result<Vec<u8>> {
    if labels.iter().any(|&y| y > 255) {
        return Err(Error::config("IDX labels must fit in one byte"));
    }
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&y| y as u8));
    Ok(out)
}

/// Writes an image file, gzip-compressed when the path ends in `.gz`.
pub fn write_idx_images(
    path: impl AsRef<Path>,
    x: &Matrix,
    rows: usize,
    cols: usize,
) -> Result<()> {
    write_maybe_gz(path.as_ref(), &idx_images_bytes(x, rows, cols)?)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    write_maybe_gz(path.as_ref(), &idx_labels_bytes(labels)?)
}

/// Images plus optional labels as one set; the class count is `max label + 1`.
pub fn load_idx(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<LabeledSet> {
    let img = read_idx_images(images)?;
    match labels {
        None => Ok(LabeledSet::unlabeled(img.x, Origin::InDistribution)),
        Some(path) => {
            let y = read_idx_labels(path)?;
            if y.len() != img.x.rows() {
                return Err(Error::format(format!(
                    "{} labels for {} images",
                    y.len(),
                    img.x.rows()
                )));
            }
            let c = y.iter().max().map_or(0, |m| m + 1);
            LabeledSet::hard(img.x, y, c, Origin::InDistribution)
        }
    }
}
