//! IDX container format (big-endian header, unsigned-byte payload).

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{DigitError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Unsigned-byte image stack `[count, rows, cols]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Contents of one IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdxFile {
    Images(IdxImages),
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    let b = bytes.get(at..at + 4).ok_or(DigitError::Truncated {
        what,
        expected: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, what: &'static str) -> Result<&'a [u8]> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(DigitError::Truncated { what, expected, found: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(DigitError::DimensionMismatch(format!(
            "{what}: header declares {expected} bytes but file has {}",
            bytes.len()
        )));
    }
    Ok(&bytes[header..])
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, "image header")?;
    if magic != IMAGES_MAGIC {
        return Err(DigitError::BadMagic { expected: IMAGES_MAGIC, found: magic });
    }
    let count = read_u32(bytes, 4, "image header")? as usize;
    let rows = read_u32(bytes, 8, "image header")? as usize;
    let cols = read_u32(bytes, 12, "image header")? as usize;
    let pixels = payload(bytes, 16, count * rows * cols, "image payload")?.to_vec();
    Ok(IdxImages { count, rows, cols, pixels })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "label header")?;
    if magic != LABELS_MAGIC {
        return Err(DigitError::BadMagic { expected: LABELS_MAGIC, found: magic });
    }
    let count = read_u32(bytes, 4, "label header")? as usize;
    Ok(payload(bytes, 8, count, "label payload")?.to_vec())
}

/// Parses either kind of IDX file, dispatching on the magic number.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxFile> {
    match read_u32(bytes, 0, "header")? {
        IMAGES_MAGIC => parse_idx_images(bytes).map(IdxFile::Images),
        LABELS_MAGIC => parse_idx_labels(bytes).map(IdxFile::Labels),
        found => Err(DigitError::BadMagic { expected: IMAGES_MAGIC, found }),
    }
}

pub fn serialize_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn serialize_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn serialize_idx(file: &IdxFile) -> Vec<u8> {
    match file {
        IdxFile::Images(i) => serialize_idx_images(i),
        IdxFile::Labels(l) => serialize_idx_labels(l),
    }
}

/// Reads a file, transparently decompressing gzip content.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let io = |source| DigitError::Io { path: path.display().to_string(), source };
    let raw = std::fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn load_idx(path: &Path) -> Result<IdxFile> {
    parse_idx(&read_maybe_gz(path)?)
}
