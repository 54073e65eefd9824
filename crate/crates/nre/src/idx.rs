//! The IDX container used by MNIST: a big-endian magic number
//! (`0x00000803` for image stacks, `0x00000801` for label vectors), big-endian
//! `u32` dimensions and an unsigned-byte payload.

use std::fs;
use std::path::Path;

use nre_core::data::Dataset;

use crate::error::{Error, FormatError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw image stack exactly as stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn header(bytes: &[u8], magic: u32, dims: usize, what: &'static str) -> Result<Vec<usize>, FormatError> {
    let truncated = |need: usize| FormatError::Truncated {
        what,
        expected: need as u64,
        found: bytes.len() as u64,
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    let found = word(0);
    if found != magic {
        return Err(FormatError::WrongMagic {
            expected: format!("{magic:#010x}"),
            found: format!("{found:#010x}"),
        });
    }
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(truncated(need));
    }
    Ok((0..dims).map(|d| word(4 + 4 * d) as usize).collect())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
    let body = &bytes[offset..];
    if body.len() < len {
        return Err(FormatError::Truncated {
            what,
            expected: (offset + len) as u64,
            found: bytes.len() as u64,
        });
    }
    if body.len() > len {
        return Err(FormatError::Malformed(format!(
            "{} trailing bytes after the {what} payload",
            body.len() - len
        )));
    }
    Ok(body)
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages, FormatError> {
    let dims = header(bytes, IMAGES_MAGIC, 3, "image header")?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let len = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .ok_or_else(|| FormatError::Malformed(format!("image dimensions {count}x{rows}x{cols} overflow")))?;
    let pixels = payload(bytes, 16, len, "image")?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, FormatError> {
    let count = header(bytes, LABELS_MAGIC, 1, "label header")?[0];
    Ok(payload(bytes, 8, count, "label")?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for word in [
        IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
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

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image file and, optionally, its label file into a dataset with
/// pixels rescaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let raw = parse_images(&read(images)?).map_err(|e| Error::format(images, e))?;
    let labels = match labels {
        Some(path) => {
            let l = parse_labels(&read(path)?).map_err(|e| Error::format(path, e))?;
            if l.len() != raw.count {
                return Err(Error::format(
                    path,
                    FormatError::CountMismatch {
                        images: raw.count,
                        labels: l.len(),
                    },
                ));
            }
            Some(l.into_iter().map(usize::from).collect())
        }
        None => None,
    };
    let name = images
        .file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    Ok(Dataset::from_bytes(
        name,
        raw.count,
        raw.rows,
        raw.cols,
        &raw.pixels,
        labels,
    )?)
}

/// Converts a dataset back to raw bytes (`round(255·v)`), the inverse of
/// loading.
pub fn to_idx(ds: &Dataset) -> Result<(IdxImages, Option<Vec<u8>>)> {
    let pixels = ds.images().data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let labels = match ds.labels() {
        Some(l) => Some(
            l.iter()
                .map(|&v| u8::try_from(v).map_err(|_| Error::Data(format!("label {v} does not fit in a byte"))))
                .collect::<Result<Vec<u8>>>()?,
        ),
        None => None,
    };
    Ok((
        IdxImages {
            count: ds.len(),
            rows: ds.height(),
            cols: ds.width(),
            pixels,
        },
        labels,
    ))
}

pub fn save_idx(ds: &Dataset, images: &Path, labels: Option<&Path>) -> Result<()> {
    let (raw, l) = to_idx(ds)?;
    fs::write(images, encode_images(&raw)).map_err(|e| Error::io(images, e))?;
    if let (Some(path), Some(l)) = (labels, l) {
        fs::write(path, encode_labels(&l)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
