//! Binary (P5) 8-bit grayscale PGM images and folders of them.

use std::fs;
use std::path::Path;

use nre_core::data::Dataset;

use crate::error::{Error, FormatError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub max_value: u8,
    pub pixels: Vec<u8>,
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], FormatError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(FormatError::Truncated {
            what: "PGM header",
            expected: *pos as u64 + 1,
            found: bytes.len() as u64,
        });
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, FormatError> {
    let t = token(bytes, pos)?;
    std::str::from_utf8(t)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FormatError::Malformed(format!("PGM {what} is not a number")))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm, FormatError> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(FormatError::WrongMagic {
            expected: "P5".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let max_value = number(bytes, &mut pos, "maximum value")?;
    if width == 0 || height == 0 || !(1..=255).contains(&max_value) {
        return Err(FormatError::Malformed(format!(
            "unsupported PGM geometry {width}x{height} with maximum {max_value}"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let len = width * height;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() < len {
        return Err(FormatError::Truncated {
            what: "PGM raster",
            expected: (pos + len) as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(Pgm {
        width,
        height,
        max_value: max_value as u8,
        pixels: raster[..len].to_vec(),
    })
}

pub fn encode_pgm(img: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.max_value).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Loads every `*.pgm` file of `dir`, in file-name order, as one unlabeled
/// dataset. All images must share one size.
pub fn load_pgm_folder(dir: &Path) -> Result<Dataset> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .pgm files in {}", dir.display())));
    }
    let mut size = None;
    let mut data = Vec::new();
    for path in &paths {
        let img = parse_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?).map_err(|e| Error::format(path, e))?;
        if *size.get_or_insert((img.height, img.width)) != (img.height, img.width) {
            return Err(Error::Data(format!(
                "{} is {}x{}, expected {}x{}",
                path.display(),
                img.height,
                img.width,
                size.unwrap().0,
                size.unwrap().1
            )));
        }
        let scale = img.max_value as f32;
        data.extend(img.pixels.iter().map(|&p| (p.min(img.max_value)) as f32 / scale));
    }
    let (h, w) = size.unwrap();
    let images = nre_core::Tensor::new(vec![paths.len(), h, w], data)?;
    Ok(Dataset::new(dir.to_string_lossy(), images, None)?)
}
