//! Binary PGM (P5) reading and writing, the corpus interchange format.

use crate::error::{Error, Result};
use crate::preprocess::RawImage;
use std::io::Read;
use std::path::Path;

/// Decoded P5 payload: `(width, height, maxval, pixels)` with row-major
/// single-byte pixels.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, u8, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;

    let magic = take_token(&bytes, &mut pos);
    if magic != b"P5" {
        return Err(Error::data(format!(
            "{}: not a binary PGM (magic {:?})",
            path.display(),
            String::from_utf8_lossy(&magic)
        )));
    }
    let width = parse_int(&bytes, &mut pos, path, "width")?;
    let height = parse_int(&bytes, &mut pos, path, "height")?;
    let maxval = parse_int(&bytes, &mut pos, path, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::data(format!(
            "{}: maxval {maxval} unsupported (want 1..=255)",
            path.display()
        )));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::data(format!("{}: malformed header", path.display())));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::data(format!("{}: image too large", path.display())))?;
    if bytes.len() < pos + n {
        return Err(Error::data(format!(
            "{}: truncated payload ({} of {n} pixel bytes)",
            path.display(),
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok((width, height, maxval as u8, bytes[pos..pos + n].to_vec()))
}

/// Reads a PGM and converts it to the recognizer's polarity: intensities are
/// mapped to `[0,1]` by `v/maxval` and inverted, so dark ink on a light
/// background comes out as high values on a near-zero background (and the
/// image median used for padding is usually zero).
pub fn read_image(path: &Path) -> Result<RawImage> {
    let (width, height, maxval, bytes) = read_pgm(path)?;
    let scale = 1.0 / maxval as f32;
    let pixels = bytes.iter().map(|&v| 1.0 - v as f32 * scale).collect();
    RawImage::new(height, width, pixels)
}

/// Writes a binary PGM with maxval 255.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape(format!(
            "pgm payload {} does not match {width}×{height}",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn take_token(bytes: &[u8], pos: &mut usize) -> Vec<u8> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    bytes[start..*pos].to_vec()
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            return;
        }
    }
}

fn parse_int(bytes: &[u8], pos: &mut usize, path: &Path, what: &str) -> Result<usize> {
    let tok = take_token(bytes, pos);
    std::str::from_utf8(&tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::data(format!("{}: bad {what} field", path.display())))
}
