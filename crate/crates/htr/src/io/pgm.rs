//! Binary PGM (P5) masks with maxval 255.
//!
//! Byte value 0 is background, 255 foreground, and intermediate values are
//! soft probabilities value/255. Writing rounds probabilities to the
//! nearest byte, so 8-bit representable masks round trip exactly.

use crate::error::{Error, Result};
use crate::mask::Mask;
use std::fs;
use std::path::Path;

pub fn encode(mask: &Mask) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", mask.width(), mask.height());
    let mut out = Vec::with_capacity(header.len() + mask.data().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(mask.data().iter().map(|&p| (p * 255.0).round() as u8));
    out
}

/// Reads the next whitespace-delimited token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::HeaderMismatch("unexpected end of header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn decode(bytes: &[u8]) -> Result<Mask> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(Error::UnsupportedFormat(format!(
            "expected binary PGM magic P5, got {magic:?}"
        )));
    }
    let parse = |tok: String| -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| Error::HeaderMismatch(format!("non-numeric header token {tok:?}")))
    };
    let width = parse(next_token(bytes, &mut pos)?)?;
    let height = parse(next_token(bytes, &mut pos)?)?;
    let maxval = parse(next_token(bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "only maxval 255 is supported, got {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::HeaderMismatch("missing raster separator".into()));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() != height * width {
        return Err(Error::HeaderMismatch(format!(
            "{}x{} raster needs {} bytes, found {}",
            width,
            height,
            height * width,
            payload.len()
        )));
    }
    Mask::new(
        height,
        width,
        payload.iter().map(|&b| f32::from(b) / 255.0).collect(),
    )
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    Ok(fs::write(path, encode(mask))?)
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    decode(&fs::read(path)?)
}
