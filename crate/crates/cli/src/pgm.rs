//! Binary PGM ("P5") frames with maxval 65535 and big-endian 16-bit
//! samples.
//!
//! Writing quantizes each pixel with `round(clamp(value, 0, 65535))`;
//! reading also accepts 8-bit files (maxval <= 255) for interoperability.

use std::fmt;
use std::fs;
use std::path::Path;

use atomdet::Image;

#[derive(Debug)]
pub enum PgmError {
    Io(std::io::Error),
    Format(String),
}

impl fmt::Display for PgmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PgmError::Io(e) => write!(f, "i/o error: {e}"),
            PgmError::Format(msg) => write!(f, "malformed pgm: {msg}"),
        }
    }
}

impl std::error::Error for PgmError {}

impl From<std::io::Error> for PgmError {
    fn from(e: std::io::Error) -> Self {
        PgmError::Io(e)
    }
}

fn format_err(msg: impl Into<String>) -> PgmError {
    PgmError::Format(msg.into())
}

/// Encodes an image as a 16-bit binary PGM.
pub fn encode(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", image.width(), image.height()).into_bytes();
    out.reserve(image.data().len() * 2);
    for &value in image.data() {
        let sample = value.clamp(0.0, 65535.0).round() as u16;
        out.extend_from_slice(&sample.to_be_bytes());
    }
    out
}

/// Skips whitespace and `#` comments, then reads one header token.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], PgmError> {
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
        return Err(format_err("unexpected end of header"));
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(token: &[u8], what: &str) -> Result<usize, PgmError> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| format_err(format!("invalid {what}")))
}

/// Decodes a binary PGM into an image.
pub fn decode(bytes: &[u8]) -> Result<Image, PgmError> {
    let mut pos = 0usize;
    if next_token(bytes, &mut pos)? != b"P5" {
        return Err(format_err("not a binary pgm (missing P5 magic)"));
    }
    let width = parse_number(next_token(bytes, &mut pos)?, "width")?;
    let height = parse_number(next_token(bytes, &mut pos)?, "height")?;
    let maxval = parse_number(next_token(bytes, &mut pos)?, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err("missing separator after maxval"));
    }
    pos += 1;

    let pixels = width
        .checked_mul(height)
        .ok_or_else(|| format_err("image dimensions overflow"))?;
    let wide = maxval > 255;
    let expected = pixels * if wide { 2 } else { 1 };
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(format_err(format!(
            "expected {expected} sample bytes, found {}",
            payload.len()
        )));
    }
    let data: Vec<f64> = if wide {
        payload
            .chunks_exact(2)
            .map(|pair| u16::from_be_bytes([pair[0], pair[1]]) as f64)
            .collect()
    } else {
        payload.iter().map(|&b| b as f64).collect()
    };
    Image::new(width, height, data).map_err(|e| format_err(e.to_string()))
}

pub fn write_file(path: &Path, image: &Image) -> Result<(), PgmError> {
    Ok(fs::write(path, encode(image))?)
}

pub fn read_file(path: &Path) -> Result<Image, PgmError> {
    decode(&fs::read(path)?)
}
