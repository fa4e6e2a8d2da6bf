//! Binary netpbm I/O: P6 pixmaps for images, P5 graymaps for label grids
//! and other byte-valued fields. UNKNOWN labels are encoded as 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::LabelGrid;
use crate::image::RgbImage;

fn malformed(format: &'static str, reason: impl Into<String>) -> Error {
    Error::MalformedPnm {
        format,
        reason: reason.into(),
    }
}

/// Parse the `width height maxval` header after the magic, skipping `#`
/// comments, and return the offset where the binary payload starts.
fn parse_header(format: &'static str, bytes: &[u8]) -> Result<(usize, usize, usize)> {
    let mut fields = Vec::with_capacity(3);
    let mut pos = 2; // past the magic
    while fields.len() < 3 {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while let Some(b) = bytes.get(pos) {
            if b.is_ascii_digit() {
                pos += 1;
            } else {
                break;
            }
        }
        if pos == start {
            return Err(malformed(format, "truncated header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        fields.push(
            text.parse::<usize>()
                .map_err(|_| malformed(format, "bad header field"))?,
        );
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed(format, "missing separator before payload")),
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if w == 0 || h == 0 {
        return Err(malformed(format, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(malformed(format, format!("unsupported maxval {maxval}")));
    }
    // callers slice the payload starting here
    Ok((w, h, pos))
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(image.len() * 3 + 20);
    write!(out, "P6\n{} {}\n255\n", image.width(), image.height()).unwrap();
    for px in 0..image.len() {
        for v in image.get_index(px) {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(malformed("P6", "missing magic"));
    }
    let (w, h, start) = parse_header("P6", bytes)?;
    let need = w * h * 3;
    let payload = bytes
        .get(start..start + need)
        .ok_or_else(|| malformed("P6", "truncated payload"))?;
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    RgbImage::from_raw(w, h, data)
}

pub fn write_ppm(path: impl AsRef<Path>, image: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_ppm(&fs::read(path)?)
}

pub fn encode_pgm(width: usize, height: usize, values: &[u8]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::BadBufferLength {
            width,
            height,
            channels: 1,
            got: values.len(),
        });
    }
    let mut out = Vec::with_capacity(values.len() + 20);
    write!(out, "P5\n{width} {height}\n255\n").unwrap();
    out.extend_from_slice(values);
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(malformed("P5", "missing magic"));
    }
    let (w, h, start) = parse_header("P5", bytes)?;
    let payload = bytes
        .get(start..start + w * h)
        .ok_or_else(|| malformed("P5", "truncated payload"))?;
    Ok((w, h, payload.to_vec()))
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, values: &[u8]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, values)?)?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    decode_pgm(&fs::read(path)?)
}

/// Write a label grid as a P5 graymap (class indices, UNKNOWN = 255).
pub fn write_labels(path: impl AsRef<Path>, labels: &LabelGrid) -> Result<()> {
    write_pgm(path, labels.width(), labels.height(), labels.values())
}

/// Read a label grid back from a P5 graymap, validating against `num_classes`.
pub fn read_labels(path: impl AsRef<Path>, num_classes: usize) -> Result<LabelGrid> {
    let (w, h, values) = read_pgm(path)?;
    LabelGrid::from_values(w, h, num_classes, values)
}
