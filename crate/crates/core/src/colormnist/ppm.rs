use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB raster as read back from a P6 file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ppm {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes an `height × width × 3` float image in `[0, 1]` as binary P6.
pub fn encode_ppm(image: &[f32], width: usize, height: usize) -> Result<Vec<u8>> {
    if image.len() != width * height * 3 {
        return Err(Error::Dimension(format!("{} values for a {width}×{height} RGB image", image.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(image.iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn export_ppm(image: &[f32], width: usize, height: usize, path: &Path) -> Result<()> {
    let bytes = encode_ppm(image, width, height)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Parses binary P6 with maxval 255. Comments are not supported.
pub fn decode_ppm(bytes: &[u8]) -> Result<Ppm> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
            pos += 1;
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse { offset: pos, reason: "truncated PPM header".into() });
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::Parse { offset: 0, reason: format!("expected P6, found {}", fields[0]) });
    }
    let num = |s: &str| {
        s.parse::<usize>().map_err(|_| Error::Parse { offset: 2, reason: format!("bad header field {s:?}") })
    };
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Unsupported(format!("PPM maxval {maxval}")));
    }
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != width * height * 3 {
        return Err(Error::Parse {
            offset: pos,
            reason: format!("raster has {} bytes, expected {}", data.len(), width * height * 3),
        });
    }
    Ok(Ppm { width, height, data: data.to_vec() })
}

pub fn read_ppm(path: &Path) -> Result<Ppm> {
    decode_ppm(&std::fs::read(path)?)
}
