//! Netpbm readers and writers.
//!
//! Formats used by the pipeline:
//! - color images: binary PPM (`P6`), maxval 255;
//! - binary noise maps: binary PGM (`P5`), maxval 255, samples 0 or 255;
//! - probability maps: binary PGM (`P5`), maxval 65535, big-endian samples
//!   equal to round(65535 · probability).
//!
//! Headers accept arbitrary whitespace and `#` comments; exactly one
//! whitespace byte separates the maxval from the raster.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ColorImage, NoiseMap};

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    raster_at: usize,
}

fn parse_header(bytes: &[u8], magic: &str, path: &Path) -> Result<Header> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        // skip whitespace and comments
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
            return Err(Error::format(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };

    let m = token(&mut pos)?;
    if m != magic {
        return Err(Error::format(
            path,
            format!("expected magic {magic}, found {m}"),
        ));
    }
    let parse_num = |tok: String| -> Result<u64> {
        tok.parse::<u64>()
            .map_err(|_| Error::format(path, format!("invalid header number '{tok}'")))
    };
    let width = parse_num(token(&mut pos)?)? as usize;
    let height = parse_num(token(&mut pos)?)? as usize;
    let maxval = parse_num(token(&mut pos)?)? as u32;
    if width == 0 || height == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    // exactly one whitespace byte before the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, "missing raster separator"));
    }
    pos += 1;
    Ok(Header {
        width,
        height,
        maxval,
        raster_at: pos,
    })
}

/// Reads a binary 8-bit PPM (`P6`, maxval 255).
pub fn read_ppm(path: impl AsRef<Path>) -> Result<ColorImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let hdr = parse_header(&bytes, "P6", path)?;
    if hdr.maxval != 255 {
        return Err(Error::format(
            path,
            format!("unsupported maxval {} (only 255)", hdr.maxval),
        ));
    }
    let need = 3 * hdr.width * hdr.height;
    let raster = &bytes[hdr.raster_at..];
    if raster.len() < need {
        return Err(Error::format(
            path,
            format!("truncated raster: {} of {} bytes", raster.len(), need),
        ));
    }
    ColorImage::from_raw(hdr.height, hdr.width, raster[..need].to_vec())
}

/// Writes a binary 8-bit PPM.
pub fn write_ppm(image: &ColorImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = image.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(image.data());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a binary noise map as 8-bit PGM with samples 0 / 255.
pub fn write_map_pgm(map: &NoiseMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if !map.is_binary() {
        return Err(Error::contract(
            "write_map_pgm takes a binary map; use write_probability_pgm for estimates",
        ));
    }
    let (h, w) = map.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| if v != 0.0 { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a binary noise map written by [`write_map_pgm`]. Samples other
/// than 0 and 255 are rejected.
pub fn read_map_pgm(path: impl AsRef<Path>) -> Result<NoiseMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let hdr = parse_header(&bytes, "P5", path)?;
    if hdr.maxval != 255 {
        return Err(Error::format(
            path,
            format!("binary map must have maxval 255, found {}", hdr.maxval),
        ));
    }
    let need = hdr.width * hdr.height;
    let raster = &bytes[hdr.raster_at..];
    if raster.len() < need {
        return Err(Error::format(
            path,
            format!("truncated raster: {} of {} bytes", raster.len(), need),
        ));
    }
    let mut data = Vec::with_capacity(need);
    for &b in &raster[..need] {
        data.push(match b {
            0 => 0.0,
            255 => 1.0,
            other => {
                return Err(Error::format(
                    path,
                    format!("binary map sample {other} is neither 0 nor 255"),
                ))
            }
        });
    }
    NoiseMap::from_raw(hdr.height, hdr.width, data)
}

/// Writes a probability map as 16-bit PGM (big-endian samples, netpbm
/// convention), sample = round(65535 · probability).
pub fn write_probability_pgm(map: &NoiseMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = map.dims();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &p in map.data() {
        let v = (65535.0 * p as f64).round() as u16;
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a 16-bit probability map written by [`write_probability_pgm`].
pub fn read_probability_pgm(path: impl AsRef<Path>) -> Result<NoiseMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let hdr = parse_header(&bytes, "P5", path)?;
    if hdr.maxval != 65535 {
        return Err(Error::format(
            path,
            format!("probability map must have maxval 65535, found {}", hdr.maxval),
        ));
    }
    let need = 2 * hdr.width * hdr.height;
    let raster = &bytes[hdr.raster_at..];
    if raster.len() < need {
        return Err(Error::format(
            path,
            format!("truncated raster: {} of {} bytes", raster.len(), need),
        ));
    }
    let data = raster[..need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
        .collect();
    NoiseMap::from_raw(hdr.height, hdr.width, data)
}
