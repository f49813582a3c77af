//! Binary PGM (`P5`) reading and writing.
//!
//! Header: `P5`, width, height, maxval separated by whitespace, `#`
//! comments allowed between tokens, then one whitespace byte and the
//! raster. Samples are 8-bit when `maxval < 256`, otherwise 16-bit
//! big-endian.

use crate::error::{Error, Result};
use std::path::Path;

/// A grayscale raster with values still in `0..=maxval`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl Pgm {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos)?;
        if magic != b"P5" {
            return Err(Error::Format(format!(
                "expected binary PGM magic P5, found {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let width = parse_number(next_token(bytes, &mut pos)?)?;
        let height = parse_number(next_token(bytes, &mut pos)?)?;
        let maxval = parse_number(next_token(bytes, &mut pos)?)?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
        }
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let bytes_per = if maxval < 256 { 1 } else { 2 };
        let need = width * height * bytes_per;
        let raster = bytes
            .get(pos..pos + need)
            .ok_or_else(|| Error::Format(format!("PGM raster truncated: need {need} bytes")))?;
        let pixels: Vec<u16> = if bytes_per == 1 {
            raster.iter().map(|&b| b as u16).collect()
        } else {
            raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        };
        if let Some(bad) = pixels.iter().find(|&&v| v as usize > maxval) {
            return Err(Error::Format(format!("PGM sample {bad} exceeds maxval {maxval}")));
        }
        Ok(Pgm {
            width,
            height,
            maxval: maxval as u16,
            pixels,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval < 256 {
            out.extend(self.pixels.iter().map(|&v| v as u8));
        } else {
            for &v in &self.pixels {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Values scaled to `[0, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        let m = self.maxval as f64;
        self.pixels.iter().map(|&v| v as f64 / m).collect()
    }
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
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
        return Err(Error::Format("PGM header ended early".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_number(tok: &[u8]) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad PGM header field {:?}", String::from_utf8_lossy(tok))))
}

/// Bilinear resize with half-pixel centers. A constant image stays
/// exactly constant.
pub fn resize_bilinear(src: &[f64], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    if width == out_w && height == out_h {
        return src.to_vec();
    }
    let coord = |dst: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, s - lo as f64)
    };
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, ty) = coord(y, height, out_h);
        for x in 0..out_w {
            let (x0, x1, tx) = coord(x, width, out_w);
            let top = lerp(src[y0 * width + x0], src[y0 * width + x1], tx);
            let bottom = lerp(src[y1 * width + x0], src[y1 * width + x1], tx);
            out.push(lerp(top, bottom, ty));
        }
    }
    out
}
