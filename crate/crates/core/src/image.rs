//! Grayscale images: 16-bit binary PGM and little-endian PFM.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a grayscale PFM file: {0}")]
    Format(String),
}

/// Row-major image, row 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    /// Largest finite value, or 0.
    pub fn max_finite(&self) -> f64 {
        self.data.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max)
    }

    /// PFM bytes; rows are stored bottom to top as the format requires.
    pub fn to_pfm(&self) -> Vec<u8> {
        let mut out = format!("Pf\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                out.extend_from_slice(&(self.get(row, col) as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_pfm(bytes: &[u8]) -> Result<Self, ImageError> {
        let bad = |m: &str| ImageError::Format(m.to_string());
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
        }
        pos += 1;
        if fields[0] != "Pf" {
            return Err(bad("magic is not `Pf`"));
        }
        let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
        let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
        let little = scale < 0.0;
        let payload = bytes.get(pos..).ok_or_else(|| bad("missing payload"))?;
        if payload.len() != width * height * 4 {
            return Err(bad("payload size does not match dimensions"));
        }
        let mut img = Image::new(width, height);
        for (i, c) in payload.chunks_exact(4).enumerate() {
            let raw = [c[0], c[1], c[2], c[3]];
            let v = if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            let (row, col) = (height - 1 - i / width, i % width);
            img.set(row, col, v as f64);
        }
        Ok(img)
    }

    /// 16-bit PGM with values mapped linearly from `[0, max]`; non-finite
    /// pixels become 0.
    pub fn to_pgm16(&self, max: f64) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for &v in &self.data {
            let q = if v.is_finite() && max > 0.0 {
                (v / max).clamp(0.0, 1.0) * 65535.0
            } else {
                0.0
            };
            out.extend_from_slice(&(q.round() as u16).to_be_bytes());
        }
        out
    }

    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        write_all(path, &self.to_pfm())
    }

    pub fn read_pfm(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        Self::from_pfm(&fs::read(path)?)
    }

    /// PGM normalized to the image's own maximum.
    pub fn write_pgm16(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        write_all(path, &self.to_pgm16(self.max_finite()))
    }
}

fn write_all(path: impl AsRef<Path>, bytes: &[u8]) -> Result<(), ImageError> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip() {
        let mut img = Image::new(3, 2);
        img.set(0, 2, 1.5);
        img.set(1, 0, f64::INFINITY);
        let back = Image::from_pfm(&img.to_pfm()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_scaling() {
        let img = Image {
            width: 2,
            height: 1,
            data: vec![0.5, 1.0],
        };
        let b = img.to_pgm16(1.0);
        let n = b.len();
        assert_eq!(&b[n - 4..], &[0x80, 0x00, 0xff, 0xff]);
    }
}
