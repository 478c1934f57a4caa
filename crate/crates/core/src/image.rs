//! Row-major 2D images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("image", &[rows, cols], &[data.len()]));
        }
        Ok(Image { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Image {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Image { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn to_f32_bytes(&self) -> Vec<u8> {
        io::encode_f32_le(self.data.iter().map(|&v| v as f32))
    }

    /// 16-bit binary PGM with linear scaling so the maximum maps to 65535.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let (_, hi) = self.min_max();
        let scale = if hi > 0.0 { 65535.0 / hi } else { 0.0 };
        let mut out = format!("P5\n{} {}\n65535\n", self.cols, self.rows).into_bytes();
        for &v in &self.data {
            let q = (v.max(0.0) * scale).round().min(65535.0) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
        io::ensure_parent(path)?;
        fs::write(path, out).map_err(io::io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_scales_max_to_full_range() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(1, 3, vec![0.0, 0.25, 0.5]).unwrap();
        let p = dir.path().join("a.pgm");
        img.write_pgm(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px: Vec<u16> = bytes[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![0, 32768, 65535]);
    }
}
