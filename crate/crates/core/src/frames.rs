use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major matrix of per-frame values, one row per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMatrix {
    width: usize,
    data: Vec<f64>,
}

impl FrameMatrix {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || data.len() % width != 0 {
            return Err(Error::shape(
                "frame matrix",
                format!("{} values cannot form rows of width {width}", data.len()),
            ));
        }
        Ok(Self { width, data })
    }

    pub fn zeros(rows: usize, width: usize) -> Self {
        Self {
            width,
            data: vec![0.0; rows * width],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(width: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::shape(
                    "frame matrix",
                    format!("row {i} has width {}, expected {width}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { width, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// First `n` rows.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.rows());
        Self {
            width: self.width,
            data: self.data[..n * self.width].to_vec(),
        }
    }
}
