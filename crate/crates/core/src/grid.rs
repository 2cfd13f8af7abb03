//! Dense `H x W x K` feature maps.

use crate::error::{mismatch, Error, Result};

/// A dense real-valued map with `height * width` cells and `channels` values per cell.
///
/// Storage is row-major with the channel index fastest: the value at
/// `(x, y, k)` lives at `(y * width + x) * channels + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::from_vec(
            height,
            width,
            channels,
            vec![0.0; height * width * channels],
        )
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Config(format!(
                "feature grid dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(mismatch(height * width * channels, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite feature value {v}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(x, y, k)` at every entry.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for k in 0..channels {
                    data.push(f(x, y, k));
                }
            }
        }
        Self::from_vec(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, k: usize) -> usize {
        (y * self.width + x) * self.channels + k
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, k: usize) -> f64 {
        self.data[self.index(x, y, k)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, k: usize, value: f64) {
        let i = self.index(x, y, k);
        self.data[i] = value;
    }

    /// Feature vector of one cell.
    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let start = self.index(x, y, 0);
        &self.data[start..start + self.channels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn ensure_same_shape(&self, other: &FeatureGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(mismatch(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }
}
