//! Grayscale raster buffer shared by the simulator and image processing.

use crate::error::Error;
use alloc::vec;
use alloc::vec::Vec;

/// Row-major single-channel image with `f32` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    /// Allocates a zero-filled image.
    pub fn new(width: usize, height: usize) -> Self {
        Raster { width, height, data: vec![0.0; width * height] }
    }

    /// Wraps an existing sample buffer; its length must be `width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, Error> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch);
        }
        Ok(Raster { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Largest sample value (0 for an empty image).
    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }
}
