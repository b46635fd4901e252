//! Camera-frame container.

use num_traits::Float;

use crate::error::{Error, Result};

/// A 2-D grid of photoelectron counts, stored row-major.
///
/// Coordinates follow the crate-wide convention: `x` runs along columns,
/// `y` along rows, origin at the top-left pixel. Pixel values are
/// non-negative finite counts. On the accelerator and on disk pixels travel
/// as 32-bit/16-bit words; in memory they are widened to the working scalar
/// before any accumulation (see [`crate::Image`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageOf<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Float> ImageOf<T> {
    /// Builds an image from row-major pixel data, validating shape and that
    /// every value is finite and non-negative.
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidInput(format!(
                "pixel {idx} is negative or non-finite"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image with every pixel set to `value`.
    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    /// Row `y` as a contiguous slice.
    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}
