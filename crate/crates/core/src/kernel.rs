//! Square odd-sized kernels: extracted point-spread functions and
//! projection kernels.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::sum::canonical_sum;

/// A `size`×`size` real matrix with odd `size`, stored row-major.
///
/// The odd size guarantees a unique center pixel at `(half, half)` with
/// `half = (size - 1) / 2`. Entries may be negative (projection kernels
/// usually are); point-spread functions additionally hold non-negative,
/// unit-sum entries, which is validated where a PSF is required.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelOf<T> {
    size: usize,
    data: Vec<T>,
}

impl<T: Float> KernelOf<T> {
    pub fn new(size: usize, data: Vec<T>) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "kernel size must be odd and positive, got {size}"
            )));
        }
        if data.len() != size * size {
            return Err(Error::InvalidInput(format!(
                "kernel data length {} does not match {size}x{size}",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "kernel entry {idx} is non-finite"
            )));
        }
        Ok(Self { size, data })
    }

    /// Discrete delta: 1 at the center, 0 elsewhere.
    pub fn delta(size: usize) -> Result<Self> {
        let mut data = vec![T::zero(); size * size];
        let half = (size - 1) / 2;
        data[half * size + half] = T::one();
        Self::new(size, data)
    }

    /// Isotropic Gaussian of standard deviation `sigma` (pixels), truncated
    /// to the kernel window and normalized to unit sum.
    pub fn gaussian(size: usize, sigma: T) -> Result<Self> {
        if !(sigma.is_finite() && sigma > T::zero()) {
            return Err(Error::InvalidInput(
                "gaussian sigma must be positive and finite".into(),
            ));
        }
        let half = (size as i64 - 1) / 2;
        let two = T::from(2.0).unwrap();
        let mut data = Vec::with_capacity(size * size);
        for row in -half..=half {
            for col in -half..=half {
                let r2 = T::from(row * row + col * col).unwrap();
                data.push((-r2 / (two * sigma * sigma)).exp());
            }
        }
        let total = canonical_sum(&data);
        for v in &mut data {
            *v = *v / total;
        }
        Self::new(size, data)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `(size - 1) / 2`, the center offset.
    pub fn half(&self) -> usize {
        (self.size - 1) / 2
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.size + col]
    }

    /// Row `row` as a contiguous slice.
    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.size..(row + 1) * self.size]
    }

    /// Sum of all entries in canonical order.
    pub fn sum(&self) -> T {
        canonical_sum(&self.data)
    }

    /// Squared Frobenius norm.
    pub fn squared_norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    /// True when every entry is non-negative and the total is 1 within
    /// `tol`.
    pub fn is_unit_sum_nonnegative(&self, tol: T) -> bool {
        self.data.iter().all(|v| *v >= T::zero()) && (self.sum() - T::one()).abs() <= tol
    }
}
