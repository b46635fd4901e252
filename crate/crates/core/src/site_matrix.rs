//! Per-site result matrices.

use crate::error::{Error, Result};

/// A rows×cols matrix with one entry per atom site, stored row-major.
///
/// Instantiated as [`crate::EmissionMatrix`] (reconstructed brightness) and
/// [`crate::OccupancyMatrix`] (thresholded boolean state).
#[derive(Debug, Clone, PartialEq)]
pub struct SiteMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Clone> SiteMatrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "site matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "site matrix length {} does not match {rows}x{cols}",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    /// Builds entry `(row, col)` from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self::new(rows, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.values[row * self.cols + col]
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter_sites(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let cols = self.cols;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (i / cols, i % cols, v))
    }
}

impl SiteMatrix<bool> {
    /// Number of occupied sites.
    pub fn occupied_count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_is_validated() {
        assert!(SiteMatrix::new(3, 3, vec![0.0f64; 8]).is_err());
        assert!(SiteMatrix::new(0, 3, Vec::<f64>::new()).is_err());
    }

    #[test]
    fn from_fn_is_row_major() {
        let m = SiteMatrix::from_fn(2, 3, |r, c| 10 * r + c).unwrap();
        assert_eq!(m.values(), &[0, 1, 2, 10, 11, 12]);
        assert_eq!(*m.get(1, 2), 12);
    }

    #[test]
    fn occupied_count() {
        let m = SiteMatrix::new(1, 4, vec![true, false, true, true]).unwrap();
        assert_eq!(m.occupied_count(), 3);
    }
}
