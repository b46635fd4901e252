//! Tweezer-array lattice geometry.

use std::f64::consts::FRAC_PI_4;

use crate::error::{Error, Result};

/// A rectangular site lattice in image coordinates.
///
/// Site `(row, col)` sits at
/// `origin + row·spacing·(-sin a, cos a) + col·spacing·(cos a, sin a)`
/// where `a` is the lattice angle in radians. Coordinates are `(x, y)` with
/// `x` horizontal (column direction), `y` vertical (row direction), origin
/// at the image's top-left; the grid origin is the position of site (0, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    pub origin_x: f64,
    pub origin_y: f64,
    pub spacing: f64,
    /// Lattice angle in radians, restricted to `(-pi/4, pi/4]`.
    pub angle: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridGeometry {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        spacing: f64,
        angle: f64,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        if !(origin_x.is_finite() && origin_y.is_finite()) {
            return Err(Error::InvalidInput("grid origin must be finite".into()));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidInput(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        if !(angle.is_finite() && angle > -FRAC_PI_4 && angle <= FRAC_PI_4) {
            return Err(Error::InvalidInput(format!(
                "grid angle must lie in (-pi/4, pi/4], got {angle}"
            )));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "grid must have positive dimensions, got {rows}x{cols}"
            )));
        }
        Ok(Self {
            origin_x,
            origin_y,
            spacing,
            angle,
            rows,
            cols,
        })
    }

    /// Grid whose centroid coincides with the center of a `width`×`height`
    /// image.
    pub fn centered(
        rows: usize,
        cols: usize,
        spacing: f64,
        angle: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "grid must have positive dimensions, got {rows}x{cols}"
            )));
        }
        let (sin_a, cos_a) = angle.sin_cos();
        let half_r = (rows - 1) as f64 / 2.0 * spacing;
        let half_c = (cols - 1) as f64 / 2.0 * spacing;
        let origin_x = width as f64 / 2.0 - (half_c * cos_a - half_r * sin_a);
        let origin_y = height as f64 / 2.0 - (half_c * sin_a + half_r * cos_a);
        Self::new(origin_x, origin_y, spacing, angle, rows, cols)
    }

    pub fn site_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Position of site `(row, col)` in image coordinates.
    pub fn site_position(&self, row: usize, col: usize) -> (f64, f64) {
        let (sin_a, cos_a) = self.angle.sin_cos();
        let r = row as f64 * self.spacing;
        let c = col as f64 * self.spacing;
        (
            self.origin_x + c * cos_a - r * sin_a,
            self.origin_y + c * sin_a + r * cos_a,
        )
    }

    /// Checks that every site has its nearest pixel on a `width`×`height`
    /// grid; the error names the offending site.
    ///
    /// A site is considered inside when its position rounds (half away from
    /// zero) to a pixel in `[0, width) x [0, height)`.
    pub fn validate_inside(&self, width: usize, height: usize) -> Result<()> {
        for row in 0..self.rows {
            for col in 0..self.cols {
                let (x, y) = self.site_position(row, col);
                let cx = x.round();
                let cy = y.round();
                if cx < 0.0 || cy < 0.0 || cx >= width as f64 || cy >= height as f64 {
                    return Err(Error::Geometry(format!(
                        "site ({row}, {col}) at ({x:.3}, {y:.3}) lies outside the \
                         {width}x{height} image"
                    )));
                }
            }
        }
        Ok(())
    }
}
