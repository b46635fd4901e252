//! Projection-kernel construction.
//!
//! The projector is the row of the pseudoinverse of a local design matrix
//! that corresponds to the center site. The design matrix has one column
//! per light source visible in the kernel window: the center site's PSF and
//! the PSFs of the eight nearest lattice neighbors, each shifted by its
//! (pixel-rounded) lattice offset, keeping only neighbors whose shifted PSF
//! actually intersects the window. By construction the projector then
//! responds with 1 to the center site's PSF and with 0 to each included
//! neighbor's.

use nalgebra::DMatrix;

use crate::error::{CalibrationStage, Error, Result};
use crate::GridGeometry;
use crate::Kernel;

/// Relative singular-value cutoff for the pseudoinverse.
const SVD_RELATIVE_CUTOFF: f64 = 1e-10;

/// The center site's PSF shifted by `(shift_x, shift_y)` pixels, restricted
/// to the kernel window. Returns `None` when no nonzero entry lands inside.
fn shifted_column(psf: &Kernel, shift_x: i64, shift_y: i64) -> Option<Vec<f64>> {
    let size = psf.size() as i64;
    let mut column = vec![0.0f64; (size * size) as usize];
    let mut any = false;
    for row in 0..size {
        let src_row = row - shift_y;
        if src_row < 0 || src_row >= size {
            continue;
        }
        for col in 0..size {
            let src_col = col - shift_x;
            if src_col < 0 || src_col >= size {
                continue;
            }
            let v = psf.get(src_row as usize, src_col as usize);
            if v != 0.0 {
                column[(row * size + col) as usize] = v;
                any = true;
            }
        }
    }
    any.then_some(column)
}

/// Builds the runtime projection kernel for the given PSF and lattice.
pub fn build_projector(psf: &Kernel, grid: &GridGeometry) -> Result<Kernel> {
    if !psf.is_unit_sum_nonnegative(1e-9) {
        return Err(Error::InvalidInput(
            "projector construction needs a non-negative, unit-sum PSF".into(),
        ));
    }
    let size = psf.size();
    let (sin_a, cos_a) = grid.angle.sin_cos();

    let mut columns: Vec<Vec<f64>> = vec![psf.data().to_vec()];
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let offset_x = grid.spacing * (dc as f64 * cos_a - dr as f64 * sin_a);
            let offset_y = grid.spacing * (dc as f64 * sin_a + dr as f64 * cos_a);
            if let Some(column) =
                shifted_column(psf, offset_x.round() as i64, offset_y.round() as i64)
            {
                columns.push(column);
            }
        }
    }

    let design = DMatrix::from_fn(size * size, columns.len(), |r, c| columns[c][r]);
    let svd = design.svd(true, true);
    let max_singular = svd
        .singular_values
        .iter()
        .fold(0.0f64, |acc, &s| acc.max(s));
    if !(max_singular.is_finite() && max_singular > 0.0) {
        return Err(Error::calibration(
            CalibrationStage::Projector,
            "design matrix is rank deficient: all singular values vanish",
        ));
    }
    let pinv = svd
        .pseudo_inverse(SVD_RELATIVE_CUTOFF * max_singular)
        .map_err(|e| Error::calibration(CalibrationStage::Projector, e))?;

    let projector: Vec<f64> = pinv.row(0).iter().copied().collect();
    Kernel::new(size, projector)
}
