//! Runtime state reconstruction.
//!
//! The per-site computation mirrors the four accelerator stages: boundary
//! extraction (clamped crop windows), image-detail extraction, element-wise
//! projection with the kernel, and output aggregation into the normalized
//! emission
//!
//! ```text
//! emission = sum(K * I over used window) * sum(K over used window) / sum(K)
//! ```
//!
//! where the used window is the part of the kernel that overlaps the image
//! when centered on the site. Sites are independent, so the full-frame pass
//! parallelizes across sites while staying bit-identical to the serial pass.

use num_traits::Float;
use rayon::prelude::*;

use crate::calibrate::CalibrationProfile;
use crate::error::{Error, Result};
use crate::Image;
use crate::Kernel;
use crate::{EmissionMatrix, OccupancyMatrix};

/// Aligned image/kernel crop windows for one site.
///
/// All bounds are half-open. The image window `[img_x0, img_x1) x
/// [img_y0, img_y1)` and the kernel window `[ker_x0, ker_x1) x
/// [ker_y0, ker_y1)` have equal extents; kernel cells outside the kernel
/// window are the unused cells of an edge site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBounds {
    pub img_x0: usize,
    pub img_y0: usize,
    pub img_x1: usize,
    pub img_y1: usize,
    pub ker_x0: usize,
    pub ker_y0: usize,
    pub ker_x1: usize,
    pub ker_y1: usize,
}

impl CropBounds {
    pub fn width(&self) -> usize {
        self.img_x1 - self.img_x0
    }

    pub fn height(&self) -> usize {
        self.img_y1 - self.img_y0
    }

    /// True when the whole kernel fits inside the image for this site.
    pub fn is_full(&self, kernel_size: usize) -> bool {
        self.ker_x0 == 0
            && self.ker_y0 == 0
            && self.ker_x1 == kernel_size
            && self.ker_y1 == kernel_size
    }

    fn validate(&self, image: &Image, kernel: &Kernel) -> Result<()> {
        let ok = self.img_x0 < self.img_x1
            && self.img_y0 < self.img_y1
            && self.img_x1 <= image.width()
            && self.img_y1 <= image.height()
            && self.ker_x1 <= kernel.size()
            && self.ker_y1 <= kernel.size()
            && self.ker_x1 - self.ker_x0 == self.width()
            && self.ker_y1 - self.ker_y0 == self.height();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "crop bounds {self:?} are inconsistent with a {}x{} image and size-{} kernel",
                image.width(),
                image.height(),
                kernel.size()
            )))
        }
    }
}

/// Reconstruction result for one site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteEmission {
    pub row: usize,
    pub col: usize,
    /// Sum of kernel times image over the used window.
    pub product_sum: f64,
    /// Sum of kernel entries over the used window.
    pub used_kernel_sum: f64,
    /// Normalized brightness.
    pub emission: f64,
}

/// Computes the aligned crop windows for a site at sub-pixel position
/// `(site_x, site_y)`.
///
/// The window is centered on the site's nearest pixel (ties round half away
/// from zero) and clamped to the image; the kernel window shifts by the
/// clamped amount so both stay aligned. A site whose nearest pixel falls
/// off the image is a geometry error.
pub fn extract_boundaries(
    site_x: f64,
    site_y: f64,
    image_width: usize,
    image_height: usize,
    kernel_size: usize,
) -> Result<CropBounds> {
    if kernel_size == 0 || kernel_size.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "kernel size must be odd and positive, got {kernel_size}"
        )));
    }
    if !(site_x.is_finite() && site_y.is_finite()) {
        return Err(Error::Geometry("site position is not finite".into()));
    }
    let cx = site_x.round();
    let cy = site_y.round();
    if cx < 0.0 || cy < 0.0 || cx >= image_width as f64 || cy >= image_height as f64 {
        return Err(Error::Geometry(format!(
            "site at ({site_x:.3}, {site_y:.3}) lies outside the \
             {image_width}x{image_height} image"
        )));
    }
    let (cx, cy) = (cx as i64, cy as i64);
    let half = (kernel_size as i64 - 1) / 2;

    let clamp = |ideal0: i64, ideal1: i64, dim: usize| {
        let lo = ideal0.max(0) as usize;
        let hi = ideal1.min(dim as i64) as usize;
        let k0 = (lo as i64 - ideal0) as usize;
        (lo, hi, k0, k0 + (hi - lo))
    };
    let (img_x0, img_x1, ker_x0, ker_x1) = clamp(cx - half, cx + half + 1, image_width);
    let (img_y0, img_y1, ker_y0, ker_y1) = clamp(cy - half, cy + half + 1, image_height);
    Ok(CropBounds {
        img_x0,
        img_y0,
        img_x1,
        img_y1,
        ker_x0,
        ker_y0,
        ker_x1,
        ker_y1,
    })
}

/// Projects one site: element-wise kernel x image product over the used
/// window, then normalization by the used-kernel fraction.
///
/// Both partial sums accumulate in canonical row-major order. The fraction
/// is applied as a single factor, so a full-window site reduces to
/// `product_sum` exactly: its used-kernel sum is computed in the same order
/// as `kernel_total` and the quotient is exactly one.
pub fn reconstruct_site(
    image: &Image,
    bounds: &CropBounds,
    projector: &Kernel,
    kernel_total: f64,
    row: usize,
    col: usize,
) -> Result<SiteEmission> {
    if kernel_total.abs() < 1e-300 {
        return Err(Error::InvalidProfile(
            "projector kernel sum is zero; emissions are undefined".into(),
        ));
    }
    bounds.validate(image, projector)?;

    let mut product_sum = 0.0f64;
    let mut used_kernel_sum = 0.0f64;
    for ki in bounds.ker_y0..bounds.ker_y1 {
        let img_y = bounds.img_y0 + (ki - bounds.ker_y0);
        let image_row = &image.row(img_y)[bounds.img_x0..bounds.img_x1];
        let kernel_row = &projector.row(ki)[bounds.ker_x0..bounds.ker_x1];
        for (&k, &i) in kernel_row.iter().zip(image_row) {
            product_sum += k * i;
            used_kernel_sum += k;
        }
    }
    let emission = product_sum * (used_kernel_sum / kernel_total);
    Ok(SiteEmission {
        row,
        col,
        product_sum,
        used_kernel_sum,
        emission,
    })
}

fn reconstruct_one(
    image: &Image,
    profile: &CalibrationProfile,
    row: usize,
    col: usize,
) -> Result<f64> {
    let (x, y) = profile.grid.site_position(row, col);
    let bounds = extract_boundaries(
        x,
        y,
        image.width(),
        image.height(),
        profile.projector.size(),
    )
    .map_err(|e| match e {
        Error::Geometry(msg) => Error::Geometry(format!("site ({row}, {col}): {msg}")),
        other => other,
    })?;
    reconstruct_site(
        image,
        &bounds,
        &profile.projector,
        profile.projector_sum(),
        row,
        col,
    )
    .map(|site| site.emission)
}

/// Reconstructs every site of the profile's grid, in parallel across sites
/// on the current rayon thread pool.
///
/// Each site writes one disjoint output slot and all per-site sums are
/// sequential, so the result is bit-identical for every thread count and to
/// [`reconstruct_all_serial`].
pub fn reconstruct_all(image: &Image, profile: &CalibrationProfile) -> Result<EmissionMatrix> {
    profile
        .grid
        .validate_inside(image.width(), image.height())?;
    let cols = profile.grid.cols;
    let emissions: Vec<f64> = (0..profile.grid.site_count())
        .into_par_iter()
        .map(|idx| reconstruct_one(image, profile, idx / cols, idx % cols))
        .collect::<Result<_>>()?;
    EmissionMatrix::new(profile.grid.rows, cols, emissions)
}

/// Single-threaded reference pass over all sites.
pub fn reconstruct_all_serial(
    image: &Image,
    profile: &CalibrationProfile,
) -> Result<EmissionMatrix> {
    profile
        .grid
        .validate_inside(image.width(), image.height())?;
    let cols = profile.grid.cols;
    let emissions: Vec<f64> = (0..profile.grid.site_count())
        .map(|idx| reconstruct_one(image, profile, idx / cols, idx % cols))
        .collect::<Result<_>>()?;
    EmissionMatrix::new(profile.grid.rows, cols, emissions)
}

/// Balanced pairwise reduction, as a hardware adder tree would sum one
/// kernel row. Returns the sum and the tree depth (`ceil(log2 n)`; zero
/// for empty or single-element input).
///
/// The input is padded with zeros to the next power of two, and adjacent
/// pairs are combined per stage.
pub fn adder_tree_sum<T: Float>(values: &[T]) -> (T, u32) {
    if values.is_empty() {
        return (T::zero(), 0);
    }
    let mut level = values.to_vec();
    level.resize(values.len().next_power_of_two(), T::zero());
    let mut stages = 0;
    while level.len() > 1 {
        level = level.chunks(2).map(|pair| pair[0] + pair[1]).collect();
        stages += 1;
    }
    (level[0], stages)
}

/// Thresholds emissions into occupancy; strictly-greater comparison, so a
/// site exactly at the threshold counts as empty.
pub fn apply_threshold(emissions: &EmissionMatrix, threshold: f64) -> OccupancyMatrix {
    OccupancyMatrix::new(
        emissions.rows(),
        emissions.cols(),
        emissions.values().iter().map(|&e| e > threshold).collect(),
    )
    .expect("emission matrix shape is already valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ones_kernel(size: usize) -> Kernel {
        Kernel::new(size, vec![1.0; size * size]).unwrap()
    }

    fn ones_image(width: usize, height: usize) -> Image {
        Image::filled(width, height, 1.0).unwrap()
    }

    #[test]
    fn interior_site_bounds() {
        let b = extract_boundaries(128.0, 128.0, 256, 256, 31).unwrap();
        assert_eq!((b.img_x0, b.img_x1), (113, 144));
        assert_eq!((b.ker_x0, b.ker_x1), (0, 31));
        assert_eq!((b.img_y0, b.img_y1), (113, 144));
        assert!(b.is_full(31));
    }

    #[test]
    fn near_origin_bounds_clamp() {
        let b = extract_boundaries(5.0, 5.0, 256, 256, 31).unwrap();
        assert_eq!((b.img_x0, b.img_x1), (0, 21));
        assert_eq!((b.ker_x0, b.ker_x1), (10, 31));
    }

    #[test]
    fn far_corner_bounds_clamp() {
        let b = extract_boundaries(255.0, 255.0, 256, 256, 31).unwrap();
        assert_eq!((b.img_x0, b.img_x1), (240, 256));
        assert_eq!((b.ker_x0, b.ker_x1), (0, 16));
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let b = extract_boundaries(10.5, 10.0, 256, 256, 3).unwrap();
        assert_eq!((b.img_x0, b.img_x1), (10, 13)); // center 11
        let err = extract_boundaries(255.5, 10.0, 256, 256, 3).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn full_window_emission_equals_product_sum() {
        let kernel = ones_kernel(31);
        let image = ones_image(256, 256);
        let bounds = extract_boundaries(128.0, 128.0, 256, 256, 31).unwrap();
        let site = reconstruct_site(&image, &bounds, &kernel, kernel.sum(), 0, 0).unwrap();
        assert_eq!(site.product_sum, 961.0);
        assert_eq!(site.used_kernel_sum, 961.0);
        assert_eq!(site.emission.to_bits(), site.product_sum.to_bits());
    }

    #[test]
    fn corner_site_emission_follows_normalization() {
        let kernel = ones_kernel(31);
        let image = ones_image(256, 256);
        let bounds = extract_boundaries(255.0, 128.0, 256, 256, 31).unwrap();
        let site = reconstruct_site(&image, &bounds, &kernel, kernel.sum(), 0, 0).unwrap();
        assert_eq!(site.product_sum, 496.0);
        assert_eq!(site.used_kernel_sum, 496.0);
        let expected = 496.0 * 496.0 / 961.0;
        assert!((site.emission - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn matches_explicit_mask_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let kernel = Kernel::new(
                31,
                (0..961).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let image = Image::new(
                64,
                64,
                (0..64 * 64).map(|_| rng.random_range(0.0..1000.0)).collect(),
            )
            .unwrap();
            // Stay below 63.5 so the rounded center lands on the image.
            let x = rng.random_range(0.0..63.5);
            let y = rng.random_range(0.0..63.5);
            let bounds = extract_boundaries(x, y, 64, 64, 31).unwrap();
            let total = kernel.sum();
            let site = reconstruct_site(&image, &bounds, &kernel, total, 0, 0).unwrap();

            // Brute force with an explicitly materialized usage mask.
            let mut product = 0.0f64;
            let mut used = 0.0f64;
            for i in 0..31 {
                for j in 0..31 {
                    let in_window = i >= bounds.ker_y0
                        && i < bounds.ker_y1
                        && j >= bounds.ker_x0
                        && j < bounds.ker_x1;
                    let mask = if in_window { 1.0 } else { 0.0 };
                    if in_window {
                        let px = bounds.img_x0 + (j - bounds.ker_x0);
                        let py = bounds.img_y0 + (i - bounds.ker_y0);
                        product += kernel.get(i, j) * image.pixel(px, py) * mask;
                        used += kernel.get(i, j) * mask;
                    }
                }
            }
            let expected = product * used / total;
            let rel = (site.emission - expected).abs()
                / site.emission.abs().max(expected.abs()).max(1e-300);
            assert!(rel <= 1e-12, "rel {rel}");
        }
    }

    #[test]
    fn zero_kernel_total_is_invalid_profile() {
        let kernel = Kernel::new(3, vec![0.0; 9]).unwrap();
        let image = ones_image(16, 16);
        let bounds = extract_boundaries(8.0, 8.0, 16, 16, 3).unwrap();
        let err = reconstruct_site(&image, &bounds, &kernel, kernel.sum(), 0, 0).unwrap_err();
        assert!(matches!(err, Error::InvalidProfile(_)));
    }

    #[test]
    fn adder_tree_arithmetic_series() {
        let values: Vec<f64> = (1..=31).map(f64::from).collect();
        assert_eq!(adder_tree_sum(&values), (496.0, 5));
    }

    #[test]
    fn adder_tree_zeros_and_degenerate() {
        assert_eq!(adder_tree_sum(&[0.0f64; 31]), (0.0, 5));
        assert_eq!(adder_tree_sum(&[42.0f64]), (42.0, 0));
        assert_eq!(adder_tree_sum::<f64>(&[]), (0.0, 0));
    }

    #[test]
    fn adder_tree_matches_canonical_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let values: Vec<f64> = (0..31).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (tree, depth) = adder_tree_sum(&values);
            assert_eq!(depth, 5);
            let reference = crate::sum::canonical_sum(&values);
            let rel = (tree - reference).abs() / reference.abs().max(1e-300);
            assert!(rel <= 1e-12);
        }
    }

    #[test]
    fn all_zero_image_reconstructs_to_zero() {
        let grid = crate::GridGeometry::centered(3, 3, 25.6, 0.0, 128, 128).unwrap();
        let psf = Kernel::gaussian(31, 2.0).unwrap();
        let projector = crate::calibrate::build_projector(&psf, &grid).unwrap();
        let profile =
            CalibrationProfile::new(grid, projector, psf, 0.0, 0.0).unwrap();
        let image = Image::filled(128, 128, 0.0).unwrap();
        let emissions = reconstruct_all(&image, &profile).unwrap();
        assert!(emissions.values().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn noiseless_full_scene_recovers_brightness_at_interior_sites() {
        // Zero background: the projector inverts the PSF, so interior
        // emissions recover the per-atom brightness. (With a nonzero
        // background Eq-style reconstruction picks up a constant offset of
        // background times the projector sum, absorbed by the threshold.)
        use crate::simulate::{expected_image, ForwardModel, NoiseModel};
        let grid = crate::GridGeometry::centered(10, 10, 25.6, 0.0, 256, 256).unwrap();
        let psf = Kernel::gaussian(31, 2.0).unwrap();
        let projector = crate::calibrate::build_projector(&psf, &grid).unwrap();
        let profile =
            CalibrationProfile::new(grid.clone(), projector, psf.clone(), 0.0, 0.0).unwrap();

        let model = ForwardModel::new(psf, 0.0, 2000.0, NoiseModel::None, 0).unwrap();
        let occupancy = crate::OccupancyMatrix::filled(10, 10, true).unwrap();
        let image = expected_image(&model, &grid, &occupancy, 256, 256).unwrap();
        let emissions = reconstruct_all(&image, &profile).unwrap();

        let mut interior = 0;
        for (row, col, &emission) in emissions.iter_sites() {
            let (x, y) = grid.site_position(row, col);
            let bounds = extract_boundaries(x, y, 256, 256, 31).unwrap();
            if bounds.is_full(31) {
                interior += 1;
                let rel = (emission - 2000.0).abs() / 2000.0;
                assert!(rel <= 0.02, "site ({row}, {col}): emission {emission}");
            }
        }
        assert!(interior >= 64, "{interior} interior sites");
    }

    #[test]
    fn threshold_is_strict() {
        let emissions = EmissionMatrix::new(1, 3, vec![0.0, 50.0, 100.0]).unwrap();
        let occ = apply_threshold(&emissions, 50.0);
        assert_eq!(occ.values(), &[false, false, true]);
    }
}
