//! Background estimation and PSF extraction.

use crate::error::{CalibrationStage, Error, Result};
use crate::GridGeometry;
use crate::Image;
use crate::Kernel;
use crate::reconstruct::extract_boundaries;
use crate::sum::canonical_sum;

/// Median of pixels farther than `kernel_size / 2` from every site, pooled
/// over all frames.
///
/// If the grid covers the frame so densely that no pixel qualifies, the
/// global median is used instead.
pub fn estimate_background(images: &[Image], grid: &GridGeometry, kernel_size: usize) -> f64 {
    let (w, h) = (images[0].width(), images[0].height());
    let radius = kernel_size as f64 / 2.0;
    let radius_sq = radius * radius;

    let mut near_site = vec![false; w * h];
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let (sx, sy) = grid.site_position(row, col);
            let x_lo = ((sx - radius).floor() as i64).max(0);
            let x_hi = ((sx + radius).ceil() as i64).min(w as i64 - 1);
            let y_lo = ((sy - radius).floor() as i64).max(0);
            let y_hi = ((sy + radius).ceil() as i64).min(h as i64 - 1);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let (dx, dy) = (x as f64 - sx, y as f64 - sy);
                    if dx * dx + dy * dy <= radius_sq {
                        near_site[y as usize * w + x as usize] = true;
                    }
                }
            }
        }
    }

    let mut pooled: Vec<f64> = Vec::new();
    for img in images {
        pooled.extend(
            img.data()
                .iter()
                .zip(&near_site)
                .filter(|(_, &near)| !near)
                .map(|(&v, _)| v),
        );
    }
    if pooled.is_empty() {
        for img in images {
            pooled.extend_from_slice(img.data());
        }
    }
    let mid = pooled.len() / 2;
    let (_, median, _) = pooled.select_nth_unstable_by(mid, f64::total_cmp);
    *median
}

/// Averages background-subtracted crops over every bright site of every
/// frame into one shared PSF, clamped non-negative and normalized to unit
/// sum.
///
/// A site counts as bright when its background-subtracted crop sum exceeds
/// five times the expected background fluctuation of the crop
/// (`5 * sqrt(background * pixels)`), a bootstrap criterion that needs no
/// calibrated threshold. Edge crops contribute only their in-image cells,
/// which are averaged per cell over however many samples covered them.
pub fn extract_psf(
    images: &[Image],
    grid: &GridGeometry,
    kernel_size: usize,
    background: f64,
) -> Result<Kernel> {
    let mut acc = vec![0.0f64; kernel_size * kernel_size];
    let mut counts = vec![0u32; kernel_size * kernel_size];
    let mut bright_sites = 0usize;

    for image in images {
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                let (x, y) = grid.site_position(row, col);
                let bounds =
                    extract_boundaries(x, y, image.width(), image.height(), kernel_size)?;
                let pixels = (bounds.width() * bounds.height()) as f64;

                let mut crop_sum = 0.0;
                for ki in bounds.ker_y0..bounds.ker_y1 {
                    let img_y = bounds.img_y0 + (ki - bounds.ker_y0);
                    for value in &image.row(img_y)[bounds.img_x0..bounds.img_x1] {
                        crop_sum += value - background;
                    }
                }
                if crop_sum <= 5.0 * (background * pixels).sqrt() {
                    continue;
                }
                bright_sites += 1;
                for ki in bounds.ker_y0..bounds.ker_y1 {
                    let img_y = bounds.img_y0 + (ki - bounds.ker_y0);
                    let image_row = &image.row(img_y)[bounds.img_x0..bounds.img_x1];
                    for (kj, &value) in image_row.iter().enumerate() {
                        let cell = ki * kernel_size + bounds.ker_x0 + kj;
                        acc[cell] += value - background;
                        counts[cell] += 1;
                    }
                }
            }
        }
    }

    if bright_sites == 0 {
        return Err(Error::calibration(
            CalibrationStage::PsfExtraction,
            "no bright site found in any calibration frame",
        ));
    }

    let mut psf: Vec<f64> = acc
        .iter()
        .zip(&counts)
        .map(|(&sum, &n)| if n > 0 { (sum / n as f64).max(0.0) } else { 0.0 })
        .collect();
    let total = canonical_sum(&psf);
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::calibration(
            CalibrationStage::PsfExtraction,
            format!("extracted PSF has non-positive total {total}"),
        ));
    }
    for v in &mut psf {
        *v /= total;
    }
    Kernel::new(kernel_size, psf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{expected_image, make_truth, sample_image, ForwardModel, NoiseModel};

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (
            a.iter().sum::<f64>() / n,
            b.iter().sum::<f64>() / n,
        );
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            cov += (x - ma) * (y - mb);
            va += (x - ma).powi(2);
            vb += (y - mb).powi(2);
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    fn scene(
        noise: NoiseModel,
        count: usize,
        fill: f64,
        background: f64,
        psf: &Kernel,
    ) -> (Vec<Image>, GridGeometry) {
        let grid = GridGeometry::centered(5, 5, 25.6, 0.0, 160, 160).unwrap();
        let images = (0..count)
            .map(|k| {
                let model =
                    ForwardModel::new(psf.clone(), background, 2000.0, noise, 31 + k as u64)
                        .unwrap();
                let occupancy = make_truth(5, 5, fill, 100 + k as u64).unwrap();
                match noise {
                    NoiseModel::None => {
                        expected_image(&model, &grid, &occupancy, 160, 160).unwrap()
                    }
                    _ => sample_image(&model, &grid, &occupancy, 160, 160).unwrap(),
                }
            })
            .collect();
        (images, grid)
    }

    #[test]
    fn background_median_recovers_level() {
        let psf = Kernel::gaussian(31, 2.0).unwrap();
        let (images, grid) = scene(NoiseModel::Poisson, 10, 0.5, 10.0, &psf);
        let b = estimate_background(&images, &grid, 31);
        assert!((b - 10.0).abs() <= 1.0, "background {b}");
    }

    #[test]
    fn noiseless_gaussian_round_trip() {
        let psf = Kernel::gaussian(31, 2.0).unwrap();
        let (images, grid) = scene(NoiseModel::None, 4, 0.6, 3.0, &psf);
        let extracted = extract_psf(&images, &grid, 31, 3.0).unwrap();
        let r = pearson(extracted.data(), psf.data());
        assert!(r >= 0.999, "correlation {r}");
    }

    #[test]
    fn delta_psf_round_trip() {
        let psf = Kernel::delta(31).unwrap();
        let (images, grid) = scene(NoiseModel::None, 2, 1.0, 0.0, &psf);
        let extracted = extract_psf(&images, &grid, 31, 0.0).unwrap();
        assert!(extracted.get(15, 15) >= 0.999, "{}", extracted.get(15, 15));
    }

    #[test]
    fn noisy_round_trip_stays_correlated() {
        let psf = Kernel::gaussian(31, 2.0).unwrap();
        let (images, grid) = scene(NoiseModel::Poisson, 50, 0.6, 10.0, &psf);
        let background = estimate_background(&images, &grid, 31);
        let extracted = extract_psf(&images, &grid, 31, background).unwrap();
        let r = pearson(extracted.data(), psf.data());
        assert!(r >= 0.99, "correlation {r}");
    }

    #[test]
    fn all_dark_frames_fail() {
        let psf = Kernel::gaussian(31, 2.0).unwrap();
        let (images, grid) = scene(NoiseModel::Poisson, 4, 0.0, 10.0, &psf);
        let err = extract_psf(&images, &grid, 31, 10.0).unwrap_err();
        match err {
            Error::Calibration { stage, .. } => {
                assert_eq!(stage, CalibrationStage::PsfExtraction)
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
