//! Forward image-formation model.
//!
//! Produces synthetic fluorescence frames with known ground truth: each
//! occupied site contributes its point-spread function, placed at the
//! site's nearest pixel and scaled by the per-atom brightness, on top of a
//! uniform background. Optional shot noise (Poisson) and read noise
//! (additive Gaussian) are drawn from a seeded, pixel-order-stable stream,
//! so identical inputs always produce bit-identical frames.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::GridGeometry;
use crate::Image;
use crate::Kernel;
use crate::OccupancyMatrix;

/// Noise applied on top of the expected frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// No noise; sampled frames equal the expected frame exactly.
    None,
    /// Per-pixel Poisson shot noise.
    Poisson,
    /// Poisson shot noise plus Gaussian read noise of the given standard
    /// deviation, clamped at zero.
    PoissonGaussian { read_sigma: f64 },
}

/// Scene parameters for synthetic frames.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    /// Point-spread function; non-negative, unit sum.
    pub psf: Kernel,
    /// Background level in photoelectrons per pixel.
    pub background: f64,
    /// Expected photoelectrons collected from one occupied site.
    pub brightness: f64,
    pub noise: NoiseModel,
    /// Seed for the noise stream. The RNG (ChaCha8, one stream per frame,
    /// pixels drawn in row-major order) is part of this type's contract.
    pub seed: u64,
}

impl ForwardModel {
    pub fn new(
        psf: Kernel,
        background: f64,
        brightness: f64,
        noise: NoiseModel,
        seed: u64,
    ) -> Result<Self> {
        if !psf.is_unit_sum_nonnegative(1e-12) {
            return Err(Error::InvalidInput(
                "psf must be non-negative with unit sum".into(),
            ));
        }
        if !(background.is_finite() && background >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "background must be finite and non-negative, got {background}"
            )));
        }
        if !(brightness.is_finite() && brightness > 0.0) {
            return Err(Error::InvalidInput(format!(
                "brightness must be finite and positive, got {brightness}"
            )));
        }
        if let NoiseModel::PoissonGaussian { read_sigma } = noise {
            if !(read_sigma.is_finite() && read_sigma >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "read sigma must be finite and non-negative, got {read_sigma}"
                )));
            }
        }
        Ok(Self {
            psf,
            background,
            brightness,
            noise,
            seed,
        })
    }
}

/// Noiseless expected frame: background plus one PSF per occupied site.
///
/// Each occupied site's PSF is centered on the site's nearest pixel;
/// kernel pixels falling outside the image are clipped (those photons are
/// lost). Contributions accumulate per pixel in row-major site order.
pub fn expected_image(
    model: &ForwardModel,
    grid: &GridGeometry,
    occupancy: &OccupancyMatrix,
    width: usize,
    height: usize,
) -> Result<Image> {
    if occupancy.rows() != grid.rows || occupancy.cols() != grid.cols {
        return Err(Error::DimensionMismatch(format!(
            "occupancy is {}x{} but grid is {}x{}",
            occupancy.rows(),
            occupancy.cols(),
            grid.rows,
            grid.cols
        )));
    }
    grid.validate_inside(width, height)?;

    let size = model.psf.size();
    let half = model.psf.half() as i64;
    let scaled: Vec<f64> = model
        .psf
        .data()
        .iter()
        .map(|&v| v * model.brightness)
        .collect();

    let mut data = vec![model.background; width * height];
    for (row, col, &occupied) in occupancy.iter_sites() {
        if !occupied {
            continue;
        }
        let (x, y) = grid.site_position(row, col);
        let cx = x.round() as i64;
        let cy = y.round() as i64;
        for ki in 0..size {
            let py = cy - half + ki as i64;
            if py < 0 || py >= height as i64 {
                continue;
            }
            let row_base = py as usize * width;
            let kernel_row = &scaled[ki * size..(ki + 1) * size];
            for (kj, &contribution) in kernel_row.iter().enumerate() {
                let px = cx - half + kj as i64;
                if px < 0 || px >= width as i64 {
                    continue;
                }
                data[row_base + px as usize] += contribution;
            }
        }
    }
    Image::new(width, height, data)
}

/// Expected frame with the configured noise applied.
///
/// Pixels are drawn in row-major order from a single ChaCha8 stream seeded
/// with `model.seed`; zero-rate pixels draw nothing. Gaussian read noise is
/// added after the Poisson draw and the result is clamped at zero.
pub fn sample_image(
    model: &ForwardModel,
    grid: &GridGeometry,
    occupancy: &OccupancyMatrix,
    width: usize,
    height: usize,
) -> Result<Image> {
    let expected = expected_image(model, grid, occupancy, width, height)?;
    let read_sigma = match model.noise {
        NoiseModel::None => return Ok(expected),
        NoiseModel::Poisson => 0.0,
        NoiseModel::PoissonGaussian { read_sigma } => read_sigma,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let gaussian = if read_sigma > 0.0 {
        Some(Normal::new(0.0, read_sigma).map_err(|e| {
            Error::InvalidInput(format!("invalid read-noise distribution: {e}"))
        })?)
    } else {
        None
    };

    let mut data = Vec::with_capacity(width * height);
    for &rate in expected.data() {
        let mut value = if rate > 0.0 {
            Poisson::new(rate)
                .map_err(|e| Error::InvalidInput(format!("invalid poisson rate {rate}: {e}")))?
                .sample(&mut rng)
        } else {
            0.0
        };
        if let Some(normal) = &gaussian {
            value += normal.sample(&mut rng);
        }
        data.push(value.max(0.0));
    }
    Image::new(width, height, data)
}

/// Random ground-truth occupancy: each site is filled independently with
/// probability `fill_fraction`, deterministically for a given seed.
pub fn make_truth(
    rows: usize,
    cols: usize,
    fill_fraction: f64,
    seed: u64,
) -> Result<OccupancyMatrix> {
    if !(fill_fraction.is_finite() && (0.0..=1.0).contains(&fill_fraction)) {
        return Err(Error::InvalidInput(format!(
            "fill fraction must lie in [0, 1], got {fill_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<bool> = (0..rows * cols)
        .map(|_| rand::Rng::random_bool(&mut rng, fill_fraction))
        .collect();
    OccupancyMatrix::new(rows, cols, values)
}
