//! Projection-based occupancy detection for tweezer atom arrays.
//!
//! Fluorescence frames from a tweezer array are a sum of one point-spread
//! function per occupied site on a uniform background. Detection inverts
//! that model with a precomputed projection kernel: at runtime each site
//! costs one element-wise kernel/image product, a normalization, and a
//! threshold comparison. The pipeline stages are:
//!
//! 1. **Simulate** ([`simulate`]) – forward model producing synthetic
//!    frames with known ground truth, with optional Poisson shot noise and
//!    Gaussian read noise.
//! 2. **Calibrate** ([`calibrate`]) – offline stage: lattice fit from
//!    exemplary frames, PSF extraction, projector construction via a
//!    pseudoinverse of the local PSF design matrix, background estimate,
//!    and threshold calibration on a two-component Gaussian mixture.
//! 3. **Reconstruct** ([`reconstruct`]) – the runtime hot path: clamped
//!    crop windows, element-wise projection, edge normalization, and
//!    thresholding, parallel across sites and bit-identical for any thread
//!    count.
//! 4. **Model** ([`pipeline_model`]) – analytic latency model of the
//!    four-stage dataflow accelerator this computation maps onto, with
//!    burst-based memory transfers and next-atom prefetching.
//!
//! Numeric containers are generic over the scalar type via [`num_traits`];
//! the pipeline itself runs on the `f64` aliases exported at the crate
//! root ([`Image`], [`Kernel`], [`EmissionMatrix`], [`OccupancyMatrix`]).
//! All accumulations use one canonical summation order
//! ([`sum::canonical_sum`]), which is what makes serial and parallel
//! reconstructions bit-identical.

pub mod calibrate;
mod error;
mod grid;
mod image;
mod kernel;
pub mod pipeline_model;
pub mod reconstruct;
pub mod simulate;
pub mod sum;

mod site_matrix;

pub use error::{CalibrationStage, Error, Result};
pub use grid::GridGeometry;
pub use image::ImageOf;
pub use kernel::KernelOf;
pub use site_matrix::SiteMatrix;

pub use calibrate::CalibrationProfile;

/// Camera frame with `f64` working precision.
pub type Image = ImageOf<f64>;
/// PSF or projection kernel with `f64` working precision.
pub type Kernel = KernelOf<f64>;
/// Reconstructed per-site brightness.
pub type EmissionMatrix = SiteMatrix<f64>;
/// Thresholded per-site state; `true` means an atom was detected.
pub type OccupancyMatrix = SiteMatrix<bool>;
