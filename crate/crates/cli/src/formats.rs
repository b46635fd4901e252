//! JSON schemas for profiles, ground truth, and detection results.
//!
//! All real numbers round-trip at full precision (shortest-representation
//! serialization). Version fields gate loading.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use atomdet::{CalibrationProfile, EmissionMatrix, GridGeometry, Kernel, OccupancyMatrix};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct GridFile {
    pub origin_x: f64,
    pub origin_y: f64,
    pub spacing: f64,
    pub angle_rad: f64,
    pub rows: usize,
    pub cols: usize,
}

/// Persisted calibration profile.
#[derive(Debug, Serialize, Deserialize)]
pub struct ProfileFile {
    pub version: u32,
    pub grid: GridFile,
    pub kernel_size: usize,
    pub psf: Vec<f64>,
    pub projector: Vec<f64>,
    pub projector_total_sum: f64,
    pub threshold: f64,
    pub background: f64,
}

impl ProfileFile {
    pub fn from_profile(profile: &CalibrationProfile) -> Self {
        Self {
            version: FORMAT_VERSION,
            grid: GridFile {
                origin_x: profile.grid.origin_x,
                origin_y: profile.grid.origin_y,
                spacing: profile.grid.spacing,
                angle_rad: profile.grid.angle,
                rows: profile.grid.rows,
                cols: profile.grid.cols,
            },
            kernel_size: profile.kernel_size(),
            psf: profile.psf.data().to_vec(),
            projector: profile.projector.data().to_vec(),
            projector_total_sum: profile.projector_sum(),
            threshold: profile.threshold,
            background: profile.background,
        }
    }

    /// Rebuilds the runtime profile, keeping the stored projector sum so
    /// emissions stay bit-identical across save/load.
    pub fn into_profile(self) -> Result<CalibrationProfile, atomdet::Error> {
        if self.version != FORMAT_VERSION {
            return Err(atomdet::Error::InvalidProfile(format!(
                "unsupported profile version {} (expected {FORMAT_VERSION})",
                self.version
            )));
        }
        let grid = GridGeometry::new(
            self.grid.origin_x,
            self.grid.origin_y,
            self.grid.spacing,
            self.grid.angle_rad,
            self.grid.rows,
            self.grid.cols,
        )?;
        let psf = Kernel::new(self.kernel_size, self.psf)?;
        let projector = Kernel::new(self.kernel_size, self.projector)?;
        CalibrationProfile::with_projector_sum(
            grid,
            projector,
            psf,
            self.threshold,
            self.background,
            self.projector_total_sum,
        )
    }
}

/// Ground truth emitted next to simulated frames.
#[derive(Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub rows: usize,
    pub cols: usize,
    pub occupancy: Vec<Vec<u8>>,
    pub gamma: f64,
    pub background: f64,
    pub seed: u64,
}

impl TruthFile {
    pub fn new(occupancy: &OccupancyMatrix, gamma: f64, background: f64, seed: u64) -> Self {
        Self {
            rows: occupancy.rows(),
            cols: occupancy.cols(),
            occupancy: occupancy_rows(occupancy),
            gamma,
            background,
            seed,
        }
    }
}

/// Detection output for one frame.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultFile {
    pub version: u32,
    pub emissions: Vec<Vec<f64>>,
    pub occupancy: Vec<Vec<u8>>,
    pub elapsed_us: f64,
    pub threads: usize,
}

impl ResultFile {
    pub fn new(
        emissions: &EmissionMatrix,
        occupancy: &OccupancyMatrix,
        elapsed_us: f64,
        threads: usize,
    ) -> Self {
        let per_row = |r: usize| emissions.values()[r * emissions.cols()..][..emissions.cols()]
            .to_vec();
        Self {
            version: FORMAT_VERSION,
            emissions: (0..emissions.rows()).map(per_row).collect(),
            occupancy: occupancy_rows(occupancy),
            elapsed_us,
            threads,
        }
    }
}

fn occupancy_rows(occupancy: &OccupancyMatrix) -> Vec<Vec<u8>> {
    (0..occupancy.rows())
        .map(|r| {
            (0..occupancy.cols())
                .map(|c| u8::from(*occupancy.get(r, c)))
                .collect()
        })
        .collect()
}

/// One benchmark measurement, emitted as a CSV row.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub array_rows: usize,
    pub array_cols: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub variant: &'static str,
    pub threads: usize,
    pub repeats: usize,
    pub mean_us: f64,
    pub std_us: f64,
}

impl BenchRecord {
    pub const CSV_HEADER: &'static str =
        "rows,cols,width,height,variant,threads,repeats,mean_us,std_us";

    /// CSV row with '.' decimal separators, independent of locale.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3},{:.3}",
            self.array_rows,
            self.array_cols,
            self.image_w,
            self.image_h,
            self.variant,
            self.threads,
            self.repeats,
            self.mean_us,
            self.std_us
        )
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut bytes = serde_json::to_vec(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> io::Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use atomdet::calibrate::build_projector;

    #[test]
    fn profile_round_trip_preserves_bits() {
        let grid = GridGeometry::new(12.8, 12.9, 25.6, 0.0123, 4, 5).unwrap();
        let psf = Kernel::gaussian(31, 2.3).unwrap();
        let projector = build_projector(&psf, &grid).unwrap();
        let profile =
            CalibrationProfile::new(grid, projector, psf, 987.654321, 10.25).unwrap();

        let dto = ProfileFile::from_profile(&profile);
        let json = serde_json::to_string(&dto).unwrap();
        let back: ProfileFile = serde_json::from_str(&json).unwrap();
        let restored = back.into_profile().unwrap();

        assert_eq!(profile.grid, restored.grid);
        assert_eq!(profile.threshold.to_bits(), restored.threshold.to_bits());
        assert_eq!(
            profile.projector_sum().to_bits(),
            restored.projector_sum().to_bits()
        );
        let bits = |k: &Kernel| k.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&profile.projector), bits(&restored.projector));
        assert_eq!(bits(&profile.psf), bits(&restored.psf));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let grid = GridGeometry::new(0.0, 0.0, 10.0, 0.0, 2, 2).unwrap();
        let psf = Kernel::delta(3).unwrap();
        let profile =
            CalibrationProfile::new(grid, Kernel::delta(3).unwrap(), psf, 1.0, 0.0).unwrap();
        let mut dto = ProfileFile::from_profile(&profile);
        dto.version = 2;
        assert!(dto.into_profile().is_err());
    }
}
