//! Acceptance suite for the on-disk formats: write/read round trips must be
//! lossless — 16-bit exact for PGM frames, full-precision reals for
//! profiles.

use atomdet::calibrate::CalibrationProfile;
use atomdet::{GridGeometry, Image, Kernel};
use atomdet_cli::formats::{load_json, save_json, ProfileFile};
use atomdet_cli::pgm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernel_bits(kernel: &Kernel) -> Vec<u64> {
    kernel.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn criterion_10_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0010);

    // 100 randomized frames, already quantized to 16-bit values.
    for case in 0..100 {
        let width = rng.random_range(1..=64);
        let height = rng.random_range(1..=64);
        let data: Vec<f64> = (0..width * height)
            .map(|_| rng.random_range(0..=65535u32) as f64)
            .collect();
        let image = Image::new(width, height, data).unwrap();

        let path = dir.path().join(format!("frame_{case}.pgm"));
        pgm::write_file(&path, &image).unwrap();
        let back = pgm::read_file(&path).unwrap();
        assert_eq!(image, back, "case {case}");
    }

    // 100 randomized profiles with full-precision reals.
    for case in 0..100 {
        let kernel_size = [3usize, 5, 31][case % 3];
        let cells = kernel_size * kernel_size;
        let grid = GridGeometry::new(
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
            rng.random_range(5.0..50.0),
            rng.random_range(-0.7..0.7),
            rng.random_range(1..=40),
            rng.random_range(1..=40),
        )
        .unwrap();
        let psf = Kernel::new(
            kernel_size,
            (0..cells).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let projector = Kernel::new(
            kernel_size,
            (0..cells).map(|_| rng.random_range(-1000.0..1000.0)).collect(),
        )
        .unwrap();
        let profile = CalibrationProfile::new(
            grid.clone(),
            projector,
            psf,
            rng.random_range(-1e6..1e6),
            rng.random_range(0.0..1e4),
        )
        .unwrap();

        let path = dir.path().join(format!("profile_{case}.json"));
        save_json(&path, &ProfileFile::from_profile(&profile)).unwrap();
        let restored: ProfileFile = load_json(&path).unwrap();
        let restored = restored.into_profile().unwrap();

        assert_eq!(profile.grid, restored.grid, "case {case}");
        assert_eq!(kernel_bits(&profile.psf), kernel_bits(&restored.psf));
        assert_eq!(
            kernel_bits(&profile.projector),
            kernel_bits(&restored.projector)
        );
        assert_eq!(profile.threshold.to_bits(), restored.threshold.to_bits());
        assert_eq!(profile.background.to_bits(), restored.background.to_bits());
        assert_eq!(
            profile.projector_sum().to_bits(),
            restored.projector_sum().to_bits()
        );
    }
    println!("acceptance 10 pgm and profile round trips are lossless: pass");
}
