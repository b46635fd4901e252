//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use rayon::ThreadPoolBuilder;

use atomdet::calibrate;
use atomdet::pipeline_model::{estimate_latency, HardwareParams};
use atomdet::reconstruct::{apply_threshold, reconstruct_all, reconstruct_all_serial};
use atomdet::simulate::{make_truth, sample_image, ForwardModel, NoiseModel};
use atomdet::{CalibrationProfile, GridGeometry, Image, Kernel};

use atomdet_cli::formats::{load_json, save_json, BenchRecord, ProfileFile, ResultFile, TruthFile};
use atomdet_cli::pgm;

#[derive(Debug)]
pub enum CliError {
    /// Bad flag combination or missing input; exit code 1.
    Usage(String),
    /// Domain failure (calibration, geometry, i/o); exit code 2.
    Domain {
        stage: Option<String>,
        message: String,
    },
}

impl From<atomdet::Error> for CliError {
    fn from(e: atomdet::Error) -> Self {
        let stage = match &e {
            atomdet::Error::Calibration { stage, .. } => Some(stage.to_string()),
            _ => None,
        };
        CliError::Domain {
            stage,
            message: e.to_string(),
        }
    }
}

fn io_error(action: &str, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Domain {
        stage: None,
        message: format!("cannot {action} {}: {e}", path.display()),
    }
}

type CliResult = Result<(), CliError>;

// ---------------------------------------------------------------------------
// simulate

#[derive(Clone, Copy, PartialEq, ValueEnum)]
pub enum NoiseArg {
    None,
    Poisson,
    PoissonGaussian,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    /// Lattice spacing in pixels.
    #[arg(long, default_value_t = 25.6)]
    spacing: f64,
    /// Lattice angle in radians.
    #[arg(long, default_value_t = 0.0)]
    angle: f64,
    /// Site (0,0) x position; defaults to a centered grid.
    #[arg(long, requires = "origin_y")]
    origin_x: Option<f64>,
    /// Site (0,0) y position; defaults to a centered grid.
    #[arg(long, requires = "origin_x")]
    origin_y: Option<f64>,
    /// Occupancy probability per site.
    #[arg(long, default_value_t = 0.5)]
    fill: f64,
    /// Expected photoelectrons per occupied site.
    #[arg(long, default_value_t = 2000.0)]
    gamma: f64,
    /// Background photoelectrons per pixel.
    #[arg(long, default_value_t = 10.0)]
    background: f64,
    #[arg(long, value_enum, default_value_t = NoiseArg::Poisson)]
    noise: NoiseArg,
    /// Gaussian read-noise standard deviation (poisson-gaussian only).
    #[arg(long, default_value_t = 0.0)]
    read_sigma: f64,
    /// Standard deviation of the Gaussian PSF in pixels.
    #[arg(long, default_value_t = 2.0)]
    psf_sigma: f64,
    #[arg(long, default_value_t = 31)]
    kernel_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of frames; multiple frames get numbered file names.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Output PGM path.
    #[arg(short, long)]
    output: PathBuf,
    /// Ground-truth JSON path.
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-frame seed streams derived from the user-facing seed: stream 0 draws
/// the occupancy, stream 1 the noise.
fn derive_seed(base: u64, frame: u64, stream: u64) -> u64 {
    splitmix64(base.wrapping_add(splitmix64(2 * frame + stream)))
}

fn indexed_path(path: &Path, index: usize, count: usize) -> PathBuf {
    if count == 1 {
        return path.to_path_buf();
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{index:03}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{index:03}"),
    };
    path.with_file_name(name)
}

fn scene_grid(args: &SimulateArgs) -> Result<GridGeometry, CliError> {
    let grid = match (args.origin_x, args.origin_y) {
        (Some(x), Some(y)) => {
            GridGeometry::new(x, y, args.spacing, args.angle, args.rows, args.cols)?
        }
        _ => GridGeometry::centered(
            args.rows,
            args.cols,
            args.spacing,
            args.angle,
            args.width,
            args.height,
        )?,
    };
    grid.validate_inside(args.width, args.height)?;
    Ok(grid)
}

pub fn simulate(args: SimulateArgs) -> CliResult {
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let grid = scene_grid(&args)?;
    let psf = Kernel::gaussian(args.kernel_size, args.psf_sigma)?;
    let noise = match args.noise {
        NoiseArg::None => NoiseModel::None,
        NoiseArg::Poisson => NoiseModel::Poisson,
        NoiseArg::PoissonGaussian => NoiseModel::PoissonGaussian {
            read_sigma: args.read_sigma,
        },
    };

    for frame in 0..args.count {
        let truth_seed = derive_seed(args.seed, frame as u64, 0);
        let noise_seed = derive_seed(args.seed, frame as u64, 1);
        let occupancy = make_truth(args.rows, args.cols, args.fill, truth_seed)?;
        let model = ForwardModel::new(psf.clone(), args.background, args.gamma, noise, noise_seed)?;
        let image = sample_image(&model, &grid, &occupancy, args.width, args.height)?;

        let image_path = indexed_path(&args.output, frame, args.count);
        pgm::write_file(&image_path, &image).map_err(|e| io_error("write", &image_path, e))?;
        if let Some(truth) = &args.truth {
            let truth_path = indexed_path(truth, frame, args.count);
            let record = TruthFile::new(&occupancy, args.gamma, args.background, args.seed);
            save_json(&truth_path, &record).map_err(|e| io_error("write", &truth_path, e))?;
        }
        eprintln!("wrote {}", image_path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate

#[derive(Args)]
pub struct CalibrateArgs {
    /// Input PGM frames (all with the same dimensions).
    #[arg(short, long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value_t = 31)]
    kernel_size: usize,
    /// Output profile JSON path.
    #[arg(short, long)]
    output: PathBuf,
}

pub fn calibrate(args: CalibrateArgs) -> CliResult {
    let images: Vec<Image> = args
        .input
        .iter()
        .map(|path| pgm::read_file(path).map_err(|e| io_error("read", path, e)))
        .collect::<Result<_, _>>()?;

    let profile = calibrate::calibrate(&images, args.rows, args.cols, args.kernel_size)?;
    save_json(&args.output, &ProfileFile::from_profile(&profile))
        .map_err(|e| io_error("write", &args.output, e))?;

    println!(
        "grid: origin ({:.3}, {:.3}) px, spacing {:.4} px, angle {:.5} rad, {}x{} sites",
        profile.grid.origin_x,
        profile.grid.origin_y,
        profile.grid.spacing,
        profile.grid.angle,
        profile.grid.rows,
        profile.grid.cols
    );
    println!(
        "background: {:.3} pe/px, threshold: {:.3}",
        profile.background, profile.threshold
    );
    println!("profile written to {}", args.output.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// detect

#[derive(Args)]
pub struct DetectArgs {
    /// Input PGM frame.
    #[arg(short, long)]
    input: PathBuf,
    /// Calibration profile JSON.
    #[arg(short, long)]
    profile: PathBuf,
    /// Output result JSON path.
    #[arg(short, long)]
    output: PathBuf,
    /// Worker threads for the reconstruction (default: all cores).
    #[arg(long, env = "ATOMDET_THREADS")]
    threads: Option<usize>,
    /// Also render the emission matrix as a PGM (darker = brighter).
    #[arg(long)]
    emissions_pgm: Option<PathBuf>,
}

fn load_profile(path: &Path) -> Result<CalibrationProfile, CliError> {
    let dto: ProfileFile = load_json(path).map_err(|e| io_error("read", path, e))?;
    Ok(dto.into_profile()?)
}

fn build_pool(threads: Option<usize>) -> Result<Option<rayon::ThreadPool>, CliError> {
    match threads {
        None => Ok(None),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(Some)
            .map_err(|e| CliError::Domain {
                stage: None,
                message: format!("cannot build thread pool: {e}"),
            }),
    }
}

pub fn detect(args: DetectArgs) -> CliResult {
    let image = pgm::read_file(&args.input).map_err(|e| io_error("read", &args.input, e))?;
    let profile = load_profile(&args.profile)?;
    let pool = build_pool(args.threads)?;

    let start = Instant::now();
    let emissions = match &pool {
        Some(pool) => pool.install(|| reconstruct_all(&image, &profile)),
        None => reconstruct_all(&image, &profile),
    }?;
    let elapsed_us = start.elapsed().as_secs_f64() * 1e6;
    let occupancy = apply_threshold(&emissions, profile.threshold);

    let threads = pool
        .as_ref()
        .map_or_else(rayon::current_num_threads, |p| p.current_num_threads());
    let record = ResultFile::new(&emissions, &occupancy, elapsed_us, threads);
    save_json(&args.output, &record).map_err(|e| io_error("write", &args.output, e))?;

    if let Some(path) = &args.emissions_pgm {
        let values = emissions.values();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pixels: Vec<f64> = values
            .iter()
            .map(|&e| {
                if hi > lo {
                    (hi - e) / (hi - lo) * 65535.0
                } else {
                    65535.0
                }
            })
            .collect();
        let rendering = Image::new(emissions.cols(), emissions.rows(), pixels)?;
        pgm::write_file(path, &rendering).map_err(|e| io_error("write", path, e))?;
    }

    eprintln!(
        "{} of {} sites occupied, {elapsed_us:.1} us on {threads} threads",
        occupancy.occupied_count(),
        occupancy.values().len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bench

#[derive(Args)]
pub struct BenchArgs {
    /// Square array sizes to benchmark.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40")]
    sizes: Vec<usize>,
    /// Timed repetitions per size and variant.
    #[arg(long, default_value_t = 50)]
    repeats: usize,
    /// Worker threads for the parallel variant (default: all cores).
    #[arg(long, env = "ATOMDET_THREADS")]
    threads: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn mean_std_us(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let variance = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, variance.sqrt())
}

fn time_us(mut run: impl FnMut()) -> f64 {
    let start = Instant::now();
    run();
    start.elapsed().as_secs_f64() * 1e6
}

pub fn bench(args: BenchArgs) -> CliResult {
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    if args.sizes.is_empty() {
        return Err(CliError::Usage("--sizes must name at least one size".into()));
    }
    if args.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let pool = ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Domain {
            stage: None,
            message: format!("cannot build thread pool: {e}"),
        })?;

    println!("{}", BenchRecord::CSV_HEADER);
    for (scene_index, &size) in args.sizes.iter().enumerate() {
        if size == 0 {
            return Err(CliError::Usage("array sizes must be positive".into()));
        }
        let dim = (size as f64 * 25.6).round() as usize;
        let grid = GridGeometry::centered(size, size, 25.6, 0.0, dim, dim)?;
        let psf = Kernel::gaussian(31, 2.0)?;

        let frames: Vec<Image> = (0..10)
            .map(|k| {
                let base = derive_seed(args.seed, (scene_index * 16 + k) as u64, 0);
                let occupancy = make_truth(size, size, 0.6, base)?;
                let model = ForwardModel::new(
                    psf.clone(),
                    10.0,
                    2000.0,
                    NoiseModel::Poisson,
                    derive_seed(args.seed, (scene_index * 16 + k) as u64, 1),
                )?;
                sample_image(&model, &grid, &occupancy, dim, dim)
            })
            .collect::<Result<_, _>>()?;
        let profile = calibrate::calibrate(&frames, size, size, 31)?;

        let test_truth = make_truth(size, size, 0.5, derive_seed(args.seed, 0xF00D, 0))?;
        let model = ForwardModel::new(
            psf,
            10.0,
            2000.0,
            NoiseModel::Poisson,
            derive_seed(args.seed, 0xF00D, 1),
        )?;
        let frame = sample_image(&model, &grid, &test_truth, dim, dim)?;

        // Warm both paths once before timing.
        reconstruct_all_serial(&frame, &profile)?;
        pool.install(|| reconstruct_all(&frame, &profile))?;

        let serial: Vec<f64> = (0..args.repeats)
            .map(|_| time_us(|| drop(reconstruct_all_serial(&frame, &profile))))
            .collect();
        let parallel: Vec<f64> = (0..args.repeats)
            .map(|_| time_us(|| drop(pool.install(|| reconstruct_all(&frame, &profile)))))
            .collect();

        for (variant, threads, samples) in [
            ("serial", 1usize, &serial),
            ("parallel", pool.current_num_threads(), &parallel),
        ] {
            let (mean_us, std_us) = mean_std_us(samples);
            let record = BenchRecord {
                array_rows: size,
                array_cols: size,
                image_w: dim,
                image_h: dim,
                variant,
                threads,
                repeats: args.repeats,
                mean_us,
                std_us,
            };
            println!("{}", record.to_csv_row());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// pipeline

#[derive(Args)]
pub struct PipelineArgs {
    /// Number of atom sites; alternatively give --rows and --cols.
    #[arg(long, conflicts_with_all = ["rows", "cols"])]
    atoms: Option<u64>,
    #[arg(long, requires = "cols")]
    rows: Option<u64>,
    #[arg(long, requires = "rows")]
    cols: Option<u64>,
    #[arg(long, default_value_t = 31)]
    kernel_size: usize,
    #[arg(long)]
    clock_mhz: Option<f64>,
    #[arg(long)]
    bus_width_bits: Option<u64>,
    #[arg(long)]
    word_bits: Option<u64>,
    #[arg(long)]
    burst_overhead_cycles: Option<u64>,
    #[arg(long)]
    boundary_cycles: Option<u64>,
    #[arg(long)]
    conv_ii: Option<u64>,
    #[arg(long)]
    tree_depth: Option<u64>,
    #[arg(long)]
    agg_cycles: Option<u64>,
    #[arg(long)]
    fill_cycles: Option<u64>,
}

pub fn pipeline(args: PipelineArgs) -> CliResult {
    let atoms = match (args.atoms, args.rows, args.cols) {
        (Some(atoms), _, _) => atoms,
        (None, Some(rows), Some(cols)) => rows * cols,
        _ => {
            return Err(CliError::Usage(
                "give --atoms, or --rows together with --cols".into(),
            ))
        }
    };

    let mut params = HardwareParams::for_kernel(args.kernel_size);
    if let Some(v) = args.clock_mhz {
        params.clock_mhz = v;
    }
    if let Some(v) = args.bus_width_bits {
        params.bus_width_bits = v;
    }
    if let Some(v) = args.word_bits {
        params.word_bits = v;
    }
    if let Some(v) = args.burst_overhead_cycles {
        params.burst_overhead_cycles = v;
    }
    if let Some(v) = args.boundary_cycles {
        params.boundary_cycles = v;
    }
    if let Some(v) = args.conv_ii {
        params.conv_ii = v;
    }
    if let Some(v) = args.tree_depth {
        params.tree_depth = v;
    }
    if let Some(v) = args.agg_cycles {
        params.agg_cycles = v;
    }
    if let Some(v) = args.fill_cycles {
        params.fill_cycles = v;
    }

    let report = estimate_latency(&params, atoms, args.kernel_size)?;
    let body = serde_json::json!({
        "atoms": report.atoms,
        "kernel_size": args.kernel_size,
        "clock_mhz": params.clock_mhz,
        "per_atom_stage_cycles": {
            "boundary-extraction": report.per_atom.boundary,
            "image-extraction": report.per_atom.extraction,
            "image-convolution": report.per_atom.convolution,
            "output-aggregation": report.per_atom.aggregation,
        },
        "bottleneck_stage": report.bottleneck_stage,
        "cycles_per_atom": report.cycles_per_atom,
        "total_cycles": report.total_cycles,
        "total_us": report.total_us,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&body).expect("report serializes")
    );
    Ok(())
}
