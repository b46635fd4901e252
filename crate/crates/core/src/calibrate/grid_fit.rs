//! Lattice detection from calibration frames.
//!
//! The fit proceeds in stages: average all frames, smooth with a 3x3 box,
//! pick local maxima above a robust threshold (median + 5 MAD), refine each
//! peak to a sub-pixel intensity centroid, estimate the lattice angle from
//! folded nearest-neighbor displacement angles and the spacing from their
//! lengths, then assign integer lattice indices and solve a linear least
//! squares for origin, spacing, and angle jointly. Everything is
//! deterministic for fixed inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{CalibrationStage, Error, Result};
use crate::GridGeometry;
use crate::Image;

fn fail(message: impl Into<String>) -> Error {
    Error::calibration(CalibrationStage::GridDetection, message)
}

fn mean_image(images: &[Image]) -> (Vec<f64>, usize, usize) {
    let (w, h) = (images[0].width(), images[0].height());
    let mut mean = vec![0.0f64; w * h];
    for img in images {
        for (m, &v) in mean.iter_mut().zip(img.data()) {
            *m += v;
        }
    }
    let n = images.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    (mean, w, h)
}

fn box3_smooth(data: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut count = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
                        sum += data[ny as usize * w + nx as usize];
                        count += 1.0;
                    }
                }
            }
            out[y * w + x] = sum / count;
        }
    }
    out
}

fn median_of(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Strict local maxima (8-neighborhood) above `threshold`, as
/// `(x, y, value)`.
fn find_peaks(data: &[f64], w: usize, h: usize, threshold: f64) -> Vec<(f64, f64, f64)> {
    let mut peaks = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let v = data[y * w + x];
            if v <= threshold {
                continue;
            }
            let is_peak = (-1i64..=1)
                .flat_map(|dy| (-1i64..=1).map(move |dx| (dx, dy)))
                .filter(|&(dx, dy)| dx != 0 || dy != 0)
                .all(|(dx, dy)| {
                    v > data[(y as i64 + dy) as usize * w + (x as i64 + dx) as usize]
                });
            if is_peak {
                peaks.push((x as f64, y as f64, v));
            }
        }
    }
    peaks
}

/// Intensity centroid of `data - floor_level` (clamped at zero) in a
/// square window around `(px, py)`.
fn refine_centroid(
    data: &[f64],
    w: usize,
    h: usize,
    floor_level: f64,
    px: f64,
    py: f64,
    radius: i64,
) -> (f64, f64) {
    let (cx, cy) = (px.round() as i64, py.round() as i64);
    let mut mass = 0.0;
    let mut mx = 0.0;
    let mut my = 0.0;
    for y in (cy - radius).max(0)..=(cy + radius).min(h as i64 - 1) {
        for x in (cx - radius).max(0)..=(cx + radius).min(w as i64 - 1) {
            let v = (data[y as usize * w + x as usize] - floor_level).max(0.0);
            mass += v;
            mx += v * x as f64;
            my += v * y as f64;
        }
    }
    if mass > 0.0 {
        (mx / mass, my / mass)
    } else {
        (px, py)
    }
}

/// Fold an angle into `[-pi/4, pi/4)` modulo the lattice's 90-degree
/// symmetry.
fn fold_quarter(theta: f64) -> f64 {
    use std::f64::consts::FRAC_PI_2;
    theta - FRAC_PI_2 * (theta / FRAC_PI_2).round()
}

struct LatticeFit {
    origin_x: f64,
    origin_y: f64,
    axis_x: f64,
    axis_y: f64,
}

/// Least squares for `p = origin + col*(axis_x, axis_y) +
/// row*(-axis_y, axis_x)`, linear in all four unknowns.
fn solve_lattice(points: &[(f64, f64)], indices: &[(i64, i64)]) -> Result<LatticeFit> {
    let n = points.len();
    let mut design = DMatrix::zeros(2 * n, 4);
    let mut rhs = DVector::zeros(2 * n);
    for (i, (&(x, y), &(r, c))) in points.iter().zip(indices).enumerate() {
        let (r, c) = (r as f64, c as f64);
        design[(2 * i, 0)] = 1.0;
        design[(2 * i, 2)] = c;
        design[(2 * i, 3)] = -r;
        rhs[2 * i] = x;
        design[(2 * i + 1, 1)] = 1.0;
        design[(2 * i + 1, 2)] = r;
        design[(2 * i + 1, 3)] = c;
        rhs[2 * i + 1] = y;
    }
    let solution = design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| fail(format!("lattice least-squares failed: {e}")))?;
    Ok(LatticeFit {
        origin_x: solution[0],
        origin_y: solution[1],
        axis_x: solution[2],
        axis_y: solution[3],
    })
}

/// Detects the lattice geometry from a set of same-sized calibration
/// frames.
///
/// Succeeds only when the detected peaks cover at least one site in every
/// lattice row and column; otherwise the error carries the peak count as a
/// diagnostic.
pub fn detect_grid(
    images: &[Image],
    expected_rows: usize,
    expected_cols: usize,
) -> Result<GridGeometry> {
    super::check_uniform_dimensions(images)?;
    if expected_rows == 0 || expected_cols == 0 {
        return Err(Error::InvalidInput(
            "expected grid dimensions must be positive".into(),
        ));
    }
    let (mean, w, h) = mean_image(images);
    let smoothed = box3_smooth(&mean, w, h);

    let mut scratch = smoothed.clone();
    let level = median_of(&mut scratch);
    let mut deviations: Vec<f64> = smoothed.iter().map(|&v| (v - level).abs()).collect();
    let mad = median_of(&mut deviations);
    let threshold = level + 5.0 * mad;

    let peaks = find_peaks(&smoothed, w, h, threshold);
    let min_needed = expected_rows.max(expected_cols).max(2);
    if peaks.len() < min_needed {
        return Err(fail(format!(
            "found {} candidate peaks, need at least {min_needed} to fit a \
             {expected_rows}x{expected_cols} lattice",
            peaks.len()
        )));
    }

    // Nearest-neighbor scale, for the centroid window and the neighbor
    // cutoff below.
    let mut nn = Vec::with_capacity(peaks.len());
    for (i, &(xi, yi, _)) in peaks.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, &(xj, yj, _)) in peaks.iter().enumerate() {
            if i != j {
                best = best.min((xi - xj).hypot(yi - yj));
            }
        }
        nn.push(best);
    }
    let nn_scale = median_of(&mut nn);
    if !(nn_scale.is_finite() && nn_scale > 1.0) {
        return Err(fail(format!(
            "degenerate peak spacing {nn_scale}; peaks may be noise"
        )));
    }

    let radius = ((nn_scale / 4.0).round() as i64).max(2);
    let centroids: Vec<(f64, f64, f64)> = peaks
        .iter()
        .map(|&(x, y, v)| {
            let (cx, cy) = refine_centroid(&mean, w, h, level, x, y, radius);
            (cx, cy, v)
        })
        .collect();

    // Axis-neighbor displacements: pairs closer than 1.25x the
    // nearest-neighbor scale, which keeps lattice neighbors and rejects
    // diagonals at sqrt(2)x.
    let cutoff = 1.25 * nn_scale;
    let mut cos4 = 0.0;
    let mut sin4 = 0.0;
    let mut lengths = Vec::new();
    for (i, &(xi, yi, _)) in centroids.iter().enumerate() {
        for &(xj, yj, _) in centroids.iter().skip(i + 1) {
            let (dx, dy) = (xj - xi, yj - yi);
            let dist = dx.hypot(dy);
            if dist <= cutoff {
                let folded = fold_quarter(dy.atan2(dx));
                cos4 += (4.0 * folded).cos();
                sin4 += (4.0 * folded).sin();
                lengths.push(dist);
            }
        }
    }
    if lengths.is_empty() {
        return Err(fail(format!(
            "no neighboring peak pairs within {cutoff:.1} px among {} peaks",
            centroids.len()
        )));
    }
    let angle = sin4.atan2(cos4) / 4.0;
    let spacing = median_of(&mut lengths);

    // Initial integer lattice indices relative to the lattice-top-left
    // centroid.
    let (sin_a, cos_a) = angle.sin_cos();
    let lattice_coords = |x: f64, y: f64, ox: f64, oy: f64, s: f64| {
        let (dx, dy) = (x - ox, y - oy);
        ((dx * cos_a + dy * sin_a) / s, (-dx * sin_a + dy * cos_a) / s)
    };
    let &(ref_x, ref_y, _) = centroids
        .iter()
        .min_by(|a, b| {
            let ka = a.0 * (cos_a - sin_a) + a.1 * (sin_a + cos_a);
            let kb = b.0 * (cos_a - sin_a) + b.1 * (sin_a + cos_a);
            ka.total_cmp(&kb)
        })
        .expect("centroids are non-empty");

    let assign = |ox: f64, oy: f64, s: f64| {
        // One site may yield several peaks under noise; keep the brightest.
        // BTreeMap keeps the downstream least squares order-stable.
        let mut by_index: std::collections::BTreeMap<(i64, i64), (f64, f64, f64)> =
            std::collections::BTreeMap::new();
        for &(x, y, v) in &centroids {
            let (qc, qr) = lattice_coords(x, y, ox, oy, s);
            let key = (qr.round() as i64, qc.round() as i64);
            let entry = by_index.entry(key).or_insert((x, y, v));
            if v > entry.2 {
                *entry = (x, y, v);
            }
        }
        let min_r = by_index.keys().map(|&(r, _)| r).min().unwrap();
        let min_c = by_index.keys().map(|&(_, c)| c).min().unwrap();
        let mut points = Vec::with_capacity(by_index.len());
        let mut indices = Vec::with_capacity(by_index.len());
        for (&(r, c), &(x, y, _)) in &by_index {
            points.push((x, y));
            indices.push((r - min_r, c - min_c));
        }
        (points, indices)
    };

    let (points, indices) = assign(ref_x, ref_y, spacing);
    let fit = solve_lattice(&points, &indices)?;

    // Re-assign against the fitted lattice and solve once more.
    let spacing = fit.axis_x.hypot(fit.axis_y);
    let (points, indices) = assign(fit.origin_x, fit.origin_y, spacing);
    let fit = solve_lattice(&points, &indices)?;
    let spacing = fit.axis_x.hypot(fit.axis_y);
    let angle = fit.axis_y.atan2(fit.axis_x);

    let distinct = |take_row: bool| {
        let mut seen: Vec<i64> = indices
            .iter()
            .map(|&(r, c)| if take_row { r } else { c })
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    };
    let rows_seen = distinct(true);
    let cols_seen = distinct(false);
    if rows_seen.len() < expected_rows || cols_seen.len() < expected_cols {
        return Err(fail(format!(
            "detected {} row and {} column lattice lines from {} peaks, expected \
             {expected_rows}x{expected_cols}",
            rows_seen.len(),
            cols_seen.len(),
            peaks.len()
        )));
    }
    let max_row = *rows_seen.last().unwrap();
    let max_col = *cols_seen.last().unwrap();
    if max_row >= expected_rows as i64 || max_col >= expected_cols as i64 {
        return Err(fail(format!(
            "peaks span lattice indices up to ({max_row}, {max_col}), beyond the expected \
             {expected_rows}x{expected_cols} grid ({} peaks)",
            peaks.len()
        )));
    }

    GridGeometry::new(
        fit.origin_x,
        fit.origin_y,
        spacing,
        angle,
        expected_rows,
        expected_cols,
    )
    .map_err(|e| fail(format!("fitted lattice is not a valid grid: {e}")))
}
