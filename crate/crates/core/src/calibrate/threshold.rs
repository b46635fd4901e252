//! Detection-threshold calibration.
//!
//! Emissions from a calibration set are bimodal: a dark mode near zero and
//! a bright mode near the per-atom brightness. The threshold is the
//! equal-posterior point of a two-component Gaussian mixture fitted by
//! expectation-maximization, initialized from Otsu's split; if EM does not
//! converge the Otsu threshold itself is used.

use crate::error::{CalibrationStage, Error, Result};

const MAX_EM_ITERATIONS: usize = 200;

fn fail(message: impl Into<String>) -> Error {
    Error::calibration(CalibrationStage::Threshold, message)
}

/// Otsu's split for continuous samples: the inter-class-variance-maximizing
/// partition of the sorted data, thresholded at the midpoint between the
/// bordering samples.
fn otsu_split(sorted: &[f64]) -> Result<(f64, usize)> {
    let n = sorted.len();
    let total: f64 = sorted.iter().sum();
    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut lower_sum = 0.0;
    for k in 1..n {
        lower_sum += sorted[k - 1];
        if sorted[k - 1] == sorted[k] {
            continue; // no separating value exists inside a tie run
        }
        let (w0, w1) = (k as f64, (n - k) as f64);
        let (m0, m1) = (lower_sum / w0, (total - lower_sum) / w1);
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, k);
        }
    }
    if best.1 == 0 {
        return Err(fail("samples are constant; no threshold separates them"));
    }
    let split = best.1;
    Ok(((sorted[split - 1] + sorted[split]) / 2.0, split))
}

/// Otsu threshold over raw samples.
pub fn otsu_threshold(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(fail(format!(
            "need at least 2 samples to calibrate a threshold, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    otsu_split(&sorted).map(|(t, _)| t)
}

struct Component {
    weight: f64,
    mean: f64,
    variance: f64,
}

impl Component {
    fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        self.weight.ln()
            - 0.5 * (2.0 * std::f64::consts::PI * self.variance).ln()
            - d * d / (2.0 * self.variance)
    }
}

fn moments(values: &[f64], floor: f64) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, variance.max(floor))
}

/// Equal-posterior point of two Gaussian components, restricted to the open
/// interval between their means. Solves the log-density equality, which is
/// quadratic in `x`.
fn equal_posterior_point(lo: &Component, hi: &Component) -> Option<f64> {
    let a = 1.0 / (2.0 * hi.variance) - 1.0 / (2.0 * lo.variance);
    let b = lo.mean / lo.variance - hi.mean / hi.variance;
    let c = hi.mean * hi.mean / (2.0 * hi.variance) - lo.mean * lo.mean / (2.0 * lo.variance)
        + (lo.weight / hi.weight).ln()
        + 0.5 * (hi.variance / lo.variance).ln();

    let inside = |x: f64| x > lo.mean && x < hi.mean;
    if a.abs() < 1e-300 {
        let x = -c / b;
        return inside(x).then_some(x);
    }
    let discriminant = b * b - 4.0 * a * c;
    if discriminant < 0.0 {
        return None;
    }
    let root = discriminant.sqrt();
    [(-b + root) / (2.0 * a), (-b - root) / (2.0 * a)]
        .into_iter()
        .find(|&x| inside(x))
}

/// Calibrates the emission threshold from pooled calibration emissions.
///
/// Fails when the sample is effectively unimodal (fitted means closer than
/// 1% of the sample span), which indicates the calibration set does not
/// cover both occupied and empty sites.
pub fn calibrate_threshold(emissions: &[f64]) -> Result<f64> {
    if emissions.len() < 2 {
        return Err(fail(format!(
            "need at least 2 emission samples, got {}",
            emissions.len()
        )));
    }
    if let Some(bad) = emissions.iter().find(|v| !v.is_finite()) {
        return Err(fail(format!("non-finite emission sample {bad}")));
    }
    let mut sorted = emissions.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let span = sorted[sorted.len() - 1] - sorted[0];
    if span <= 0.0 {
        return Err(fail("all emission samples are identical"));
    }

    let (otsu, split) = otsu_split(&sorted)?;
    let variance_floor = (1e-6 * span).powi(2);
    let n = sorted.len() as f64;

    let (mean_lo, var_lo) = moments(&sorted[..split], variance_floor);
    let (mean_hi, var_hi) = moments(&sorted[split..], variance_floor);
    let mut lo = Component {
        weight: split as f64 / n,
        mean: mean_lo,
        variance: var_lo,
    };
    let mut hi = Component {
        weight: 1.0 - split as f64 / n,
        mean: mean_hi,
        variance: var_hi,
    };

    let mut converged = false;
    let mut last_log_likelihood = f64::NEG_INFINITY;
    for _ in 0..MAX_EM_ITERATIONS {
        // E-step: responsibility of the low component for each sample.
        let mut resp_sum = 0.0;
        let mut mean_lo_acc = 0.0;
        let mut mean_hi_acc = 0.0;
        let mut log_likelihood = 0.0;
        let responsibilities: Vec<f64> = sorted
            .iter()
            .map(|&x| {
                let (ll, lh) = (lo.log_density(x), hi.log_density(x));
                let max = ll.max(lh);
                log_likelihood += max + ((ll - max).exp() + (lh - max).exp()).ln();
                let r = 1.0 / (1.0 + (lh - ll).exp());
                resp_sum += r;
                mean_lo_acc += r * x;
                mean_hi_acc += (1.0 - r) * x;
                r
            })
            .collect();

        // M-step.
        let weight_lo = (resp_sum / n).clamp(1e-12, 1.0 - 1e-12);
        let mean_lo = mean_lo_acc / resp_sum.max(1e-300);
        let mean_hi = mean_hi_acc / (n - resp_sum).max(1e-300);
        let mut var_lo_acc = 0.0;
        let mut var_hi_acc = 0.0;
        for (&x, &r) in sorted.iter().zip(&responsibilities) {
            var_lo_acc += r * (x - mean_lo).powi(2);
            var_hi_acc += (1.0 - r) * (x - mean_hi).powi(2);
        }
        lo = Component {
            weight: weight_lo,
            mean: mean_lo,
            variance: (var_lo_acc / resp_sum.max(1e-300)).max(variance_floor),
        };
        hi = Component {
            weight: 1.0 - weight_lo,
            mean: mean_hi,
            variance: (var_hi_acc / (n - resp_sum).max(1e-300)).max(variance_floor),
        };

        if (log_likelihood - last_log_likelihood).abs()
            <= 1e-12 * (1.0 + log_likelihood.abs())
        {
            converged = true;
            break;
        }
        last_log_likelihood = log_likelihood;
    }

    if (lo.mean - hi.mean).abs() < 0.01 * span {
        return Err(fail(format!(
            "mixture means {:.3} and {:.3} are closer than 1% of the sample span; \
             provide calibration images covering both occupied and empty sites",
            lo.mean, hi.mean
        )));
    }
    if !converged {
        return Ok(otsu);
    }
    let (lo, hi) = if lo.mean <= hi.mean { (lo, hi) } else { (hi, lo) };
    Ok(equal_posterior_point(&lo, &hi).unwrap_or(otsu))
}
