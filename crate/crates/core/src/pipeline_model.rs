//! Parametric latency model of the four-stage dataflow accelerator.
//!
//! The accelerator processes one atom per pipeline slot through boundary
//! extraction, image extraction, convolution, and output aggregation, and
//! prefetches the next atom's data during the current atom's convolution.
//! In steady state the throughput is therefore set by the slowest stage,
//! not the sum of the stages; a one-time fill term covers the first atom's
//! serial traversal. The model is analytic: per-stage cycle counts come
//! from the parameters below, and the total for `n` atoms is
//! `fill + n * max(stage cycles)`.

use crate::error::{Error, Result};

/// Tunable hardware description.
///
/// The defaults describe the shipped configuration: a 100 MHz clock, a
/// 512-bit memory bus carrying 16 of the 32-bit pixel words per beat, and a
/// 31x31 kernel summed by a depth-5 adder tree. With them the model
/// sustains 124 cycles per atom, bottlenecked on image extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct HardwareParams {
    /// Accelerator clock in MHz.
    pub clock_mhz: f64,
    /// Memory bus width in bits.
    pub bus_width_bits: u64,
    /// Pixel word width in bits; must divide the bus width.
    pub word_bits: u64,
    /// Fixed cycles per burst request, charged once per kernel row.
    pub burst_overhead_cycles: u64,
    /// Cycles to compute one atom's crop window.
    pub boundary_cycles: u64,
    /// Pipeline initiation interval per kernel row in the convolution
    /// stage.
    pub conv_ii: u64,
    /// Adder-tree depth for one kernel row (`ceil(log2 kernel_size)`).
    pub tree_depth: u64,
    /// Cycles for the final per-atom normalization, including the divide.
    pub agg_cycles: u64,
    /// One-time dataflow fill cost before steady state.
    pub fill_cycles: u64,
}

impl HardwareParams {
    /// Shipped configuration for a given kernel size: defaults everywhere,
    /// with the adder-tree depth derived from the kernel.
    pub fn for_kernel(kernel_size: usize) -> Self {
        let tree_depth = kernel_size.next_power_of_two().trailing_zeros() as u64;
        Self {
            clock_mhz: 100.0,
            bus_width_bits: 512,
            word_bits: 32,
            burst_overhead_cycles: 1,
            boundary_cycles: 4,
            conv_ii: 1,
            tree_depth,
            agg_cycles: 24,
            fill_cycles: 200,
        }
    }

    /// Pixel words delivered per bus beat.
    pub fn words_per_beat(&self) -> u64 {
        self.bus_width_bits / self.word_bits
    }

    fn validate(&self) -> Result<()> {
        if !(self.clock_mhz.is_finite() && self.clock_mhz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "clock must be positive, got {} MHz",
                self.clock_mhz
            )));
        }
        if self.word_bits == 0 || !self.bus_width_bits.is_multiple_of(self.word_bits) {
            return Err(Error::InvalidInput(format!(
                "bus width {} must be a positive multiple of the word width {}",
                self.bus_width_bits, self.word_bits
            )));
        }
        Ok(())
    }
}

impl Default for HardwareParams {
    fn default() -> Self {
        Self::for_kernel(31)
    }
}

/// Cycle cost of each pipeline stage for one atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageCycles {
    pub boundary: u64,
    pub extraction: u64,
    pub convolution: u64,
    pub aggregation: u64,
}

impl StageCycles {
    /// Slowest stage: `(name, cycles)`. Ties resolve in pipeline order.
    pub fn bottleneck(&self) -> (&'static str, u64) {
        [
            ("boundary-extraction", self.boundary),
            ("image-extraction", self.extraction),
            ("image-convolution", self.convolution),
            ("output-aggregation", self.aggregation),
        ]
        .into_iter()
        .max_by_key(|&(_, cycles)| cycles)
        .expect("stage list is non-empty")
    }
}

/// Latency estimate for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub atoms: u64,
    pub per_atom: StageCycles,
    pub bottleneck_stage: &'static str,
    pub cycles_per_atom: u64,
    pub total_cycles: u64,
    pub total_us: f64,
}

/// Per-stage cycles for one atom under the given parameters.
///
/// Image extraction streams the kernel-window rows over the bus; a row of
/// `kernel_size` words starting at an arbitrary word offset spans up to
/// `ceil((kernel_size + words_per_beat - 1) / words_per_beat)` beats, and
/// each row pays the per-burst overhead once. The projector is cached
/// after the first atom, so steady-state extraction counts image rows only.
/// Convolution runs one kernel row per initiation interval, then one
/// adder-tree pass over the row sums and one across rows.
pub fn stage_cycles(params: &HardwareParams, kernel_size: usize) -> Result<StageCycles> {
    params.validate()?;
    if kernel_size == 0 || kernel_size.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "kernel size must be odd and positive, got {kernel_size}"
        )));
    }
    let k = kernel_size as u64;
    let words = params.words_per_beat();
    let beats_per_row = (k + words - 1).div_ceil(words);
    Ok(StageCycles {
        boundary: params.boundary_cycles,
        extraction: k * beats_per_row + params.burst_overhead_cycles * k,
        convolution: k * params.conv_ii + 2 * params.tree_depth,
        aggregation: params.agg_cycles,
    })
}

/// Total latency for a frame with `atoms` sites.
pub fn estimate_latency(
    params: &HardwareParams,
    atoms: u64,
    kernel_size: usize,
) -> Result<LatencyReport> {
    let per_atom = stage_cycles(params, kernel_size)?;
    let (bottleneck_stage, cycles_per_atom) = per_atom.bottleneck();
    let total_cycles = params.fill_cycles + atoms * cycles_per_atom;
    Ok(LatencyReport {
        atoms,
        per_atom,
        bottleneck_stage,
        cycles_per_atom,
        total_cycles,
        total_us: total_cycles as f64 / params.clock_mhz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_stage_budget() {
        let stages = stage_cycles(&HardwareParams::default(), 31).unwrap();
        // 31 rows of 3 beats plus one burst-overhead cycle per row.
        assert_eq!(stages.extraction, 31 * 3 + 31);
        assert_eq!(stages.convolution, 31 + 10);
        assert_eq!(stages.boundary, 4);
        assert_eq!(stages.aggregation, 24);
        assert_eq!(stages.bottleneck(), ("image-extraction", 124));
    }

    #[test]
    fn wide_bus_parameter_arithmetic() {
        // A 31-word beat still spans two beats for a worst-case unaligned
        // row; convolution is rows plus both tree passes.
        let params = HardwareParams {
            bus_width_bits: 31 * 32,
            burst_overhead_cycles: 0,
            ..HardwareParams::default()
        };
        let stages = stage_cycles(&params, 31).unwrap();
        assert_eq!(stages.extraction, 31 * 2);
        assert_eq!(stages.convolution, 31 + 10);
    }

    #[test]
    fn degenerate_kernel() {
        let stages = stage_cycles(&HardwareParams::for_kernel(1), 1).unwrap();
        assert_eq!(stages.convolution, 1);
        assert_eq!(stages.extraction, 1 + 1);
    }

    #[test]
    fn zero_atoms_cost_only_the_fill() {
        let report = estimate_latency(&HardwareParams::default(), 0, 31).unwrap();
        assert_eq!(report.total_cycles, HardwareParams::default().fill_cycles);
        assert_eq!(report.total_us, 2.0);
    }

    #[test]
    fn total_microseconds_follow_the_clock() {
        let mut params = HardwareParams::default();
        let base = estimate_latency(&params, 100, 31).unwrap();
        assert_eq!(base.total_us, base.total_cycles as f64 / 100.0);
        params.clock_mhz = 200.0;
        let fast = estimate_latency(&params, 100, 31).unwrap();
        assert_eq!(fast.total_cycles, base.total_cycles);
        assert_eq!(fast.total_us, base.total_us / 2.0);
    }

    #[test]
    fn latency_is_affine_in_atoms() {
        let params = HardwareParams::default();
        let a = estimate_latency(&params, 100, 31).unwrap();
        let b = estimate_latency(&params, 1600, 31).unwrap();
        assert_eq!(
            b.total_cycles - a.total_cycles,
            1500 * a.cycles_per_atom
        );
    }

    #[test]
    fn stage_parameters_are_monotone() {
        let base = estimate_latency(&HardwareParams::default(), 64, 31).unwrap();
        let bumps: Vec<HardwareParams> = vec![
            HardwareParams {
                burst_overhead_cycles: 2,
                ..HardwareParams::default()
            },
            HardwareParams {
                boundary_cycles: 200,
                ..HardwareParams::default()
            },
            HardwareParams {
                conv_ii: 9,
                ..HardwareParams::default()
            },
            HardwareParams {
                agg_cycles: 500,
                ..HardwareParams::default()
            },
            HardwareParams {
                fill_cycles: 5000,
                ..HardwareParams::default()
            },
            HardwareParams {
                tree_depth: 12,
                ..HardwareParams::default()
            },
        ];
        for params in bumps {
            let bumped = estimate_latency(&params, 64, 31).unwrap();
            assert!(
                bumped.total_cycles >= base.total_cycles,
                "{params:?} decreased the total"
            );
        }
    }

    #[test]
    fn shipped_defaults_hit_the_budget_window() {
        let report = estimate_latency(&HardwareParams::default(), 100, 31).unwrap();
        assert!((100..=130).contains(&report.cycles_per_atom));
    }

    #[test]
    fn rejects_bad_parameters() {
        let params = HardwareParams {
            word_bits: 33,
            ..HardwareParams::default()
        };
        assert!(stage_cycles(&params, 31).is_err());
        assert!(stage_cycles(&HardwareParams::default(), 30).is_err());
    }
}
