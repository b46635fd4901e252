//! On-disk formats for the `atomdet` command-line tool: 16-bit binary PGM
//! frames and the JSON schemas for calibration profiles, ground truth, and
//! detection results.

pub mod formats;
pub mod pgm;
