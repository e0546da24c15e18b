//! Library side of the `rune` command: sweeps over one config axis and
//! learning-curve reports built from run directories.

pub mod report;
pub mod stats;
pub mod sweep;
