//! Experiment driver for the instruction-cache cluster simulator: runs,
//! sweeps over the synthetic loop size, and summary comparisons.

pub mod compare;
pub mod experiment;
pub mod report;

pub use compare::{compare, render, CompareRow};
pub use experiment::{percent, run_experiment, sweep, Experiment, ExperimentConfig, FrequencyMode, WorkloadSource};
pub use report::{Report, ReportMeta, ReportRow, SweepReport, SweepRow};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "ICACHE_SIM_OUT";

/// The step values of the standard synthetic sweep.
pub const STANDARD_STEPS: [u32; 6] = [32, 64, 128, 256, 512, 1024];
