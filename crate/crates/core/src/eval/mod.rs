//! Evaluation metrics, synthetic data, file formats and reports used by the
//! command-line driver.

pub mod io;
pub mod manifest;
pub mod metrics;
pub mod report;
pub mod synth;

pub use metrics::{backtransform_error, path_sum_bound, see, SeeSeries, Summary};
pub use synth::{generate_motion, SynthConfig, SynthMotion};
