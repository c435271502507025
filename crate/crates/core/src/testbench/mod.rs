//! End-to-end testbench: scenario → stimuli file → golden model and model
//! under test → response files → error/mismatch report, plus the
//! scalability sweep.
//!
//! The stimuli format is engine-agnostic, so either engine can be run on a
//! stored stimuli file at any time without regenerating it.

mod files;
mod report;
mod run;
mod scenario;
mod sweep;

pub use files::{Producer, ResponseSet, StimuliSet, LAYOUT_VERSION};
pub use report::{compare_responses, wrap_angle, ChannelReport, ErrorReport, Quantiles};
pub use run::{generate_stimuli, run_golden, run_mut};
pub use scenario::{NoiseConfig, Scenario, ScenarioConfig};
pub use sweep::{
    fit_polynomial, random_instance, scalability_sweep, PolyFit, RandomInstance, SweepFit,
    SweepOptions, SweepPoint, SweepReport,
};
