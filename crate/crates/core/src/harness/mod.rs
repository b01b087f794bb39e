//! Experiment configuration, the canonical pipelines, run directories, plot data and
//! the acceptance checks.

pub mod config;
pub mod experiments;
pub mod persist;
pub mod plot;
pub mod verify;

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{run_experiment, SMOKE_CONFIG};
pub use persist::RunDir;
pub use plot::{emit_plot_data, PlotSeries};
pub use verify::{run_all, CriterionOutcome, Scale};
