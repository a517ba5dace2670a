//! Batch front end: scenario files in, reports and CSV logs out.

pub mod config;
pub mod error;
pub mod report;
mod run;

pub use config::{load_config, parse_config, Mode, Overrides, RawConfig, ScenarioConfig};
pub use error::RunError;
pub use report::RunReport;
pub use run::{run, CONVERGENCE_FILE, INCENTIVE_CONVERGENCE_FILE, REPORT_FILE};
