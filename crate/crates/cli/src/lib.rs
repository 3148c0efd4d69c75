//! Batch experiment runner: JSON config in, sorted CSV plus a JSON
//! manifest out.

pub mod error;
pub mod output;
pub mod resources;
pub mod runner;
pub mod spec;

pub use error::{CliError, CliResult};
pub use resources::{storage_bytes, ResourceEstimate, Storage};
pub use runner::{estimate_resources, plan, resolve_workers, run, run_spec, RunOptions, RunReport};
pub use spec::{load_spec, parse_spec, ExperimentKind, ExperimentSpec};
