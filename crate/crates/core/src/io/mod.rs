//! Configuration, field files, run orchestration and artifact emission.

pub mod config;
pub mod field_io;
pub mod run;

pub use config::{load_config, parse_config, Emit, RunSpec};
pub use field_io::{read_field, read_header, write_field};
pub use run::{run, Failure, RunSummary};
