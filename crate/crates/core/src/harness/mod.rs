//! Experiment driver: configuration, suite execution, tables and plots.

pub mod config;
pub mod plot;
pub mod report;
pub mod run;

pub use config::{AttackKind, AttackSpec, ExperimentConfig, KernelPair, SuiteSpec};
pub use report::{report, ResultTable, TableRow};
pub use run::{cells, generate_suite, run_suite, CellResult, CleanResult, RunOptions, Suite};
