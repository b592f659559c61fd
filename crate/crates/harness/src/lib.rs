//! Experiment driver for the `cepmc-core` estimators: experiment files,
//! seeded parallel replication, CSV outputs and plot data.

pub mod config;
pub mod experiment;
pub mod plot;

pub use config::{parse_config, ConfigError, ExperimentSpec, Method, ProblemSpec};
pub use experiment::{
    derive_seed, latin_hypercube_init, run_experiment, write_outputs, HarnessError, RunOptions,
};
pub use plot::plot_data_from;
