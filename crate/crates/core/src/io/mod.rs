//! File formats and the computations behind the command-line tool.

pub mod commands;
pub mod config;
pub mod table;

pub use commands::{
    parse_bandwidth, parse_tau_grid, run_curve, run_fit, run_simulate, run_survival, CurveOptions,
    EstimatorName, FitOptions, FitOutput, SurvivalOptions,
};
pub use config::{parse_study_config, P0Setting, StudyConfig};
pub use table::{read_dataset, write_dataset, CsvData};
