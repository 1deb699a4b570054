//! Experiment driver behind the `ris-sim` binary.

pub mod config;
pub mod experiments;
pub mod report;

pub use config::ScenarioConfig;
pub use experiments::{
    default_distance_grid, default_element_grid, oracle_cases, oracle_report, run_csi_impact, run_gain_vs_distance,
    run_gain_vs_elements, run_power_trace, run_random_search_experiment, SpacingMode, DEFAULT_MU_LIST,
};
pub use report::{emit_csv, Report};
