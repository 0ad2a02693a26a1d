//! Scenario generation and range-bearing log ingestion.

pub mod dataset;
pub mod fixture;
pub mod log;
pub mod sim;

pub use dataset::{
    estimate_noise_params, extract_subsequences, integrate_odometry, NoiseParams, Subsequence,
    SubsequenceSpec,
};
pub use fixture::{generate_log, LogFixture, LogFixtureParams};
pub use log::{integrate_increment, range_bearing_to_position, read_log, write_log, RawLog};
pub use sim::{generate_scenario, Scenario, SimParams};
