//! Online estimation of the conditional geometric median of a random
//! vector given a real covariate.
//!
//! The main entry point is [`EstimatorState`], a kernel-weighted stochastic
//! gradient recursion with an averaged companion. [`weiszfeld`] is the batch
//! counterpart, [`BrownianModel`] the simulation ground truth, and
//! [`run_table_experiment`] the replication harness built on top of both.

pub mod asymptotics;
pub mod baseline;
pub mod bench;
pub mod error;
pub mod geometry;
pub mod recursive;
pub mod simulation;

pub use asymptotics::{
    estimate_sigma_gamma, rate_slope, sandwich_covariance, validate_schedule, CovariancePair,
    RateFit, ScheduleVerdict,
};
pub use baseline::{empirical_risk, kernel_weights, weiszfeld, WeightedSample, WeiszfeldResult};
pub use bench::{
    clt_experiment, run_table_experiment, BandwidthSpec, CltReport, Estimator,
    ExperimentReport, TableExperimentConfig,
};
pub use error::{Error, Result};
pub use geometry::{direction, Kernel, Norm, Point, Record, Schedule};
pub use recursive::{
    multi_start_select, multi_target_run, run_stream, EstimatorConfig, EstimatorState, Init,
    Mode, MultiStartOutcome, StreamEstimate, TargetEstimate, Update,
};
pub use simulation::{BrownianModel, ConditionalSampler, SimRng};
