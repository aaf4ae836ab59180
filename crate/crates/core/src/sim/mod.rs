//! Quasi-static closed-loop simulation: the plant is assumed to settle
//! within one control period, so each period is one power-flow solve.

mod engine;
mod experiments;
mod metrics;
mod scenario;

use thiserror::Error;

use crate::config::ConfigError;
use crate::controllers::ControllerError;
use crate::optim::OptimError;

pub use engine::{
    build_controller, cost_weight_per_kvar, cost_weight_pu, der_box_pu, load_feeder, run,
    run_scenario, RunFailure, SimulationLog, StepRecord,
};
pub use experiments::{
    compare, comparison_variants, reference_optimum, sweep, Comparison, ReferenceOptimum,
    RunSummary, SweepParam, SweepRow,
};
pub use metrics::{
    droop_detriment_probe, violation_metrics, DetrimentEpisode, DetrimentReport, ViolationMetrics,
    DETRIMENT_MIN_Q_KVAR, FEASIBILITY_TOL, STEADY_STATE_WINDOW_S,
};
pub use scenario::{
    parse_matrix, perturb_symmetric, ControllerConfig, Event, EventKind, NoiseModel, Scenario,
    Strategy, XSource, CANONICAL_SCENARIO_TOML,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("simulation log is empty")]
    EmptyLog,
}
