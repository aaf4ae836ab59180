//! Volt/VAr control on a radial distribution feeder.
//!
//! Three strategies are simulated against a nonlinear AC power-flow plant:
//! local droop curves, centralized OPF dispatch and a feedback-optimization
//! controller that integrates measured voltage violations into dual
//! variables.
//!
//! - [`grid`]: feeder model, per-unit system, admittance and sensitivity
//!   matrices.
//! - [`powerflow`]: Newton-Raphson and Z-bus power flow.
//! - [`optim`]: weighted box projection, OPF by sequential linearization and
//!   a lattice search used to check it.
//! - [`controllers`]: the three strategies behind [`VoltVarController`].
//! - [`sim`]: scenarios, the quasi-static closed loop, logs and metrics.

pub mod config;
pub mod controllers;
pub mod grid;
pub mod optim;
pub mod powerflow;
pub mod sim;

pub use config::ConfigError;
pub use controllers::{
    droop_step, droop_target, ControllerError, DroopController, DroopParams, FoConfig,
    FoController, Measurement, OpfDispatcher, VoltVarController, WPerturbation,
};
pub use grid::{
    bus_admittance, canonical_feeder, parse_feeder, reduced_reactance, Bus, BusKind, DerSpec,
    FeederModel, GridError, Line, PerUnitBase,
};
pub use optim::{
    opf_grid_oracle, opf_solve, project_weighted_box, BoxConstraint, CostWeight, OpfOutcome,
    OptimError, VoltageLimits,
};
pub use powerflow::{
    solve_newton, solve_zbus, voltage_magnitudes, Exogenous, GridOperatingPoint, InjectionVector,
    PowerFlowError, SolverOptions,
};
pub use sim::{
    compare, droop_detriment_probe, run, run_scenario, sweep, violation_metrics, Scenario,
    SimError, SimulationLog, Strategy, SweepParam, ViolationMetrics, XSource,
};
