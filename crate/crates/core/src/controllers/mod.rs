//! Volt/VAr strategies behind one interface: once per control period a
//! controller receives the measured DER voltage magnitudes and returns the
//! reactive set-points for the next period.
//!
//! Set-points are per DER in [`FeederModel::der_buses`](crate::grid::FeederModel::der_buses)
//! order and in p.u.

mod droop;
mod fo;
mod opf_dispatch;

use thiserror::Error;

use crate::optim::OptimError;
use crate::powerflow::Exogenous;

pub use droop::{droop_step, droop_target, DroopController, DroopParams};
pub use fo::{FoConfig, FoController};
pub use opf_dispatch::{OpfDispatcher, WPerturbation};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("{what}: expected {expected} entries, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid droop parameters: {0}")]
    InvalidDroop(String),
    #[error("invalid gain {0}")]
    InvalidGain(f64),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// What a controller sees at one control instant.
#[derive(Debug, Clone, Copy)]
pub struct Measurement<'a> {
    /// Measured voltage magnitude per DER, p.u.
    pub der_voltages: &'a [f64],
    /// Uncontrolled injections. Only a centralized dispatcher with full
    /// load knowledge reads this.
    pub exogenous: &'a Exogenous,
    pub time_s: f64,
}

pub trait VoltVarController: Send {
    fn name(&self) -> &'static str;

    /// Set-points to apply until the next call. Always inside the DER box.
    fn step(&mut self, measurement: &Measurement<'_>) -> Result<Vec<f64>, ControllerError>;

    /// Back to the state at activation.
    fn reset(&mut self);

    /// `(lambda_min, lambda_max)` for controllers that keep multipliers.
    fn duals(&self) -> Option<(&[f64], &[f64])> {
        None
    }

    /// True when the last step could not produce a new set-point and the
    /// previous one was held.
    fn held_setpoints(&self) -> bool {
        false
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ControllerError> {
    if expected == got {
        Ok(())
    } else {
        Err(ControllerError::Dimension {
            what,
            expected,
            got,
        })
    }
}
