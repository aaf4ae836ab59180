use super::{check_len, ControllerError, Measurement, VoltVarController};
use crate::optim::BoxConstraint;

/// Piecewise-linear Volt/VAr curve with a deadband.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroopParams {
    /// Breakpoints `v1 < v2 <= v3 < v4`, p.u.
    pub breakpoints: [f64; 4],
    /// Fraction of the distance to the target covered per step, in (0, 1].
    pub damping: f64,
}

impl Default for DroopParams {
    fn default() -> Self {
        Self {
            breakpoints: [0.95, 0.99, 1.01, 1.05],
            damping: 0.5,
        }
    }
}

impl DroopParams {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let [v1, v2, v3, v4] = self.breakpoints;
        if !self.breakpoints.iter().all(|v| v.is_finite()) || !(v1 < v2 && v2 <= v3 && v3 < v4) {
            return Err(ControllerError::InvalidDroop(format!(
                "breakpoints must satisfy v1 < v2 <= v3 < v4, got {:?}",
                self.breakpoints
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(ControllerError::InvalidDroop(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// Static curve value: `q_max` below `v1`, linear down to zero at `v2`,
/// zero up to `v3`, linear down to `q_min` at `v4`, `q_min` above.
pub fn droop_target(breakpoints: &[f64; 4], v: f64, q_min: f64, q_max: f64) -> f64 {
    let [v1, v2, v3, v4] = *breakpoints;
    if v <= v1 {
        q_max
    } else if v < v2 {
        q_max * (v2 - v) / (v2 - v1)
    } else if v <= v3 {
        0.0
    } else if v < v4 {
        q_min * (v - v3) / (v4 - v3)
    } else {
        q_min
    }
}

/// One damped move from `prev_q` toward the curve value, kept in
/// `[q_min, q_max]`.
pub fn droop_step(params: &DroopParams, v: f64, prev_q: f64, q_min: f64, q_max: f64) -> f64 {
    let target = droop_target(&params.breakpoints, v, q_min, q_max);
    (prev_q + params.damping * (target - prev_q)).clamp(q_min, q_max)
}

/// Local droop on every DER; each one only reads its own voltage.
#[derive(Debug, Clone)]
pub struct DroopController {
    params: DroopParams,
    bounds: BoxConstraint,
    last_q: Vec<f64>,
}

impl DroopController {
    pub fn new(params: DroopParams, bounds: BoxConstraint) -> Result<Self, ControllerError> {
        params.validate()?;
        let last_q = bounds.clamp(&vec![0.0; bounds.dim()]);
        Ok(Self {
            params,
            bounds,
            last_q,
        })
    }
}

impl VoltVarController for DroopController {
    fn name(&self) -> &'static str {
        "droop"
    }

    fn step(&mut self, measurement: &Measurement<'_>) -> Result<Vec<f64>, ControllerError> {
        let v = measurement.der_voltages;
        check_len("voltage measurements", self.last_q.len(), v.len())?;
        for (i, q) in self.last_q.iter_mut().enumerate() {
            let (lo, hi) = (self.bounds.lower()[i], self.bounds.upper()[i]);
            *q = droop_step(&self.params, v[i], *q, lo, hi);
        }
        Ok(self.last_q.clone())
    }

    fn reset(&mut self) {
        self.last_q = self.bounds.clamp(&vec![0.0; self.bounds.dim()]);
    }
}
