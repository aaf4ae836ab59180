use nalgebra::{DMatrix, DVector};

use super::{check_len, ControllerError, Measurement, VoltVarController};
use crate::optim::{project_weighted_box, BoxConstraint, CostWeight, VoltageLimits};

/// Static parameters of the feedback-optimization controller.
#[derive(Debug, Clone)]
pub struct FoConfig {
    /// Dual step size.
    pub alpha: f64,
    /// Voltage sensitivity to the set-points, `dv/dq`.
    pub x: DMatrix<f64>,
    pub m: CostWeight,
    pub limits: VoltageLimits,
    pub bounds: BoxConstraint,
    /// Stop integrating a violation that the saturated DERs cannot reduce.
    pub anti_windup: bool,
}

/// Dual-ascent controller for
///
/// ```text
/// minimize 0.5 q^T M q  s.t.  v_min <= v(q) <= v_max,  q in box
/// ```
///
/// Each step integrates the measured violations into the multipliers,
/// minimizes the Lagrangian with `v(q)` replaced by its linearization
/// `X q + const`, and projects the minimizer onto the box in the `M` norm.
#[derive(Debug, Clone)]
pub struct FoController {
    config: FoConfig,
    lambda_min: Vec<f64>,
    lambda_max: Vec<f64>,
    last_q: Vec<f64>,
}

impl FoController {
    pub fn new(config: FoConfig) -> Result<Self, ControllerError> {
        let n = config.bounds.dim();
        check_len("cost weight", n, config.m.dim())?;
        check_len("sensitivity rows", n, config.x.nrows())?;
        check_len("sensitivity columns", n, config.x.ncols())?;
        if !(config.alpha.is_finite() && config.alpha > 0.0) {
            return Err(ControllerError::InvalidGain(config.alpha));
        }
        let last_q = config.bounds.clamp(&vec![0.0; n]);
        Ok(Self {
            config,
            lambda_min: vec![0.0; n],
            lambda_max: vec![0.0; n],
            last_q,
        })
    }

    pub fn config(&self) -> &FoConfig {
        &self.config
    }

    pub fn lambda_min(&self) -> &[f64] {
        &self.lambda_min
    }

    pub fn lambda_max(&self) -> &[f64] {
        &self.lambda_max
    }

    pub fn last_q(&self) -> &[f64] {
        &self.last_q
    }

    /// Overrides the multipliers, e.g. to start from a warm state.
    /// Negative entries are clipped to zero.
    pub fn set_duals(
        &mut self,
        lambda_min: &[f64],
        lambda_max: &[f64],
    ) -> Result<(), ControllerError> {
        let n = self.lambda_min.len();
        check_len("lambda_min", n, lambda_min.len())?;
        check_len("lambda_max", n, lambda_max.len())?;
        self.lambda_min = lambda_min.iter().map(|l| l.max(0.0)).collect();
        self.lambda_max = lambda_max.iter().map(|l| l.max(0.0)).collect();
        Ok(())
    }

    /// Overrides the last emitted set-point (clamped to the box). Only the
    /// anti-windup test reads it.
    pub fn set_last_q(&mut self, q: &[f64]) -> Result<(), ControllerError> {
        check_len("set-points", self.last_q.len(), q.len())?;
        self.last_q = self.config.bounds.clamp(q);
        Ok(())
    }

    /// Projected gradient ascent on the dual:
    ///
    /// ```text
    /// lambda_min <- max(0, lambda_min + alpha (v_min - v))
    /// lambda_max <- max(0, lambda_max + alpha (v - v_max))
    /// ```
    ///
    /// With anti-windup an overvoltage entry is frozen while every DER sits
    /// at its lower limit, and an undervoltage entry while every DER sits
    /// at its upper limit.
    pub fn update_duals(&mut self, v: &[f64]) -> Result<(), ControllerError> {
        check_len("voltage measurements", self.lambda_min.len(), v.len())?;
        let FoConfig {
            alpha,
            limits,
            bounds,
            anti_windup,
            ..
        } = &self.config;
        let all_low = *anti_windup && bounds.at_lower(&self.last_q);
        let all_high = *anti_windup && bounds.at_upper(&self.last_q);
        for (i, &vi) in v.iter().enumerate() {
            let over = vi > limits.v_max;
            let under = vi < limits.v_min;
            if !(under && all_high) {
                self.lambda_min[i] = (self.lambda_min[i] + alpha * (limits.v_min - vi)).max(0.0);
            }
            if !(over && all_low) {
                self.lambda_max[i] = (self.lambda_max[i] + alpha * (vi - limits.v_max)).max(0.0);
            }
        }
        Ok(())
    }

    /// `M^{-1} X^T (lambda_min - lambda_max)`.
    pub fn unconstrained_setpoint(&self) -> Vec<f64> {
        let diff = DVector::from_iterator(
            self.lambda_min.len(),
            self.lambda_min
                .iter()
                .zip(&self.lambda_max)
                .map(|(a, b)| a - b),
        );
        let rhs = self.config.x.transpose() * diff;
        self.config.m.solve(&rhs).as_slice().to_vec()
    }

    /// Dual update, Lagrangian minimizer, projection onto the box.
    pub fn fo_step(&mut self, v: &[f64]) -> Result<Vec<f64>, ControllerError> {
        self.update_duals(v)?;
        let q_unc = self.unconstrained_setpoint();
        let q = project_weighted_box(&q_unc, &self.config.bounds, &self.config.m)?;
        self.last_q.clone_from(&q);
        Ok(q)
    }
}

impl VoltVarController for FoController {
    fn name(&self) -> &'static str {
        "fo"
    }

    fn step(&mut self, measurement: &Measurement<'_>) -> Result<Vec<f64>, ControllerError> {
        self.fo_step(measurement.der_voltages)
    }

    fn reset(&mut self) {
        let n = self.lambda_min.len();
        self.lambda_min = vec![0.0; n];
        self.lambda_max = vec![0.0; n];
        self.last_q = self.config.bounds.clamp(&vec![0.0; n]);
    }

    fn duals(&self) -> Option<(&[f64], &[f64])> {
        Some((&self.lambda_min, &self.lambda_max))
    }
}
