use super::{check_len, ControllerError, Measurement, VoltVarController};
use crate::grid::FeederModel;
use crate::optim::{opf_solve, BoxConstraint, CostWeight, OpfOptions, OpfOutcome, VoltageLimits};
use crate::powerflow::Exogenous;

/// How the dispatcher's view of the uncontrolled injections differs from
/// the truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WPerturbation {
    /// Buses whose injections the dispatcher does not know about (it
    /// assumes zero).
    pub unknown_buses: Vec<usize>,
}

impl WPerturbation {
    pub fn apply(&self, w: &Exogenous) -> Exogenous {
        let mut seen = w.clone();
        for &b in &self.unknown_buses {
            if b < seen.p.len() {
                seen.p[b] = 0.0;
                seen.q[b] = 0.0;
            }
        }
        seen
    }
}

/// Centralized open-loop dispatch: solves the OPF on its own (possibly
/// wrong) model with its own (possibly wrong) knowledge of the injections
/// and applies the result without looking at voltages.
///
/// The solution is recomputed only when the injections change. If the OPF
/// is infeasible or fails, the previous set-points are held.
#[derive(Debug, Clone)]
pub struct OpfDispatcher {
    model: FeederModel,
    perturbation: WPerturbation,
    limits: VoltageLimits,
    bounds: BoxConstraint,
    m: CostWeight,
    options: OpfOptions,
    last_q: Vec<f64>,
    cache: Option<Exogenous>,
    held: bool,
}

impl OpfDispatcher {
    pub fn new(
        model: FeederModel,
        perturbation: WPerturbation,
        limits: VoltageLimits,
        bounds: BoxConstraint,
        m: CostWeight,
        options: OpfOptions,
    ) -> Result<Self, ControllerError> {
        check_len("box", model.n_ders(), bounds.dim())?;
        check_len("cost weight", model.n_ders(), m.dim())?;
        let last_q = bounds.clamp(&vec![0.0; bounds.dim()]);
        Ok(Self {
            model,
            perturbation,
            limits,
            bounds,
            m,
            options,
            last_q,
            cache: None,
            held: false,
        })
    }

    pub fn model(&self) -> &FeederModel {
        &self.model
    }
}

impl VoltVarController for OpfDispatcher {
    fn name(&self) -> &'static str {
        "opf"
    }

    fn step(&mut self, measurement: &Measurement<'_>) -> Result<Vec<f64>, ControllerError> {
        let w = self.perturbation.apply(measurement.exogenous);
        if self.cache.as_ref() == Some(&w) {
            return Ok(self.last_q.clone());
        }
        let outcome = opf_solve(
            &self.model,
            &w,
            &self.limits,
            &self.bounds,
            &self.m,
            &self.options,
        );
        match outcome {
            Ok(OpfOutcome::Optimal(point)) => {
                self.last_q = self.bounds.clamp(&point.q);
                self.held = false;
            }
            Ok(OpfOutcome::Infeasible(_)) | Err(_) => self.held = true,
        }
        self.cache = Some(w);
        Ok(self.last_q.clone())
    }

    fn reset(&mut self) {
        self.last_q = self.bounds.clamp(&vec![0.0; self.bounds.dim()]);
        self.cache = None;
        self.held = false;
    }

    fn held_setpoints(&self) -> bool {
        self.held
    }
}
