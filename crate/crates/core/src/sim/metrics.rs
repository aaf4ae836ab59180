use super::engine::SimulationLog;
use super::scenario::Strategy;
use super::SimError;
use crate::optim::VoltageLimits;

/// A DER voltage counts as inside the band when it is out by at most this
/// much, p.u.
pub const FEASIBILITY_TOL: f64 = 1e-3;

/// Reactive injections below this are treated as zero by the detriment
/// probe, kVAr.
pub const DETRIMENT_MIN_Q_KVAR: f64 = 1e-3;

/// Length of the trailing window treated as steady state, s.
pub const STEADY_STATE_WINDOW_S: f64 = 60.0;

/// Closed-loop quality of a run, on true (noise-free) DER voltages.
///
/// Everything except the steady-state figures is measured from controller
/// activation (from t = 0 when the controller never switches on).
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationMetrics {
    /// Largest excursion outside the band, p.u.
    pub max_violation: f64,
    /// Sum of the per-period excursion times the period, p.u. s.
    pub violation_integral: f64,
    /// Time from activation to the first period with every DER voltage
    /// within [`FEASIBILITY_TOL`] of the band; `None` means never.
    pub time_to_feasibility: Option<f64>,
    /// Same, but only counting periods before the first injection change
    /// after activation, so that feasibility handed over by a change in
    /// the injections does not count.
    pub time_to_feasibility_before_next_event: Option<f64>,
    /// Largest excursion in the steady-state window, p.u.
    pub steady_state_violation: f64,
    /// Mean of `0.5 q^T M q` (q in kVAr) over the steady-state window.
    pub steady_state_cost: f64,
    /// Mean true voltage per DER over the steady-state window, p.u.
    pub steady_state_der_voltages: Vec<f64>,
    /// Mean set-point per DER over the steady-state window, kVAr.
    pub steady_state_q_kvar: Vec<f64>,
    /// Largest multiplier seen (zero for strategies without multipliers).
    pub max_abs_lambda: f64,
}

pub fn violation_metrics(
    log: &SimulationLog,
    limits: &VoltageLimits,
) -> Result<ViolationMetrics, SimError> {
    let Some(last) = log.records.last() else {
        return Err(SimError::EmptyLog);
    };
    let start = log.activation_s.unwrap_or(0.0);
    let next_event = log
        .exogenous_event_times
        .iter()
        .copied()
        .find(|&t| t > start + 1e-9);

    let mut metrics = ViolationMetrics {
        max_violation: 0.0,
        violation_integral: 0.0,
        time_to_feasibility: None,
        time_to_feasibility_before_next_event: None,
        steady_state_violation: 0.0,
        steady_state_cost: 0.0,
        steady_state_der_voltages: vec![0.0; log.der_buses.len()],
        steady_state_q_kvar: vec![0.0; log.der_buses.len()],
        max_abs_lambda: 0.0,
    };

    for r in log.records.iter().filter(|r| r.time_s >= start - 1e-9) {
        let violation = limits.violation(&log.der_true(r));
        metrics.max_violation = metrics.max_violation.max(violation);
        metrics.violation_integral += violation * log.control_period_s;
        if violation <= FEASIBILITY_TOL {
            let elapsed = r.time_s - start;
            metrics.time_to_feasibility.get_or_insert(elapsed);
            if next_event.is_none_or(|t| r.time_s < t - 1e-9) {
                metrics
                    .time_to_feasibility_before_next_event
                    .get_or_insert(elapsed);
            }
        }
    }
    for r in &log.records {
        for l in r.lambda_min.iter().chain(&r.lambda_max).flatten() {
            metrics.max_abs_lambda = metrics.max_abs_lambda.max(l.abs());
        }
        if r.lambda_min
            .iter()
            .chain(&r.lambda_max)
            .flatten()
            .any(|l| !l.is_finite())
        {
            metrics.max_abs_lambda = f64::INFINITY;
        }
    }

    let window_start = last.time_s + log.control_period_s - STEADY_STATE_WINDOW_S - 1e-9;
    let window: Vec<_> = log
        .records
        .iter()
        .filter(|r| r.time_s >= window_start)
        .collect();
    let count = window.len() as f64;
    for r in &window {
        let v = log.der_true(r);
        metrics.steady_state_violation = metrics.steady_state_violation.max(limits.violation(&v));
        metrics.steady_state_cost += log.cost(r) / count;
        for (acc, x) in metrics.steady_state_der_voltages.iter_mut().zip(&v) {
            *acc += x / count;
        }
        for (acc, q) in metrics.steady_state_q_kvar.iter_mut().zip(log.q_kvar(r)) {
            *acc += q / count;
        }
    }
    Ok(metrics)
}

/// A period in which one DER pushes reactive power into the grid while
/// another DER bus is above `v_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetrimentEpisode {
    pub time_s: f64,
    /// Index of the injecting DER.
    pub der: usize,
    pub q_kvar: f64,
    /// Index of the DER in overvoltage.
    pub overvoltage_der: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetrimentReport {
    /// Only droop runs are inspected.
    pub applicable: bool,
    pub flagged: bool,
    pub episodes: Vec<DetrimentEpisode>,
}

/// Looks for droop working against the voltage problem: a DER whose own
/// voltage sagged below the deadband injecting reactive power while the
/// end of the feeder is in overvoltage.
pub fn droop_detriment_probe(log: &SimulationLog, limits: &VoltageLimits) -> DetrimentReport {
    let mut report = DetrimentReport {
        applicable: log.strategy == Strategy::Droop,
        flagged: false,
        episodes: Vec::new(),
    };
    if !report.applicable {
        return report;
    }
    for r in &log.records {
        let v = log.der_true(r);
        let q = log.q_kvar(r);
        for (over, _) in v.iter().enumerate().filter(|(_, &x)| x > limits.v_max) {
            for (der, &qj) in q.iter().enumerate() {
                if der != over && qj > DETRIMENT_MIN_Q_KVAR {
                    report.episodes.push(DetrimentEpisode {
                        time_s: r.time_s,
                        der,
                        q_kvar: qj,
                        overvoltage_der: over,
                    });
                }
            }
        }
    }
    report.flagged = !report.episodes.is_empty();
    report
}
