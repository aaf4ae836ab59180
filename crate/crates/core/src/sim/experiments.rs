use rayon::prelude::*;

use super::engine::{cost_weight_per_kvar, cost_weight_pu, der_box_pu, run, SimulationLog};
use super::metrics::{violation_metrics, ViolationMetrics};
use super::scenario::{Scenario, Strategy, XSource};
use super::SimError;
use crate::config::ConfigError;
use crate::grid::FeederModel;
use crate::optim::{opf_solve, OpfOptions, OpfOutcome};

/// OPF optimum on the true model for the injections in force at the end of
/// the scenario, which is what a run's steady state is compared with.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptimum {
    pub q_kvar: Vec<f64>,
    /// `0.5 q^T M q` with `q` in kVAr.
    pub cost: f64,
    pub feasible: bool,
}

pub fn reference_optimum(
    scenario: &Scenario,
    model: &FeederModel,
) -> Result<ReferenceOptimum, SimError> {
    let w = scenario.exogenous_at(model, scenario.duration_s);
    let m = cost_weight_pu(scenario, model)?;
    let outcome = opf_solve(
        model,
        &w,
        &scenario.limits,
        &der_box_pu(model),
        &m,
        &OpfOptions::default(),
    )?;
    let base = model.base();
    let q_kvar: Vec<f64> = outcome
        .point()
        .q
        .iter()
        .map(|&q| base.pu_to_kilo(q))
        .collect();
    let cost = q_kvar
        .iter()
        .zip(cost_weight_per_kvar(scenario, model))
        .map(|(q, w)| 0.5 * w * q * q)
        .sum();
    Ok(ReferenceOptimum {
        q_kvar,
        cost,
        feasible: matches!(outcome, OpfOutcome::Optimal(_)),
    })
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub label: String,
    pub log: Option<SimulationLog>,
    pub metrics: Option<ViolationMetrics>,
    /// Steady-state cost over the reference optimum cost.
    pub cost_ratio: Option<f64>,
    /// Why the run (or its evaluation) failed.
    pub error: Option<String>,
}

impl RunSummary {
    fn evaluate(
        label: String,
        scenario: &Scenario,
        model: &FeederModel,
        reference: Option<f64>,
    ) -> Self {
        let mut summary = Self {
            label,
            log: None,
            metrics: None,
            cost_ratio: None,
            error: None,
        };
        match run(scenario, model) {
            Ok(log) => {
                if let Some(f) = &log.failure {
                    summary.error = Some(format!("failed at {} s: {}", f.time_s, f.message));
                }
                match violation_metrics(&log, &scenario.limits) {
                    Ok(m) => {
                        summary.cost_ratio = reference
                            .filter(|&c| c > 0.0)
                            .map(|c| m.steady_state_cost / c);
                        summary.metrics = Some(m);
                    }
                    Err(e) => {
                        summary.error.get_or_insert(e.to_string());
                    }
                }
                summary.log = Some(log);
            }
            Err(e) => summary.error = Some(e.to_string()),
        }
        summary
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub reference: Option<ReferenceOptimum>,
    pub rows: Vec<RunSummary>,
}

/// The strategy line-up compared on one scenario, as `(label, scenario)`.
pub fn comparison_variants(base: &Scenario) -> Vec<(String, Scenario)> {
    let with = |f: &dyn Fn(&mut Scenario)| {
        let mut s = base.clone();
        f(&mut s);
        s
    };
    vec![
        (
            "droop".into(),
            with(&|s| s.controller.strategy = Strategy::Droop),
        ),
        (
            "opf".into(),
            with(&|s| {
                s.controller.strategy = Strategy::Opf;
                s.controller.opf_impedance_scale = 1.0;
            }),
        ),
        (
            "opf_impedance_x0.8".into(),
            with(&|s| {
                s.controller.strategy = Strategy::Opf;
                s.controller.opf_impedance_scale = 0.8;
            }),
        ),
        (
            "fo_published_x".into(),
            with(&|s| {
                s.controller.strategy = Strategy::Fo;
                s.controller.x_source = XSource::Published;
            }),
        ),
        (
            "fo_ones_x".into(),
            with(&|s| {
                s.controller.strategy = Strategy::Fo;
                s.controller.x_source = XSource::Ones;
                s.controller.alpha = 10.0;
            }),
        ),
    ]
}

/// Runs [`comparison_variants`] concurrently. A failing run is reported in
/// its row and does not affect the others.
pub fn compare(base: &Scenario, model: &FeederModel) -> Comparison {
    let reference = reference_optimum(base, model).ok();
    let reference_cost = reference.as_ref().filter(|r| r.feasible).map(|r| r.cost);
    let rows = comparison_variants(base)
        .into_par_iter()
        .map(|(label, scenario)| RunSummary::evaluate(label, &scenario, model, reference_cost))
        .collect();
    Comparison { reference, rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    NoiseStddev,
    XPerturbation,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::NoiseStddev => "noise_stddev",
            Self::XPerturbation => "x_perturbation",
        }
    }

    pub fn apply(self, scenario: &mut Scenario, value: f64) {
        match self {
            Self::Alpha => scenario.controller.alpha = value,
            Self::NoiseStddev => scenario.noise.stddev = value,
            Self::XPerturbation => scenario.controller.x_perturbation = value,
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "noise_stddev" | "noise-std" => Ok(Self::NoiseStddev),
            "x_perturbation" => Ok(Self::XPerturbation),
            other => Err(ConfigError::Invalid(format!(
                "unknown sweep parameter `{other}` (expected alpha, noise_stddev or x_perturbation)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub summary: RunSummary,
    /// The run failed, or a multiplier left the divergence bound.
    pub diverged: bool,
}

/// One run per value of `param`, concurrently; rows come back in the
/// order of `values`.
pub fn sweep(
    base: &Scenario,
    model: &FeederModel,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>, SimError> {
    let scenarios = values
        .iter()
        .map(|&value| {
            let mut s = base.clone();
            param.apply(&mut s, value);
            s.validate_against(model)?;
            Ok((value, s))
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let reference_cost = reference_optimum(base, model)
        .ok()
        .filter(|r| r.feasible)
        .map(|r| r.cost);
    Ok(scenarios
        .into_par_iter()
        .map(|(value, scenario)| {
            let label = format!("{}={value}", param.as_str());
            let summary = RunSummary::evaluate(label, &scenario, model, reference_cost);
            let bound = scenario.controller.divergence_bound;
            let diverged = summary.error.is_some()
                || summary
                    .metrics
                    .as_ref()
                    .is_some_and(|m| m.max_abs_lambda.is_nan() || m.max_abs_lambda > bound);
            SweepRow {
                value,
                summary,
                diverged,
            }
        })
        .collect())
}
