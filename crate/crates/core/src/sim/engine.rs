use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scenario::{perturb_symmetric, EventKind, Scenario, Strategy};
use super::SimError;
use crate::config::{read_file, ConfigError};
use crate::controllers::{
    DroopController, FoConfig, FoController, Measurement, OpfDispatcher, VoltVarController,
    WPerturbation,
};
use crate::grid::{canonical_feeder, parse_feeder, FeederModel, PerUnitBase};
use crate::optim::{BoxConstraint, CostWeight, OpfOptions};
use crate::powerflow::{
    line_losses, solve_newton, voltage_magnitudes, InjectionVector, SolverOptions,
};

/// One control period.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub time_s: f64,
    /// True voltage magnitude per bus, p.u.
    pub v_true: Vec<f64>,
    /// Measured (noisy) voltage magnitude per DER, p.u.
    pub v_meas: Vec<f64>,
    /// Set-points in force during this period, p.u.
    pub q: Vec<f64>,
    /// Multipliers after this period's controller step (FO only).
    pub lambda_min: Option<Vec<f64>>,
    pub lambda_max: Option<Vec<f64>>,
    /// Active power injection per bus, kW: the specified value for load
    /// buses, the power-flow result for the slack bus.
    pub p_kw: Vec<f64>,
    pub loss_kw: f64,
    pub events: Vec<String>,
    pub pf_iterations: usize,
    pub pf_residual: f64,
    pub controller_active: bool,
    /// The controller kept its previous set-points (OPF infeasible).
    pub setpoints_held: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub time_s: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationLog {
    pub scenario: String,
    pub strategy: Strategy,
    pub control_period_s: f64,
    pub duration_s: f64,
    pub activation_s: Option<f64>,
    /// Times of injection changes.
    pub exogenous_event_times: Vec<f64>,
    pub base: PerUnitBase,
    pub n_buses: usize,
    pub der_buses: Vec<usize>,
    /// Cost weight per kVAr used to report actuation cost.
    pub cost_weight_per_kvar: Vec<f64>,
    pub records: Vec<StepRecord>,
    /// Set when the run stopped early; `records` then holds the periods
    /// completed before the failure.
    pub failure: Option<RunFailure>,
}

impl SimulationLog {
    pub fn der_true(&self, record: &StepRecord) -> Vec<f64> {
        self.der_buses.iter().map(|&b| record.v_true[b]).collect()
    }

    pub fn q_kvar(&self, record: &StepRecord) -> Vec<f64> {
        record.q.iter().map(|&q| self.base.pu_to_kilo(q)).collect()
    }

    /// `0.5 q^T M q` with `q` in kVAr.
    pub fn cost(&self, record: &StepRecord) -> f64 {
        self.q_kvar(record)
            .iter()
            .zip(&self.cost_weight_per_kvar)
            .map(|(q, m)| 0.5 * m * q * q)
            .sum()
    }

    pub fn has_duals(&self) -> bool {
        self.strategy == Strategy::Fo
    }

    pub fn csv_header(&self) -> Vec<String> {
        let m = self.der_buses.len();
        let mut h = vec!["time_s".to_string()];
        h.extend((0..self.n_buses).map(|i| format!("v_true_bus{i}")));
        h.extend((0..m).map(|j| format!("v_meas_der{j}")));
        h.extend((0..m).map(|j| format!("q_cmd_der{j}")));
        h.extend((0..m).map(|j| format!("lambda_min_{j}")));
        h.extend((0..m).map(|j| format!("lambda_max_{j}")));
        h.extend((0..self.n_buses).map(|i| format!("p_bus{i}_kw")));
        h.extend(["event", "pf_iters", "pf_residual"].map(String::from));
        h
    }

    /// Writes the log as CSV. Reals use nine significant digits, set-points
    /// are in kVAr, multiplier columns are empty for strategies without
    /// them. A failed run ends with a row carrying only the failure time and
    /// message.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let fmt = |x: f64| format!("{x:.8e}");
        let m = self.der_buses.len();
        let mut w = csv::Writer::from_writer(out);
        let header = self.csv_header();
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![fmt(r.time_s)];
            row.extend(r.v_true.iter().map(|&v| fmt(v)));
            row.extend(r.v_meas.iter().map(|&v| fmt(v)));
            row.extend(self.q_kvar(r).into_iter().map(fmt));
            for duals in [&r.lambda_min, &r.lambda_max] {
                match duals {
                    Some(l) => row.extend(l.iter().map(|&v| fmt(v))),
                    None => row.extend(std::iter::repeat_n(String::new(), m)),
                }
            }
            row.extend(r.p_kw.iter().map(|&v| fmt(v)));
            let mut events = r.events.join(";");
            if r.setpoints_held {
                if !events.is_empty() {
                    events.push(';');
                }
                events.push_str("setpoints_held");
            }
            row.push(events);
            row.push(r.pf_iterations.to_string());
            row.push(fmt(r.pf_residual));
            w.write_record(&row)?;
        }
        if let Some(f) = &self.failure {
            let mut row = vec![String::new(); header.len()];
            row[0] = fmt(f.time_s);
            row[header.len() - 3] = format!("failed: {}", f.message);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }
}

/// The feeder a scenario refers to: its `feeder` file, or the canonical
/// feeder when none is given.
pub fn load_feeder(scenario: &Scenario) -> Result<FeederModel, ConfigError> {
    match &scenario.feeder {
        Some(path) => parse_feeder(&read_file(path)?).map_err(|e| match e {
            ConfigError::Parse(p) => ConfigError::Invalid(format!("{}: {p}", path.display())),
            other => other,
        }),
        None => Ok(canonical_feeder()),
    }
}

/// Diagonal cost weight per kVAr: the configured one or `1 / q_max`.
pub fn cost_weight_per_kvar(scenario: &Scenario, model: &FeederModel) -> Vec<f64> {
    match &scenario.controller.cost_weight_per_kvar {
        Some(w) => w.clone(),
        None => model
            .der_buses()
            .iter()
            .map(|&b| 1.0 / model.buses()[b].der.expect("DER bus").q_max_kvar)
            .collect(),
    }
}

/// The same weight for set-points in p.u.: `M_pu = M_kvar * s_base[kVA]`,
/// so `0.5 q^T M q` has the same minimizers in either unit and the FO
/// dynamics are those of a controller working in kVAr.
pub fn cost_weight_pu(scenario: &Scenario, model: &FeederModel) -> Result<CostWeight, SimError> {
    let s_base_kva = model.base().s_base() / 1000.0;
    let entries: Vec<f64> = cost_weight_per_kvar(scenario, model)
        .iter()
        .map(|w| w * s_base_kva)
        .collect();
    Ok(CostWeight::diagonal(&entries)?)
}

pub fn der_box_pu(model: &FeederModel) -> BoxConstraint {
    let (lo, hi) = model.der_limits_pu();
    BoxConstraint::new(lo, hi).expect("validated DER limits")
}

pub fn build_controller(
    scenario: &Scenario,
    model: &FeederModel,
) -> Result<Box<dyn VoltVarController>, SimError> {
    let c = &scenario.controller;
    let bounds = der_box_pu(model);
    let m = cost_weight_pu(scenario, model)?;
    Ok(match c.strategy {
        Strategy::Fo => {
            let mut x = c.x_source.resolve(model)?;
            if c.x_perturbation > 0.0 {
                x = perturb_symmetric(&x, c.x_perturbation, c.x_perturbation_seed);
            }
            Box::new(FoController::new(FoConfig {
                alpha: c.alpha,
                x,
                m,
                limits: scenario.limits,
                bounds,
                anti_windup: c.anti_windup,
            })?)
        }
        Strategy::Droop => Box::new(DroopController::new(c.droop, bounds)?),
        Strategy::Opf => {
            let view = model
                .with_scaled_impedances(c.opf_impedance_scale)
                .map_err(ConfigError::from)?;
            Box::new(OpfDispatcher::new(
                view,
                WPerturbation {
                    unknown_buses: c.opf_unknown_buses.clone(),
                },
                scenario.limits,
                bounds,
                m,
                OpfOptions::default(),
            )?)
        }
    })
}

struct NoiseSource {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
    bound: f64,
}

impl NoiseSource {
    fn new(stddev: f64, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: (stddev > 0.0).then(|| Normal::new(0.0, stddev).expect("finite stddev")),
            bound: 4.0 * stddev,
        }
    }

    fn corrupt(&mut self, v: &[f64]) -> Vec<f64> {
        let Some(normal) = self.normal else {
            return v.to_vec();
        };
        v.iter()
            .map(|&x| loop {
                let e = normal.sample(&mut self.rng);
                if e.abs() <= self.bound {
                    break x + e;
                }
            })
            .collect()
    }
}

/// Runs the closed loop on `model`.
///
/// Every control period: apply due events, solve the plant with the
/// set-points in force, measure the DER voltages with noise, let the
/// controller (if active) compute the next set-points, record. A plant
/// failure ends the run early and is recorded in [`SimulationLog::failure`].
pub fn run(scenario: &Scenario, model: &FeederModel) -> Result<SimulationLog, SimError> {
    scenario.validate_against(model)?;
    let mut controller = build_controller(scenario, model)?;
    let pf = SolverOptions::default();
    let bounds = der_box_pu(model);
    let zero_q = bounds.clamp(&vec![0.0; model.n_ders()]);
    let base = *model.base();

    let mut log = SimulationLog {
        scenario: scenario.name.clone(),
        strategy: scenario.controller.strategy,
        control_period_s: scenario.control_period_s,
        duration_s: scenario.duration_s,
        activation_s: scenario.activation_time(),
        exogenous_event_times: scenario
            .events
            .iter()
            .filter(|e| e.is_exogenous())
            .map(|e| e.time_s)
            .collect(),
        base,
        n_buses: model.n_buses(),
        der_buses: model.der_buses().to_vec(),
        cost_weight_per_kvar: cost_weight_per_kvar(scenario, model),
        records: Vec::with_capacity(scenario.steps()),
        failure: None,
    };

    let mut noise = NoiseSource::new(scenario.noise.stddev, scenario.noise.seed);
    let mut w = crate::powerflow::Exogenous::nominal(model);
    let mut q = zero_q.clone();
    let mut active = false;
    let mut next_event = 0;

    for k in 0..scenario.steps() {
        let time_s = k as f64 * scenario.control_period_s;
        let mut labels = Vec::new();
        while let Some(event) = scenario.events.get(next_event) {
            if event.time_s > time_s + 1e-9 {
                break;
            }
            match event.kind {
                EventKind::ControllerOn => {
                    if !active {
                        controller.reset();
                        active = true;
                    }
                }
                EventKind::ControllerOff => {
                    active = false;
                    controller.reset();
                    q.clone_from(&zero_q);
                }
                _ => event.apply(model, &mut w),
            }
            labels.push(event.label());
            next_event += 1;
        }

        let solve = |q: &[f64]| {
            let inj = InjectionVector::new(model, w.clone(), q.to_vec())?;
            solve_newton(model, &inj, pf)
        };
        let op = match solve(&q) {
            Ok(op) => op,
            Err(e) => {
                log.failure = Some(RunFailure {
                    time_s,
                    message: e.to_string(),
                });
                break;
            }
        };
        let v_true = op.magnitudes();
        let der_v = voltage_magnitudes(&op, model.der_buses()).expect("converged operating point");
        let v_meas = noise.corrupt(&der_v);
        let q_in_force = q.clone();

        if active {
            let mut measured = v_meas.clone();
            for inner in 0..scenario.controller.inner_iterations {
                q = controller.step(&Measurement {
                    der_voltages: &measured,
                    exogenous: &w,
                    time_s,
                })?;
                if inner + 1 < scenario.controller.inner_iterations {
                    match solve(&q) {
                        Ok(op) => {
                            let v = voltage_magnitudes(&op, model.der_buses())
                                .expect("converged operating point");
                            measured = noise.corrupt(&v);
                        }
                        Err(e) => {
                            log.failure = Some(RunFailure {
                                time_s,
                                message: e.to_string(),
                            });
                            break;
                        }
                    }
                }
            }
        }

        let duals = controller.duals();
        log.records.push(StepRecord {
            time_s,
            v_true,
            v_meas,
            q: q_in_force,
            lambda_min: duals.map(|(l, _)| l.to_vec()),
            lambda_max: duals.map(|(_, l)| l.to_vec()),
            p_kw: (0..model.n_buses())
                .map(|b| {
                    let p = if b == model.slack() {
                        op.s[b].re
                    } else {
                        w.p[b]
                    };
                    base.pu_to_kilo(p)
                })
                .collect(),
            loss_kw: base.pu_to_kilo(line_losses(model, &op).re),
            events: labels,
            pf_iterations: op.iterations,
            pf_residual: op.residual,
            controller_active: active,
            setpoints_held: active && controller.held_setpoints(),
        });
        if log.failure.is_some() {
            break;
        }
    }
    Ok(log)
}

/// Loads the scenario's feeder and runs it.
pub fn run_scenario(scenario: &Scenario) -> Result<SimulationLog, SimError> {
    let model = load_feeder(scenario)?;
    run(scenario, &model)
}
