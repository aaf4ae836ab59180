//! The physical plant: steady-state AC power flow on a [`FeederModel`].
//!
//! Two independent solvers are provided. [`solve_newton`] is the one the
//! simulator uses; [`solve_zbus`] is a fixed-point iteration kept as a
//! cross-check. Both accept an [`InjectionVector`] in p.u. with generator
//! sign convention (positive = injected into the grid) and start from a flat
//! voltage profile.

mod newton;
mod zbus;

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::grid::{self, FeederModel};

pub use newton::solve_newton;
pub use zbus::solve_zbus;

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("{what}: expected {expected} entries, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(
        "power flow did not converge in {iterations} iterations (residual {residual:.3e} p.u.)"
    )]
    NotConverged {
        iterations: usize,
        residual: f64,
        last: Box<GridOperatingPoint>,
    },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian {
        iteration: usize,
        last: Box<GridOperatingPoint>,
    },
    #[error("power flow iterate diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last: Box<GridOperatingPoint>,
    },
    #[error("operating point is not converged")]
    Unconverged,
}

impl PowerFlowError {
    /// Last iterate of a failed solve, if any.
    pub fn last_iterate(&self) -> Option<&GridOperatingPoint> {
        match self {
            Self::NotConverged { last, .. }
            | Self::SingularJacobian { last, .. }
            | Self::Diverged { last, .. } => Some(last),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Maximum complex power mismatch at any PQ bus, p.u.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

/// Uncontrolled injections per bus, p.u. (all active power plus any
/// reactive power not set by a controller). Slack entries are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Exogenous {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Exogenous {
    pub fn zeros(n_buses: usize) -> Self {
        Self {
            p: vec![0.0; n_buses],
            q: vec![0.0; n_buses],
        }
    }

    /// The nominal injections declared on the feeder's buses.
    pub fn nominal(model: &FeederModel) -> Self {
        let (p, q) = grid::nominal_injections(model);
        Self {
            p: p.as_slice().to_vec(),
            q: q.as_slice().to_vec(),
        }
    }
}

/// Full injection specification: exogenous `w` plus DER set-points `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector {
    pub exogenous: Exogenous,
    /// Reactive set-point per controllable DER, in [`FeederModel::der_buses`] order.
    pub setpoints: Vec<f64>,
}

impl InjectionVector {
    pub fn new(
        model: &FeederModel,
        exogenous: Exogenous,
        setpoints: Vec<f64>,
    ) -> Result<Self, PowerFlowError> {
        let n = model.n_buses();
        for (what, got) in [
            ("exogenous active power", exogenous.p.len()),
            ("exogenous reactive power", exogenous.q.len()),
        ] {
            if got != n {
                return Err(PowerFlowError::Dimension {
                    what,
                    expected: n,
                    got,
                });
            }
        }
        if setpoints.len() != model.n_ders() {
            return Err(PowerFlowError::Dimension {
                what: "DER set-points",
                expected: model.n_ders(),
                got: setpoints.len(),
            });
        }
        Ok(Self {
            exogenous,
            setpoints,
        })
    }

    /// No load, no generation, zero set-points.
    pub fn zero(model: &FeederModel) -> Self {
        Self {
            exogenous: Exogenous::zeros(model.n_buses()),
            setpoints: vec![0.0; model.n_ders()],
        }
    }

    /// Complex power injection per bus.
    pub fn bus_power(&self, model: &FeederModel) -> Vec<Complex64> {
        let mut s: Vec<Complex64> = self
            .exogenous
            .p
            .iter()
            .zip(&self.exogenous.q)
            .map(|(&p, &q)| Complex64::new(p, q))
            .collect();
        for (&bus, &q) in model.der_buses().iter().zip(&self.setpoints) {
            s[bus].im += q;
        }
        s[model.slack()] = Complex64::new(0.0, 0.0);
        s
    }
}

/// Steady-state solution (or last iterate) of the power-flow equations.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOperatingPoint {
    /// Complex bus voltages, p.u.
    pub v: Vec<Complex64>,
    /// Complex bus injections `V * conj(Y V)`, p.u. The slack entry is the
    /// power drawn from the upstream grid.
    pub s: Vec<Complex64>,
    pub converged: bool,
    pub iterations: usize,
    /// Maximum complex power mismatch over PQ buses, p.u.
    pub residual: f64,
}

impl GridOperatingPoint {
    pub(crate) fn new(
        y: &DMatrix<Complex64>,
        v: Vec<Complex64>,
        residual: f64,
        iterations: usize,
        converged: bool,
    ) -> Self {
        let s = injections(y, &v);
        Self {
            v,
            s,
            converged,
            iterations,
            residual,
        }
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.norm()).collect()
    }
}

/// Magnitudes of the listed buses, in the given order.
pub fn voltage_magnitudes(
    op: &GridOperatingPoint,
    buses: &[usize],
) -> Result<Vec<f64>, PowerFlowError> {
    if !op.converged {
        return Err(PowerFlowError::Unconverged);
    }
    buses
        .iter()
        .map(|&b| {
            op.v.get(b)
                .map(|v| v.norm())
                .ok_or(PowerFlowError::Dimension {
                    what: "bus index",
                    expected: op.v.len(),
                    got: b + 1,
                })
        })
        .collect()
}

/// `V * conj(Y V)` for every bus.
pub fn injections(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let current: Complex64 = (0..n).map(|k| y[(i, k)] * v[k]).sum();
            v[i] * current.conj()
        })
        .collect()
}

/// Solver-independent residual: `max |S_spec - V conj(Y V)|` over every bus
/// except the slack.
pub fn mismatch(
    y: &DMatrix<Complex64>,
    v: &[Complex64],
    s_spec: &[Complex64],
    slack: usize,
) -> f64 {
    injections(y, v)
        .iter()
        .zip(s_spec)
        .enumerate()
        .filter(|(i, _)| *i != slack)
        .map(|(_, (calc, spec))| (spec - calc).norm())
        .fold(0.0, f64::max)
}

/// Total series losses, p.u., computed from branch currents.
pub fn line_losses(model: &FeederModel, op: &GridOperatingPoint) -> Complex64 {
    let base = model.base();
    model
        .lines()
        .iter()
        .map(|line| {
            let z = Complex64::new(base.ohm_to_pu(line.r_ohm), base.ohm_to_pu(line.x_ohm));
            let current = (op.v[line.from] - op.v[line.to]) / z;
            z * current.norm_sqr()
        })
        .sum()
}

fn flat_start(model: &FeederModel) -> Vec<Complex64> {
    vec![Complex64::new(model.slack_voltage(), 0.0); model.n_buses()]
}

fn diverged(v: &[Complex64]) -> bool {
    v.iter()
        .any(|x| !x.re.is_finite() || !x.im.is_finite() || x.norm() > 10.0 || x.norm() < 1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{bus_admittance, canonical_feeder, Bus, Line, PerUnitBase};

    fn two_bus(r: f64, x: f64) -> FeederModel {
        FeederModel::new(
            vec![Bus::slack(0, "s"), Bus::pq(1, "load")],
            vec![Line::new(0, 1, r, x)],
            PerUnitBase::new(1.0, 1.0).unwrap(),
            true,
        )
        .unwrap()
    }

    /// Closed-form receiving-end voltage for a load `p + jq` (consumption)
    /// fed through `r + jx` from a 1.0 p.u. source, high-voltage branch.
    fn two_bus_oracle(r: f64, x: f64, p: f64, q: f64) -> Option<f64> {
        let b = 1.0 - 2.0 * (r * p + x * q);
        let disc = b * b - 4.0 * (r * r + x * x) * (p * p + q * q);
        (disc >= 0.0).then(|| ((b + disc.sqrt()) / 2.0).sqrt())
    }

    fn load(model: &FeederModel, p: f64, q: f64) -> InjectionVector {
        let mut w = Exogenous::zeros(model.n_buses());
        w.p[1] = -p;
        w.q[1] = -q;
        InjectionVector::new(model, w, vec![]).unwrap()
    }

    #[test]
    fn no_load_is_flat() {
        let model = canonical_feeder();
        let inj = InjectionVector::zero(&model);
        for op in [
            solve_newton(&model, &inj, SolverOptions::default()).unwrap(),
            solve_zbus(&model, &inj, SolverOptions::default()).unwrap(),
        ] {
            assert!(op.iterations <= 1);
            for v in op.magnitudes() {
                assert_eq!(v, model.slack_voltage());
            }
        }
    }

    #[test]
    fn two_bus_matches_closed_form() {
        let opts = SolverOptions {
            tol: 1e-13,
            max_iter: 50,
        };
        let (r, x) = (0.05, 0.08);
        let model = two_bus(r, x);
        for (p, q) in [(0.5, 0.2), (1.0, 0.0), (2.0, 1.0), (0.3, -0.4)] {
            let expected = two_bus_oracle(r, x, p, q).unwrap();
            let inj = load(&model, p, q);
            let newton = solve_newton(&model, &inj, opts).unwrap();
            let zbus = solve_zbus(
                &model,
                &inj,
                SolverOptions {
                    max_iter: 500,
                    ..opts
                },
            )
            .unwrap();
            assert!((newton.v[1].norm() - expected).abs() < 1e-10);
            assert!((zbus.v[1].norm() - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn beyond_nose_point_both_fail() {
        let (r, x) = (0.05, 0.08);
        let model = two_bus(r, x);
        let (p, q) = (5.0, 2.0);
        assert!(two_bus_oracle(r, x, p, q).is_none());
        let inj = load(&model, p, q);
        let opts = SolverOptions::default();
        let newton = solve_newton(&model, &inj, opts).unwrap_err();
        let zbus = solve_zbus(&model, &inj, opts).unwrap_err();
        assert!(newton.last_iterate().is_some());
        assert!(zbus.last_iterate().is_some());
        assert!(!newton.last_iterate().unwrap().converged);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let model = canonical_feeder();
        let err = InjectionVector::new(&model, Exogenous::zeros(5), vec![0.0]).unwrap_err();
        assert!(matches!(err, PowerFlowError::Dimension { .. }));
        let err = InjectionVector::new(&model, Exogenous::zeros(4), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, PowerFlowError::Dimension { .. }));
    }

    #[test]
    fn unconverged_point_has_no_magnitudes() {
        let model = two_bus(0.05, 0.08);
        let err =
            solve_newton(&model, &load(&model, 5.0, 2.0), SolverOptions::default()).unwrap_err();
        let last = err.last_iterate().unwrap();
        assert!(matches!(
            voltage_magnitudes(last, &[1]),
            Err(PowerFlowError::Unconverged)
        ));
    }

    #[test]
    fn magnitudes_follow_requested_order() {
        let model = canonical_feeder();
        let inj = InjectionVector::new(&model, Exogenous::nominal(&model), vec![0.0; 3]).unwrap();
        let op = solve_newton(&model, &inj, SolverOptions::default()).unwrap();
        let forward = voltage_magnitudes(&op, &[2, 3, 4]).unwrap();
        let backward = voltage_magnitudes(&op, &[4, 3, 2]).unwrap();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn canonical_overvoltage_profile() {
        let model = canonical_feeder();
        let inj = InjectionVector::new(&model, Exogenous::nominal(&model), vec![0.0; 3]).unwrap();
        let op = solve_newton(&model, &inj, SolverOptions::default()).unwrap();
        let v = op.magnitudes();
        // battery > PV2 > PV1 = load along the exporting branch
        assert!(v[4] > 1.05);
        assert!(v[4] > v[3] && v[3] > v[2] && v[2] >= v[1] - 1e-12);
        let zbus = solve_zbus(&model, &inj, SolverOptions::default()).unwrap();
        for (a, b) in op.v.iter().zip(&zbus.v) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn residual_and_conservation_hold() {
        let model = canonical_feeder();
        let y = bus_admittance(&model);
        let inj =
            InjectionVector::new(&model, Exogenous::nominal(&model), vec![-0.03, 0.02, -0.08])
                .unwrap();
        let opts = SolverOptions::default();
        let op = solve_newton(&model, &inj, opts).unwrap();
        let spec = inj.bus_power(&model);
        assert!(mismatch(&y, &op.v, &spec, model.slack()) <= opts.tol);
        let net: Complex64 = op.s.iter().sum();
        let losses = line_losses(&model, &op);
        assert!((net - losses).norm() < 1e-12);
        assert!(losses.re > 0.0);
    }

    #[test]
    fn per_unit_base_change_is_invisible() {
        let model = canonical_feeder();
        let rebased_file = crate::grid::CANONICAL_FEEDER_TOML.replace("100000.0", "250000.0");
        let rebased = crate::grid::parse_feeder(&rebased_file).unwrap();
        let solve = |m: &FeederModel| {
            let w = Exogenous::nominal(m);
            let q: Vec<f64> = [-2.0, 1.5, -4.0]
                .iter()
                .map(|&kvar| m.base().kilo_to_pu(kvar))
                .collect();
            let inj = InjectionVector::new(m, w, q).unwrap();
            solve_newton(
                m,
                &inj,
                SolverOptions {
                    tol: 1e-12,
                    max_iter: 50,
                },
            )
            .unwrap()
            .magnitudes()
        };
        for (a, b) in solve(&model).iter().zip(solve(&rebased)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
