//! Reactive-power OPF over the DER set-points:
//!
//! ```text
//! minimize    0.5 q^T M q
//! subject to  v_min <= |v_h(q, w)| <= v_max   for every DER bus h
//!             q_min <= q <= q_max
//! ```
//!
//! where `|v(q, w)|` is evaluated with the nonlinear power flow.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{qp::solve_dense_qp, BoxConstraint, CostWeight, OptimError, VoltageLimits};
use crate::grid::FeederModel;
use crate::powerflow::{
    solve_newton, voltage_magnitudes, Exogenous, InjectionVector, SolverOptions,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpfOptions {
    /// Stop once the set-points move less than this (infinity norm, p.u.).
    pub step_tol: f64,
    /// Allowed true voltage violation of an accepted solution, p.u.
    pub feas_tol: f64,
    pub max_outer: usize,
    /// Finite-difference step for the voltage sensitivities, p.u.
    pub fd_step: f64,
    pub pf: SolverOptions,
}

impl Default for OpfOptions {
    fn default() -> Self {
        Self {
            step_tol: 1e-4,
            feas_tol: 1e-6,
            max_outer: 50,
            fd_step: 1e-6,
            pf: SolverOptions {
                tol: 1e-10,
                max_iter: 50,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpfPoint {
    /// Set-points per DER, p.u.
    pub q: Vec<f64>,
    /// `0.5 q^T M q`
    pub cost: f64,
    /// DER voltage magnitudes at `q`, p.u.
    pub voltages: Vec<f64>,
    pub max_violation: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpfOutcome {
    Optimal(OpfPoint),
    /// No set-point in the box meets the voltage limits; carries the
    /// minimum-violation point.
    Infeasible(OpfPoint),
}

impl OpfOutcome {
    pub fn point(&self) -> &OpfPoint {
        match self {
            Self::Optimal(p) | Self::Infeasible(p) => p,
        }
    }

    pub fn is_optimal(&self) -> bool {
        matches!(self, Self::Optimal(_))
    }
}

fn check_dims(
    model: &FeederModel,
    bounds: &BoxConstraint,
    m: &CostWeight,
) -> Result<(), OptimError> {
    let n = model.n_ders();
    for (what, got) in [("box", bounds.dim()), ("cost weight", m.dim())] {
        if got != n {
            return Err(OptimError::Dimension {
                what,
                expected: n,
                got,
            });
        }
    }
    Ok(())
}

fn der_voltages(
    model: &FeederModel,
    w: &Exogenous,
    q: &[f64],
    pf: SolverOptions,
) -> Result<Vec<f64>, OptimError> {
    let inj = InjectionVector::new(model, w.clone(), q.to_vec())?;
    let op = solve_newton(model, &inj, pf)?;
    Ok(voltage_magnitudes(&op, model.der_buses())?)
}

/// DER voltages at `q` and their forward-difference sensitivity to `q`.
fn linearize(
    model: &FeederModel,
    w: &Exogenous,
    bounds: &BoxConstraint,
    q: &[f64],
    opts: &OpfOptions,
) -> Result<(Vec<f64>, DMatrix<f64>), OptimError> {
    let v = der_voltages(model, w, q, opts.pf)?;
    let n = q.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = if q[j] + opts.fd_step <= bounds.upper()[j] {
            opts.fd_step
        } else {
            -opts.fd_step
        };
        let mut shifted = q.to_vec();
        shifted[j] += step;
        let vj = der_voltages(model, w, &shifted, opts.pf)?;
        for i in 0..n {
            jac[(i, j)] = (vj[i] - v[i]) / step;
        }
    }
    Ok((v, jac))
}

/// Linearized subproblem around `q`: voltage rows then box rows.
fn linear_constraints(
    limits: &VoltageLimits,
    bounds: &BoxConstraint,
    q: &[f64],
    v: &[f64],
    jac: &DMatrix<f64>,
    extra_cols: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = q.len();
    let offset: Vec<f64> = (0..n)
        .map(|i| v[i] - (0..n).map(|j| jac[(i, j)] * q[j]).sum::<f64>())
        .collect();
    let cols = n + extra_cols;
    let mut a = DMatrix::zeros(4 * n, cols);
    let mut b = DVector::zeros(4 * n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = jac[(i, j)];
            a[(n + i, j)] = -jac[(i, j)];
        }
        b[i] = limits.v_max - offset[i];
        b[n + i] = offset[i] - limits.v_min;
        a[(2 * n + i, i)] = 1.0;
        b[2 * n + i] = bounds.upper()[i];
        a[(3 * n + i, i)] = -1.0;
        b[3 * n + i] = -bounds.lower()[i];
    }
    (a, b)
}

/// Optimal set-points by sequential linearization: linearize the DER
/// voltages around the current set-points with finite differences on the
/// plant, solve the convex QP over the box, re-solve the power flow, repeat
/// until the set-points settle.
///
/// When the linearized problem is infeasible the iterate instead moves to
/// the point minimizing the largest linearized violation; if that persists
/// at convergence the outcome is [`OpfOutcome::Infeasible`].
pub fn opf_solve(
    model: &FeederModel,
    w: &Exogenous,
    limits: &VoltageLimits,
    bounds: &BoxConstraint,
    m: &CostWeight,
    opts: &OpfOptions,
) -> Result<OpfOutcome, OptimError> {
    check_dims(model, bounds, m)?;
    let n = model.n_ders();
    let mut q = bounds.clamp(&vec![0.0; n]);
    for iteration in 1..=opts.max_outer {
        let (v, jac) = linearize(model, w, bounds, &q, opts)?;
        let (a, b) = linear_constraints(limits, bounds, &q, &v, &jac, 0);
        let c = DVector::zeros(n);
        let (next, relaxed) = match solve_dense_qp(m.matrix(), &c, &a, &b, 1e-12) {
            Some(x) => (x.as_slice().to_vec(), false),
            None => (min_violation_step(limits, bounds, m, &q, &v, &jac), true),
        };
        let next = bounds.clamp(&next);
        let step = next
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = next;
        let voltages = der_voltages(model, w, &q, opts.pf)?;
        let max_violation = limits.violation(&voltages);
        if step < opts.step_tol && (relaxed || max_violation <= opts.feas_tol) {
            let point = OpfPoint {
                cost: m.cost(&q),
                q,
                voltages,
                max_violation,
                iterations: iteration,
            };
            return Ok(if max_violation <= opts.feas_tol {
                OpfOutcome::Optimal(point)
            } else {
                OpfOutcome::Infeasible(point)
            });
        }
    }
    Err(OptimError::NotConverged(opts.max_outer))
}

/// Minimizes `s^2 + eps * 0.5 q^T M q` subject to the linearized band
/// widened by `s >= 0`.
fn min_violation_step(
    limits: &VoltageLimits,
    bounds: &BoxConstraint,
    m: &CostWeight,
    q: &[f64],
    v: &[f64],
    jac: &DMatrix<f64>,
) -> Vec<f64> {
    let n = q.len();
    let (mut a, mut b) = linear_constraints(limits, bounds, q, v, jac, 1);
    for i in 0..2 * n {
        a[(i, n)] = -1.0;
    }
    a = a.insert_row(4 * n, 0.0);
    a[(4 * n, n)] = -1.0;
    b = b.insert_row(4 * n, 0.0);
    let mut h = DMatrix::zeros(n + 1, n + 1);
    h.view_mut((0, 0), (n, n)).copy_from(&(m.matrix() * 1e-6));
    h[(n, n)] = 2.0;
    let c = DVector::zeros(n + 1);
    solve_dense_qp(&h, &c, &a, &b, 1e-12)
        .map(|x| x.rows(0, n).iter().copied().collect())
        .unwrap_or_else(|| q.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Lattice spacing, p.u.
    pub resolution: f64,
    /// Candidates whose linearized violation exceeds this are skipped
    /// without a power-flow solve. `None` derives it from the worst
    /// linearization error seen at the box vertices.
    pub prune_margin: Option<f64>,
    pub pf: SolverOptions,
    /// Upper bound on enumerated lattice points.
    pub max_points: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            resolution: 1e-3,
            prune_margin: None,
            pf: SolverOptions {
                tol: 1e-10,
                max_iter: 50,
            },
            max_points: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Cheapest feasible lattice point, `None` if the lattice holds none.
    pub best: Option<OpfPoint>,
    pub lattice_points: u64,
    pub pruned: u64,
    pub solved: u64,
    pub pf_failures: u64,
    pub prune_margin: f64,
}

/// Exhaustive search over the lattice of integer multiples of the
/// resolution inside the box.
///
/// Candidates are visited in order of increasing cost (ties broken by the
/// lexicographically smallest set-point vector); the first one whose
/// nonlinear power flow meets the voltage band is returned. Points whose
/// linearized voltages miss the band by more than the pruning margin are
/// skipped without a solve. Failed power flows are counted and skipped.
pub fn opf_grid_oracle(
    model: &FeederModel,
    w: &Exogenous,
    limits: &VoltageLimits,
    bounds: &BoxConstraint,
    m: &CostWeight,
    opts: &OracleOptions,
) -> Result<OracleResult, OptimError> {
    check_dims(model, bounds, m)?;
    let n = model.n_ders();
    if n > 4 {
        return Err(OptimError::OracleDimension(n));
    }
    if !(opts.resolution.is_finite() && opts.resolution > 0.0) {
        return Err(OptimError::InvalidResolution(opts.resolution));
    }
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| lattice_axis(bounds.lower()[i], bounds.upper()[i], opts.resolution))
        .collect();
    let total = axes.iter().map(|a| a.len() as u64).product::<u64>();
    if total > opts.max_points {
        return Err(OptimError::LatticeTooLarge(total));
    }
    let decode = |mut index: u64, out: &mut [f64]| {
        for d in (0..n).rev() {
            let len = axes[d].len() as u64;
            out[d] = axes[d][(index % len) as usize];
            index /= len;
        }
    };

    let mut order: Vec<(f64, u64)> = (0..total)
        .into_par_iter()
        .map(|index| {
            let mut q = [0.0; 4];
            decode(index, &mut q[..n]);
            (m.cost(&q[..n]), index)
        })
        .collect();
    // The mixed-radix index increases with the lexicographic order of q.
    order.par_sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let lin_opts = OpfOptions {
        pf: opts.pf,
        ..OpfOptions::default()
    };
    let center = bounds.clamp(&vec![0.0; n]);
    let (v0, jac) = linearize(model, w, bounds, &center, &lin_opts)?;
    let predict = |q: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                v0[i]
                    + (0..n)
                        .map(|j| jac[(i, j)] * (q[j] - center[j]))
                        .sum::<f64>()
            })
            .collect()
    };
    let prune_margin = match opts.prune_margin {
        Some(margin) => margin,
        None => {
            let mut worst = 0.0f64;
            for corner in 0..(1u32 << n) {
                let q: Vec<f64> = (0..n)
                    .map(|i| {
                        if corner & (1 << i) == 0 {
                            bounds.lower()[i]
                        } else {
                            bounds.upper()[i]
                        }
                    })
                    .collect();
                if let Ok(exact) = der_voltages(model, w, &q, opts.pf) {
                    for (e, p) in exact.iter().zip(predict(&q)) {
                        worst = worst.max((e - p).abs());
                    }
                }
            }
            (3.0 * worst).max(1e-3)
        }
    };

    let mut result = OracleResult {
        best: None,
        lattice_points: total,
        pruned: 0,
        solved: 0,
        pf_failures: 0,
        prune_margin,
    };
    let mut q = vec![0.0; n];
    for &(cost, index) in &order {
        decode(index, &mut q);
        if limits.violation(&predict(&q)) > prune_margin {
            result.pruned += 1;
            continue;
        }
        result.solved += 1;
        let voltages = match der_voltages(model, w, &q, opts.pf) {
            Ok(v) => v,
            Err(_) => {
                result.pf_failures += 1;
                continue;
            }
        };
        let max_violation = limits.violation(&voltages);
        if max_violation == 0.0 {
            result.best = Some(OpfPoint {
                q: q.clone(),
                cost,
                voltages,
                max_violation,
                iterations: 0,
            });
            break;
        }
    }
    Ok(result)
}

fn lattice_axis(lower: f64, upper: f64, resolution: f64) -> Vec<f64> {
    let first = (lower / resolution - 1e-9).ceil() as i64;
    let last = (upper / resolution + 1e-9).floor() as i64;
    (first..=last)
        .map(|k| (k as f64 * resolution).clamp(lower, upper))
        .collect()
}

/// Bound on `|f(q + d) - f(q)|` over `|d|_inf <= resolution` for
/// `f(q) = 0.5 q^T M q`.
pub fn lattice_cell_cost_bound(m: &CostWeight, q: &[f64], resolution: f64) -> f64 {
    let mm = m.matrix();
    let n = q.len();
    let gradient: f64 = (0..n)
        .map(|i| (0..n).map(|j| mm[(i, j)] * q[j]).sum::<f64>().abs())
        .sum();
    let curvature: f64 = mm.iter().map(|v| v.abs()).sum();
    gradient * resolution + 0.5 * resolution * resolution * curvature
}
