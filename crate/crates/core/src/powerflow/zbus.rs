use nalgebra::{DMatrix, DVector};

use super::{
    diverged, flat_start, mismatch, GridOperatingPoint, InjectionVector, PowerFlowError,
    SolverOptions,
};
use crate::grid::{bus_admittance, FeederModel};

/// Implicit Z-bus fixed point `v <- v0 + Z conj(s / v)` on the network
/// reduced by the slack bus, where `Z` inverts the reduced admittance matrix
/// and `v0` is the no-load voltage.
pub fn solve_zbus(
    model: &FeederModel,
    inj: &InjectionVector,
    opts: SolverOptions,
) -> Result<GridOperatingPoint, PowerFlowError> {
    let y = bus_admittance(model);
    let s_spec = inj.bus_power(model);
    let slack = model.slack();
    let others: Vec<usize> = (0..model.n_buses()).filter(|&b| b != slack).collect();
    let m = others.len();
    let mut v = flat_start(model);

    let y_rr = DMatrix::from_fn(m, m, |a, b| y[(others[a], others[b])]);
    let y_rs = DVector::from_fn(m, |a, _| y[(others[a], slack)]);
    let Some(z) = y_rr.try_inverse() else {
        let residual = mismatch(&y, &v, &s_spec, slack);
        return Err(PowerFlowError::SingularJacobian {
            iteration: 0,
            last: Box::new(GridOperatingPoint::new(&y, v, residual, 0, false)),
        });
    };
    let no_load = -(&z * y_rs) * v[slack];

    for iteration in 0..=opts.max_iter {
        let residual = mismatch(&y, &v, &s_spec, slack);
        if residual <= opts.tol {
            return Ok(GridOperatingPoint::new(&y, v, residual, iteration, true));
        }
        if iteration == opts.max_iter {
            return Err(PowerFlowError::NotConverged {
                iterations: iteration,
                residual,
                last: Box::new(GridOperatingPoint::new(&y, v, residual, iteration, false)),
            });
        }
        let currents = DVector::from_fn(m, |a, _| (s_spec[others[a]] / v[others[a]]).conj());
        let next = &no_load + &z * currents;
        for (a, &bus) in others.iter().enumerate() {
            v[bus] = next[a];
        }
        if diverged(&v) {
            let residual = mismatch(&y, &v, &s_spec, slack);
            return Err(PowerFlowError::Diverged {
                iteration: iteration + 1,
                last: Box::new(GridOperatingPoint::new(
                    &y,
                    v,
                    residual,
                    iteration + 1,
                    false,
                )),
            });
        }
    }
    unreachable!("loop returns at max_iter")
}
