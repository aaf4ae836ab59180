use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{
    diverged, flat_start, mismatch, GridOperatingPoint, InjectionVector, PowerFlowError,
    SolverOptions,
};
use crate::grid::{bus_admittance, FeederModel};

/// Full Newton-Raphson in polar coordinates. Every non-slack bus is PQ.
pub fn solve_newton(
    model: &FeederModel,
    inj: &InjectionVector,
    opts: SolverOptions,
) -> Result<GridOperatingPoint, PowerFlowError> {
    let y = bus_admittance(model);
    let s_spec = inj.bus_power(model);
    let slack = model.slack();
    let pq: Vec<usize> = (0..model.n_buses()).filter(|&b| b != slack).collect();
    let npq = pq.len();

    let mut v = flat_start(model);
    let mut angle: Vec<f64> = v.iter().map(|x| x.arg()).collect();
    let mut magnitude: Vec<f64> = v.iter().map(|x| x.norm()).collect();

    for iteration in 0..=opts.max_iter {
        let residual = mismatch(&y, &v, &s_spec, slack);
        if residual <= opts.tol {
            return Ok(GridOperatingPoint::new(&y, v, residual, iteration, true));
        }
        let failed = |v: Vec<Complex64>| {
            Box::new(GridOperatingPoint::new(&y, v, residual, iteration, false))
        };
        if iteration == opts.max_iter {
            return Err(PowerFlowError::NotConverged {
                iterations: iteration,
                residual,
                last: failed(v),
            });
        }

        let current: Vec<Complex64> = (0..v.len())
            .map(|i| (0..v.len()).map(|k| y[(i, k)] * v[k]).sum())
            .collect();
        let calc: Vec<Complex64> = v
            .iter()
            .zip(&current)
            .map(|(vi, ii)| vi * ii.conj())
            .collect();

        let mut f = DVector::zeros(2 * npq);
        for (row, &i) in pq.iter().enumerate() {
            let d = calc[i] - s_spec[i];
            f[row] = d.re;
            f[npq + row] = d.im;
        }

        // dS_i/dθ_k and dS_i/d|V|_k
        let mut jac = DMatrix::zeros(2 * npq, 2 * npq);
        for (row, &i) in pq.iter().enumerate() {
            for (col, &k) in pq.iter().enumerate() {
                let unit = v[k] / magnitude[k];
                let mut d_angle = -Complex64::i() * v[i] * (y[(i, k)] * v[k]).conj();
                let mut d_mag = v[i] * (y[(i, k)] * unit).conj();
                if i == k {
                    d_angle += Complex64::i() * v[i] * current[i].conj();
                    d_mag += current[i].conj() * unit;
                }
                jac[(row, col)] = d_angle.re;
                jac[(row, npq + col)] = d_mag.re;
                jac[(npq + row, col)] = d_angle.im;
                jac[(npq + row, npq + col)] = d_mag.im;
            }
        }

        let Some(step) = jac.lu().solve(&f) else {
            return Err(PowerFlowError::SingularJacobian {
                iteration,
                last: failed(v),
            });
        };
        for (row, &i) in pq.iter().enumerate() {
            angle[i] -= step[row];
            magnitude[i] -= step[npq + row];
            v[i] = Complex64::from_polar(magnitude[i], angle[i]);
        }
        if diverged(&v) || magnitude.iter().any(|&m| m <= 0.0) {
            return Err(PowerFlowError::Diverged {
                iteration: iteration + 1,
                last: failed(v),
            });
        }
    }
    unreachable!("loop returns at max_iter")
}
