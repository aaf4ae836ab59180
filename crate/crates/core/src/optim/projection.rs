use nalgebra::{DMatrix, DVector};

use super::{qp::solve_dense_qp, BoxConstraint, CostWeight, OptimError};

/// Above this dimension the exact active-set enumeration gets expensive and
/// projected coordinate descent is used instead.
const ENUMERATION_LIMIT: usize = 8;

/// `argmin_{q in box} (q - q_unc)^T M (q - q_unc)`.
///
/// Points already inside the box are returned unchanged, and with a diagonal
/// `M` the result is plain elementwise clipping. The result always lies in
/// the box exactly (it is clamped after any numerical solve).
pub fn project_weighted_box(
    q_unc: &[f64],
    bounds: &BoxConstraint,
    m: &CostWeight,
) -> Result<Vec<f64>, OptimError> {
    let n = bounds.dim();
    for (what, got) in [
        ("unconstrained point", q_unc.len()),
        ("cost weight", m.dim()),
    ] {
        if got != n {
            return Err(OptimError::Dimension {
                what,
                expected: n,
                got,
            });
        }
    }
    if bounds.contains(q_unc) {
        return Ok(q_unc.to_vec());
    }
    if m.is_diagonal() {
        return Ok(bounds.clamp(q_unc));
    }
    let projected = if n <= ENUMERATION_LIMIT {
        enumerate(q_unc, bounds, m)
    } else {
        coordinate_descent(q_unc, bounds, m)
    };
    Ok(bounds.clamp(&projected))
}

fn enumerate(q_unc: &[f64], bounds: &BoxConstraint, m: &CostWeight) -> Vec<f64> {
    let n = bounds.dim();
    let h = m.matrix();
    let c = -(h * DVector::from_column_slice(q_unc));
    let mut a = DMatrix::zeros(2 * n, n);
    let mut b = DVector::zeros(2 * n);
    for i in 0..n {
        a[(i, i)] = 1.0;
        b[i] = bounds.upper()[i];
        a[(n + i, i)] = -1.0;
        b[n + i] = -bounds.lower()[i];
    }
    solve_dense_qp(h, &c, &a, &b, 1e-12)
        .map(|x| x.as_slice().to_vec())
        // The box is non-empty, so a feasible candidate always exists; fall
        // back to the iterative method if rounding rejected every one.
        .unwrap_or_else(|| coordinate_descent(q_unc, bounds, m))
}

fn coordinate_descent(q_unc: &[f64], bounds: &BoxConstraint, m: &CostWeight) -> Vec<f64> {
    let h = m.matrix();
    let n = bounds.dim();
    let mut x = bounds.clamp(q_unc);
    for _ in 0..100_000 {
        let mut largest = 0.0f64;
        for i in 0..n {
            // gradient of (x - u)^T M (x - u) / 2 along coordinate i
            let g: f64 = (0..n).map(|j| h[(i, j)] * (x[j] - q_unc[j])).sum();
            let next = (x[i] - g / h[(i, i)]).clamp(bounds.lower()[i], bounds.upper()[i]);
            largest = largest.max((next - x[i]).abs());
            x[i] = next;
        }
        if largest <= 1e-15 {
            break;
        }
    }
    x
}
