use nalgebra::{DMatrix, DVector};

/// Exact solver for small strictly convex QPs
///
/// ```text
/// minimize  0.5 x^T H x + c^T x   subject to  A x <= b
/// ```
///
/// by enumerating candidate active sets. For every subset of at most `n`
/// constraint rows the equality-constrained minimizer is computed from the
/// KKT system; the cheapest primal-feasible candidate is the global optimum
/// (the optimum is the stationary point of any maximal linearly independent
/// subset of its active constraints). Subsets with dependent rows yield a
/// singular KKT matrix and are skipped.
///
/// Returns `None` when no candidate is feasible to within `feas_tol`.
/// Intended for the handful of variables a feeder has DERs; the number of
/// subsets grows combinatorially.
pub fn solve_dense_qp(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    feas_tol: f64,
) -> Option<DVector<f64>> {
    let n = h.nrows();
    let rows = a.nrows();
    let objective = |x: &DVector<f64>| 0.5 * x.dot(&(h * x)) + c.dot(x);
    let feasible =
        |x: &DVector<f64>| (0..rows).all(|r| a.row(r).dot(&x.transpose()) <= b[r] + feas_tol);

    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut subset: Vec<usize> = Vec::with_capacity(n);
    for size in 0..=n.min(rows) {
        for_each_combination(rows, size, &mut subset, &mut |active| {
            let Some(x) = stationary_point(h, c, a, b, active) else {
                return;
            };
            if !feasible(&x) {
                return;
            }
            let value = objective(&x);
            if best.as_ref().is_none_or(|(v, _)| value < *v) {
                best = Some((value, x));
            }
        });
    }
    best.map(|(_, x)| x)
}

fn stationary_point(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    active: &[usize],
) -> Option<DVector<f64>> {
    let n = h.nrows();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    let mut rhs = DVector::zeros(n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    rhs.rows_mut(0, n).copy_from(&(-c));
    for (i, &row) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + i, j)] = a[(row, j)];
            kkt[(j, n + i)] = a[(row, j)];
        }
        rhs[n + i] = b[row];
    }
    let lu = kkt.lu();
    // Dependent active rows make the KKT matrix singular; nalgebra's LU only
    // reports exact zeros, so screen near-singular pivots as well.
    let u = lu.u();
    let scale = u.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if u.diagonal()
        .iter()
        .any(|p| p.abs() <= 1e-12 * scale.max(1.0))
    {
        return None;
    }
    let solution = lu.solve(&rhs)?;
    let x = solution.rows(0, n).into_owned();
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn for_each_combination(
    n: usize,
    k: usize,
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    fn recurse(
        start: usize,
        n: usize,
        k: usize,
        current: &mut Vec<usize>,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if current.len() == k {
            visit(current);
            return;
        }
        for i in start..n {
            if n - i < k - current.len() {
                break;
            }
            current.push(i);
            recurse(i + 1, n, k, current, visit);
            current.pop();
        }
    }
    current.clear();
    recurse(0, n, k, current, visit);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_minimum() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let c = DVector::from_column_slice(&[-2.0, -4.0]);
        let a = DMatrix::zeros(0, 2);
        let b = DVector::zeros(0);
        let x = solve_dense_qp(&h, &c, &a, &b, 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_active_halfspace() {
        // min 0.5|x|^2 s.t. x0 + x1 >= 2  ->  (1, 1)
        let h = DMatrix::identity(2, 2);
        let c = DVector::zeros(2);
        let a = DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]);
        let b = DVector::from_column_slice(&[-2.0]);
        let x = solve_dense_qp(&h, &c, &a, &b, 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_returns_none() {
        let h = DMatrix::identity(1, 1);
        let c = DVector::zeros(1);
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_column_slice(&[-1.0, -1.0]);
        assert!(solve_dense_qp(&h, &c, &a, &b, 1e-12).is_none());
    }

    #[test]
    fn combinations_are_complete() {
        let mut count = 0;
        let mut buf = Vec::new();
        for k in 0..=5 {
            for_each_combination(5, k, &mut buf, &mut |_| count += 1);
        }
        assert_eq!(count, 32);
    }
}
