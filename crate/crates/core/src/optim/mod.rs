//! Optimization kernels shared by the controllers.
//!
//! All vectors here are in p.u.; kVAr only appears at the file and CLI
//! boundary.

mod opf;
mod projection;
mod qp;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::powerflow::PowerFlowError;

pub use opf::{
    lattice_cell_cost_bound, opf_grid_oracle, opf_solve, OpfOptions, OpfOutcome, OpfPoint,
    OracleOptions, OracleResult,
};
pub use projection::project_weighted_box;
pub use qp::solve_dense_qp;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("cost weight is not square and exactly symmetric")]
    NotSymmetric,
    #[error("cost weight is not positive definite")]
    NotPositiveDefinite,
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid voltage limits [{v_min}, {v_max}]")]
    InvalidLimits { v_min: f64, v_max: f64 },
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("sequential linearization did not settle after {0} iterations")]
    NotConverged(usize),
    #[error("lattice oracle supports at most 4 dimensions, got {0}")]
    OracleDimension(usize),
    #[error("lattice resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error("lattice has {0} points, above the enumeration limit")]
    LatticeTooLarge(u64),
}

/// Elementwise bounds `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraint {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxConstraint {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OptimError> {
        if lower.len() != upper.len() {
            return Err(OptimError::InvalidBox(format!(
                "{} lower bounds but {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(OptimError::InvalidBox(format!("entry {i}: [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    pub fn at_lower(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lower).all(|(v, lo)| v == lo)
    }

    pub fn at_upper(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.upper).all(|(v, hi)| v == hi)
    }
}

/// Weight `M` of the actuation cost `0.5 q^T M q`.
#[derive(Debug, Clone)]
pub struct CostWeight {
    m: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    diagonal: bool,
}

impl CostWeight {
    pub fn new(m: DMatrix<f64>) -> Result<Self, OptimError> {
        if !m.is_square() || m != m.transpose() {
            return Err(OptimError::NotSymmetric);
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(OptimError::NotPositiveDefinite);
        }
        let chol = m
            .clone()
            .cholesky()
            .ok_or(OptimError::NotPositiveDefinite)?;
        let n = m.nrows();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0));
        Ok(Self { m, chol, diagonal })
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self, OptimError> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(entries)))
    }

    /// `diag(1 / q_max)`: each DER's effort is measured relative to its
    /// capability. The unit of `q_max` fixes the unit of the set-points the
    /// controller produces.
    pub fn inverse_limits(q_max: &[f64]) -> Result<Self, OptimError> {
        let entries: Vec<f64> = q_max.iter().map(|q| 1.0 / q).collect();
        Self::diagonal(&entries)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// `M^{-1} rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// `0.5 q^T M q`.
    pub fn cost(&self, q: &[f64]) -> f64 {
        0.5 * self.norm_sq(q)
    }

    /// `d^T M d`.
    pub fn norm_sq(&self, d: &[f64]) -> f64 {
        let n = self.dim();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += d[i] * self.m[(i, j)] * d[j];
            }
        }
        total
    }

    /// Same weight in a set-point unit `factor` times larger than the
    /// current one, keeping `diag(1/q_max)`-style weights consistent:
    /// `M' = M * factor`.
    pub fn rescaled(&self, factor: f64) -> Result<Self, OptimError> {
        Self::new(&self.m * factor)
    }
}

/// Voltage band imposed on DER buses, p.u.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageLimits {
    pub v_min: f64,
    pub v_max: f64,
}

impl VoltageLimits {
    pub fn new(v_min: f64, v_max: f64) -> Result<Self, OptimError> {
        if !(v_min.is_finite() && v_max.is_finite() && 0.0 < v_min && v_min < v_max) {
            return Err(OptimError::InvalidLimits { v_min, v_max });
        }
        Ok(Self { v_min, v_max })
    }

    /// Largest amount by which any entry leaves the band, zero if none.
    pub fn violation(&self, v: &[f64]) -> f64 {
        v.iter()
            .map(|&x| (x - self.v_max).max(self.v_min - x).max(0.0))
            .fold(0.0, f64::max)
    }
}

impl Default for VoltageLimits {
    fn default() -> Self {
        Self {
            v_min: 0.95,
            v_max: 1.05,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_validation() {
        assert!(BoxConstraint::new(vec![0.0], vec![1.0, 2.0]).is_err());
        assert!(BoxConstraint::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxConstraint::new(vec![f64::NAN], vec![0.0]).is_err());
        let b = BoxConstraint::new(vec![-1.0, -2.0], vec![1.0, 2.0]).unwrap();
        assert!(b.contains(&[1.0, -2.0]));
        assert!(!b.contains(&[1.0 + 1e-15, 0.0]));
        assert_eq!(b.clamp(&[3.0, -3.0]), vec![1.0, -2.0]);
        assert!(b.at_lower(&[-1.0, -2.0]));
        assert!(!b.at_lower(&[-1.0, -1.999]));
    }

    #[test]
    fn cost_weight_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 1.0]);
        assert!(matches!(
            CostWeight::new(asym),
            Err(OptimError::NotSymmetric)
        ));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            CostWeight::new(indefinite),
            Err(OptimError::NotPositiveDefinite)
        ));
        let m = CostWeight::inverse_limits(&[6.0, 6.0, 8.0]).unwrap();
        assert!(m.is_diagonal());
        assert_eq!(m.cost(&[6.0, 0.0, 8.0]), 0.5 * (6.0 + 8.0));
        let full = CostWeight::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        assert!(!full.is_diagonal());
    }

    #[test]
    fn violation_measure() {
        let limits = VoltageLimits::default();
        assert_eq!(limits.violation(&[0.97, 1.0, 1.05]), 0.0);
        assert!((limits.violation(&[0.94, 1.06]) - 0.01).abs() < 1e-12);
        assert!(VoltageLimits::new(1.05, 0.95).is_err());
    }
}
