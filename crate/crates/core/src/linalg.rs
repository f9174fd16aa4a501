//! Thin helpers over `nalgebra` dense matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `a x = b` by LU decomposition with partial pivoting.
pub fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "cannot solve {}x{} system against vector of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let x = a
        .lu()
        .solve(b)
        .ok_or_else(|| Error::LinearSolve("matrix is singular".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("solution is not finite".into()));
    }
    Ok(x)
}

/// Induced infinity norm: maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

/// `sum_{i<n} r^i`, equal to `n` at `r = 1`.
pub(crate) fn geometric_sum(ratio: f64, n: usize) -> f64 {
    if (ratio - 1.0).abs() < 1e-12 {
        n as f64
    } else {
        (1.0 - ratio.powi(n as i32)) / (1.0 - ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![3.0, 5.0]);
        let x = solve(a, &b).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14);
        assert!((x[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn singular_system_is_an_error() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(solve(a, &b).is_err());
    }

    #[test]
    fn inf_norm_is_max_abs_row_sum() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.5]);
        assert_eq!(inf_norm(&m), 3.0);
    }

    #[test]
    fn geometric_sum_handles_unit_ratio() {
        assert_eq!(geometric_sum(1.0, 6), 6.0);
        assert!((geometric_sum(0.5, 3) - 1.75).abs() < 1e-15);
    }
}
