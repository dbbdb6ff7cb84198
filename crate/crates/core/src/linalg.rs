//! Small dense solves for the closed-form updates. Cholesky first, LU on failure.

use nalgebra::DMatrix;

use crate::tensor::FactorMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SolveFailure {
    pub condition: f64,
}

fn to_dmatrix(m: &FactorMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.rank(), m.as_slice())
}

fn from_dmatrix(m: &DMatrix<f64>) -> FactorMatrix {
    let mut out = FactorMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.set(i, j, m[(i, j)]);
        }
    }
    out
}

/// Ratio of extreme singular values; infinite for a singular matrix.
pub(crate) fn condition_estimate(a: &FactorMatrix) -> f64 {
    let sv = to_dmatrix(a).singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Solves `a · X = rhs` for symmetric `a`.
pub(crate) fn solve_left(a: &FactorMatrix, rhs: &FactorMatrix) -> Result<FactorMatrix, SolveFailure> {
    debug_assert_eq!(a.rows(), a.rank());
    debug_assert_eq!(a.rows(), rhs.rows());
    let am = to_dmatrix(a);
    let b = to_dmatrix(rhs);
    let x = match am.clone().cholesky() {
        Some(chol) => chol.solve(&b),
        None => am.lu().solve(&b).ok_or(SolveFailure {
            condition: condition_estimate(a),
        })?,
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SolveFailure {
            condition: condition_estimate(a),
        });
    }
    Ok(from_dmatrix(&x))
}

/// Solves `X · g = rhs` for symmetric `g`, i.e. `g · Xᵀ = rhsᵀ`.
pub(crate) fn solve_right(g: &FactorMatrix, rhs: &FactorMatrix) -> Result<FactorMatrix, SolveFailure> {
    debug_assert_eq!(g.rank(), rhs.rank());
    Ok(solve_left(g, &rhs.transpose())?.transpose())
}
