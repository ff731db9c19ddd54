//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Every solve goes through a rank-revealing SVD with a relative tolerance
//! of [`RANK_TOL`] times the largest singular value.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value tolerance used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Ridge size, relative to `trace / k`, applied to near-singular symmetric matrices.
pub const RIDGE_SCALE: f64 = 1e-8;

/// Singular values in decreasing order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Numerical rank and 2-norm condition number of `a`.
pub fn rank_and_condition(a: &DMatrix<f64>) -> (usize, f64) {
    let sv = singular_values(a);
    let max = sv.first().copied().unwrap_or(0.0);
    if max == 0.0 || !max.is_finite() {
        return (0, f64::INFINITY);
    }
    let rank = sv.iter().filter(|&&s| s > RANK_TOL * max).count();
    let min = sv.last().copied().unwrap_or(0.0);
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    (rank, cond)
}

/// Least-squares solve of `a x = b` for `a` with full column rank.
///
/// Returns the solution and the condition number of `a`.
pub fn solve_full_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, stage: &str) -> Result<(DMatrix<f64>, f64)> {
    let cols = a.ncols();
    let (rank, cond) = rank_and_condition(a);
    if rank < cols {
        return Err(Error::identification(
            stage,
            format!(
                "matrix has numerical rank {rank} but {cols} parameters; {} dimension(s) are not identified",
                cols - rank
            ),
        ));
    }
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.max();
    let x = svd
        .solve(b, RANK_TOL * max)
        .map_err(|e| Error::identification(stage, e.to_string()))?;
    Ok((x, cond))
}

/// Vector right-hand side variant of [`solve_full_rank`].
pub fn solve_vec(a: &DMatrix<f64>, b: &DVector<f64>, stage: &str) -> Result<(DVector<f64>, f64)> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let (x, cond) = solve_full_rank(a, &rhs, stage)?;
    Ok((x.column(0).into_owned(), cond))
}

/// Symmetrize in place: `(a + a^T) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let t = a.transpose();
    *a += t;
    *a *= 0.5;
}

/// Result of inverting a symmetric positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct SpdInverse {
    pub inverse: DMatrix<f64>,
    /// Ridge added to the diagonal before inversion, if any.
    pub ridge: Option<f64>,
    pub condition: f64,
}

/// Invert a symmetric PSD matrix, adding a small ridge when it is near-singular.
///
/// Fails only when the matrix is identically zero or not finite.
pub fn spd_inverse_ridged(s: &DMatrix<f64>, what: &str) -> Result<SpdInverse> {
    let k = s.nrows();
    let mut m = s.clone();
    symmetrize(&mut m);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Weight(format!("{what} has non-finite entries")));
    }
    let trace = m.trace();
    if trace <= 0.0 {
        return Err(Error::Weight(format!("{what} is zero")));
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let mut ridge = None;
    if min <= RANK_TOL * max {
        let lambda = RIDGE_SCALE * trace / k as f64;
        for i in 0..k {
            m[(i, i)] += lambda;
        }
        ridge = Some(lambda);
    }
    let (min, max) = if ridge.is_some() {
        let e = SymmetricEigen::new(m.clone()).eigenvalues;
        (e.min(), e.max())
    } else {
        (min, max)
    };
    let identity = DMatrix::<f64>::identity(k, k);
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Weight(format!("{what} is not positive definite")))?;
    let mut inverse = chol.solve(&identity);
    symmetrize(&mut inverse);
    Ok(SpdInverse {
        inverse,
        ridge,
        condition: max / min,
    })
}

/// Invert a symmetric positive definite matrix, failing on numerical singularity.
pub fn spd_inverse_strict(s: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let mut m = s.clone();
    symmetrize(&mut m);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Weight(format!("{what} has non-finite entries")));
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if max <= 0.0 || min <= RANK_TOL * max {
        return Err(Error::Weight(format!(
            "{what} is singular (eigenvalue range [{min:.3e}, {max:.3e}]); check for collinear columns"
        )));
    }
    let k = m.nrows();
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Weight(format!("{what} is not positive definite")))?;
    let mut inverse = chol.solve(&DMatrix::identity(k, k));
    symmetrize(&mut inverse);
    Ok((inverse, max / min))
}
