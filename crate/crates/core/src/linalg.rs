//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition-number guard applied before solving normal equations.
pub const MAX_CONDITION: f64 = 1e12;

/// Matrix exponential (scaling and squaring with Padé approximants up to order 13).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.exp()
}

/// Solves the continuous Lyapunov equation `A X + X Aᵀ + Q = 0`.
///
/// Uses the Kronecker form `(I ⊗ A + A ⊗ I) vec(X) = -vec(Q)`, which is exact
/// and cheap for the state dimensions used here.
pub fn lyapunov_continuous(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    if a.ncols() != p || q.nrows() != p || q.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: q.nrows(),
        });
    }
    let eye = DMatrix::<f64>::identity(p, p);
    let kron = eye.kronecker(a) + a.kronecker(&eye);
    // column-major vec
    let rhs = DVector::from_iterator(p * p, q.iter().map(|v| -v));
    let lu = kron.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Lyapunov operator is singular".into()))?;
    let x = DMatrix::from_column_slice(p, p, sol.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

/// Relative Frobenius residual of `A X + X Aᵀ + Q`.
pub fn lyapunov_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let r = a * x + x * a.transpose() + q;
    let scale = q.norm().max(f64::MIN_POSITIVE);
    r.norm() / scale
}

/// Spectral condition number of a symmetric matrix; infinite if not positive definite.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `M x = b` for symmetric positive definite `M`, refusing ill-conditioned systems.
pub fn solve_spd_guarded(m: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if m.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let cond = spd_condition(m);
    if !(cond < MAX_CONDITION) {
        return Err(Error::Singular(format!(
            "{what}: condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}"
        )));
    }
    match m.clone().cholesky() {
        Some(ch) => Ok(ch.solve(b)),
        None => m
            .clone()
            .lu()
            .solve(b)
            .ok_or_else(|| Error::Singular(what.to_string())),
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = M` for a symmetric positive semidefinite `M`.
///
/// Falls back to an eigen-decomposition (negative eigenvalues clipped to zero)
/// when the Cholesky factorization fails, e.g. for a zero or rank-deficient matrix.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return ch.l();
    }
    let eig = sym.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

/// Inverse of a general square matrix.
pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_lyapunov() {
        let a = DMatrix::from_element(1, 1, -2.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        let x = lyapunov_continuous(&a, &q).unwrap();
        assert_relative_eq!(x[(0, 0)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn lyapunov_residual_small_for_companion() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, -2.0, -2.0]);
        let mut q = DMatrix::zeros(3, 3);
        q[(2, 2)] = 1.0;
        let x = lyapunov_continuous(&a, &q).unwrap();
        assert!(lyapunov_residual(&a, &x, &q) < 1e-12);
    }

    #[test]
    fn guarded_solve_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            solve_spd_guarded(&m, &b, "test"),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn psd_factor_handles_zero() {
        let m = DMatrix::<f64>::zeros(2, 2);
        let l = psd_factor(&m);
        assert!(l.norm() == 0.0);
    }
}
