//! Dense linear-algebra helpers: deterministic symmetric eigendecomposition
//! and draws from Gaussians parameterized by their precision matrix.
//!
//! Eigenvector bases are only unique up to sign (and rotation inside repeated
//! eigenspaces), so every decomposition here is normalized under one fixed
//! convention:
//!
//! * eigenvalues sorted in descending order;
//! * within each eigenvector, the entry of largest absolute value is made
//!   positive (ties broken by the lowest index);
//! * exactly equal eigenvalues are ordered by descending lexicographic
//!   comparison of their sign-normalized eigenvectors.
//!
//! Fixing the convention makes basis matrices reproducible bit for bit across
//! runs, which the run-manifest replay contract depends on.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not symmetric: max |A - A'| entry {max_asym} exceeds {tol}")]
    NotSymmetric { max_asym: f64, tol: f64 },
    #[error("Cholesky factorization failed; condition estimate {condition:.3e}")]
    CholeskyFailed { condition: f64 },
}

/// Eigen pairs of a symmetric matrix under the crate-wide convention.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs<T> {
    /// Columns are unit-norm eigenvectors.
    pub vectors: DMatrix<T>,
    /// Matching eigenvalues, descending.
    pub values: DVector<T>,
}

/// Largest absolute off-diagonal asymmetry `max |a_ij - a_ji|`.
pub fn max_asymmetry<T: Scalar>(a: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            let d = (a[(i, j)] - a[(j, i)]).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Decompose a symmetric matrix, normalizing order and signs.
///
/// The input is symmetrized exactly as `(A + A') / 2` first; callers that
/// need an asymmetry *check* do it before calling (see
/// [`crate::basis::eigendecompose_moran`]).
pub fn symmetric_eigen<T: Scalar>(a: &DMatrix<T>) -> EigenPairs<T> {
    assert_eq!(a.nrows(), a.ncols(), "eigendecomposition needs a square matrix");
    let n = a.nrows();
    if n == 0 {
        return EigenPairs {
            vectors: DMatrix::zeros(0, 0),
            values: DVector::zeros(0),
        };
    }
    let sym = (a + a.transpose()).scale(crate::scalar::cvt::<T>(0.5));
    let eig = sym.clone().symmetric_eigen();
    let mut vectors = eig.eigenvectors;
    // The QR-based solver can leave eigenvectors mixed inside tightly
    // clustered eigenvalue groups (observed: reconstruction error up to 1e-4
    // on small regular grids). Rotating the basis until V' A V is diagonal
    // again restores machine-precision pairs; on an already-accurate
    // decomposition the sweep performs no rotations.
    let values = jacobi_refine(&sym, &mut vectors);

    for mut col in vectors.column_iter_mut() {
        let mut idx = 0;
        let mut best = T::zero();
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                idx = i;
            }
        }
        if col[idx] < T::zero() {
            col.neg_mut();
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        match values[j].partial_cmp(&values[i]).expect("finite eigenvalues") {
            std::cmp::Ordering::Equal => {
                let vi = vectors.column(i);
                let vj = vectors.column(j);
                for k in 0..n {
                    match vj[k].partial_cmp(&vi[k]).expect("finite eigenvectors") {
                        std::cmp::Ordering::Equal => continue,
                        other => return other,
                    }
                }
                std::cmp::Ordering::Equal
            }
            other => other,
        }
    });

    let sorted_vectors = DMatrix::from_columns(
        &order.iter().map(|&k| vectors.column(k).into_owned()).collect::<Vec<_>>(),
    );
    let sorted_values = DVector::from_iterator(n, order.iter().map(|&k| values[k]));
    EigenPairs {
        vectors: sorted_vectors,
        values: sorted_values,
    }
}

/// Cyclic Jacobi sweeps on `B = V' A V`, accumulating the rotations into V,
/// until B is diagonal to machine precision. Returns diag(B) as the refined
/// eigenvalues. Quadratically convergent because B starts nearly diagonal.
fn jacobi_refine<T: Scalar>(a: &DMatrix<T>, v: &mut DMatrix<T>) -> DVector<T> {
    let n = a.nrows();
    let mut b = v.transpose() * a * &*v;
    b = (&b + b.transpose()).scale(crate::scalar::cvt::<T>(0.5));
    let scale = (0..n).map(|i| b[(i, i)].abs()).fold(T::zero(), |acc, x| acc.max(x));
    let thresh =
        crate::scalar::cvt::<T>(1e-15) * scale.max(crate::scalar::cvt::<T>(f64::MIN_POSITIVE));
    for _sweep in 0..8 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let bpq = b[(p, q)];
                if bpq.abs() <= thresh {
                    continue;
                }
                rotated = true;
                // rotation angle zeroing B[p,q], the numerically stable form
                let theta = (b[(q, q)] - b[(p, p)]) / (crate::scalar::cvt::<T>(2.0) * bpq);
                let t = {
                    let denom = theta.abs() + (theta * theta + T::one()).sqrt();
                    let mag = T::one() / denom;
                    if theta < T::zero() {
                        -mag
                    } else {
                        mag
                    }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let bkp = b[(k, p)];
                    let bkq = b[(k, q)];
                    b[(k, p)] = c * bkp - s * bkq;
                    b[(k, q)] = s * bkp + c * bkq;
                }
                for k in 0..n {
                    let bpk = b[(p, k)];
                    let bqk = b[(q, k)];
                    b[(p, k)] = c * bpk - s * bqk;
                    b[(q, k)] = s * bpk + c * bqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    DVector::from_iterator(n, (0..n).map(|i| b[(i, i)]))
}

/// Condition estimate (ratio of extreme absolute eigenvalues) used in error
/// reports when a factorization fails.
pub fn condition_estimate<T: Scalar>(a: &DMatrix<T>) -> f64 {
    // Overflowed inputs have no spectrum to report; don't feed NaN into the
    // eigensolver.
    if a.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = symmetric_eigen(a);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for v in eig.values.iter() {
        let x = v.abs().to_f64().unwrap_or(f64::NAN);
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Draw from N(mean, P^-1) where `precision` = P is symmetric positive
/// definite, without forming the inverse: factor P = LL', then
/// `mean + L^-T z` has the required covariance.
pub fn gaussian_from_precision<T: Scalar, R: Rng + ?Sized>(
    mean: &DVector<T>,
    precision: &DMatrix<T>,
    rng: &mut R,
) -> Result<DVector<T>, LinalgError> {
    let k = mean.len();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let chol = precision.clone().cholesky().ok_or_else(|| LinalgError::CholeskyFailed {
        condition: condition_estimate(precision),
    })?;
    let z = DVector::from_iterator(k, (0..k).map(|_| T::standard_normal(rng)));
    let shift = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has positive diagonal");
    Ok(mean + shift)
}

/// Draw from the Gaussian given in information form: precision P and shift
/// b with mean P^-1 b. One factorization serves both the mean solve and the
/// noise `L^-T z`.
pub fn gaussian_from_information<T: Scalar, R: Rng + ?Sized>(
    precision: &DMatrix<T>,
    shift: &DVector<T>,
    rng: &mut R,
) -> Result<DVector<T>, LinalgError> {
    let k = shift.len();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let chol = precision.clone().cholesky().ok_or_else(|| LinalgError::CholeskyFailed {
        condition: condition_estimate(precision),
    })?;
    let mean = chol.solve(shift);
    let z = DVector::from_iterator(k, (0..k).map(|_| T::standard_normal(rng)));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has positive diagonal");
    Ok(mean + noise)
}

/// Solve P x = b for symmetric positive definite P via Cholesky.
pub fn spd_solve<T: Scalar>(p: &DMatrix<T>, b: &DVector<T>) -> Result<DVector<T>, LinalgError> {
    if b.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let chol = p.clone().cholesky().ok_or_else(|| LinalgError::CholeskyFailed {
        condition: condition_estimate(p),
    })?;
    Ok(chol.solve(b))
}
