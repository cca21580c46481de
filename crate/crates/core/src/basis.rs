//! Spatial basis construction.
//!
//! The random-effect design is a hybrid of two ingredients:
//!
//! * the eigenvector matrix M of the Moran operator
//!   `(I - X(X'X)^-1 X') W (I - X(X'X)^-1 X')`, which encodes the source
//!   layer's neighbourhood graph after projecting out the fixed effects, and
//! * a bi-square kernel matrix R of distances from unit centroids to a fixed
//!   set of knots, `R[i, j] = (1 - (d_ij / tau)^2)^2` for `d_ij < tau` and 0
//!   otherwise.
//!
//! The product `Lambda = M * R` is an n x r basis whose coefficient prior is
//! built from the spectral decomposition of `Lambda' Q Lambda` (Q the graph
//! Laplacian). Knots live in plain coordinates, so a second, misaligned layer
//! reuses them when its own basis is assembled for prediction.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{Adjacency, ArealLayer, GeometryError};
use crate::linalg::{self, EigenPairs};
use crate::scalar::{cvt, Scalar};

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("knot placement needs at least 2 units, got {n}")]
    TooFewUnits { n: usize },
    #[error("knot fraction must lie in (0, 1], got {fraction}")]
    BadFraction { fraction: f64 },
    #[error("knot count {r} outside [1, {max}] for this layer")]
    BadKnotCount { r: usize, max: usize },
    #[error("all centroids coincide; no extent to place knots in")]
    DegenerateBbox,
    #[error("dimension mismatch: {message}")]
    Dimension { message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(
        "design matrix is rank deficient: column {column} has residual norm \
         {residual:.3e} below tolerance {tolerance:.3e}"
    )]
    RankDeficient { column: usize, residual: f64, tolerance: f64 },
    #[error("Moran operator input is asymmetric: max |A - A'| = {max_asym:.3e} exceeds {tol:.1e}")]
    NotSymmetric { max_asym: f64, tol: f64 },
    #[error("{count} units not covered by any knot (first ids: {sample:?}); increase tau or the knot count")]
    Uncovered { count: usize, sample: Vec<String>, ids: Vec<String> },
    #[error("hybrid basis annihilated: design matrix has p = {p} >= n = {n} columns")]
    Annihilated { p: usize, n: usize },
    #[error("spectral prior degenerate: basis quadratic form has no positive eigenvalues")]
    DegenerateSpectrum,
}

/// Fixed knot locations shared by the fit and prediction layers.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSet<T> {
    pub points: Vec<(T, T)>,
    /// Bi-square support radius.
    pub tau: T,
    /// Grid shape the knots were laid out on (rows x cols, last row possibly
    /// trimmed).
    pub rows: usize,
    pub cols: usize,
}

impl<T: Scalar> KnotSet<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact-match check used when a saved fit is reused for prediction:
    /// count, radius, and coordinates must all be identical.
    pub fn matches(&self, other: &KnotSet<T>) -> bool {
        self.points == other.points && self.tau == other.tau
    }
}

/// Policy for stabilizing near-singular basis quadratic forms: when the
/// smallest eigenvalue of `Lambda' Q Lambda` falls below
/// `trigger_ratio * largest`, add `relative_scale * trace / r` to the
/// diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    pub relative_scale: f64,
    pub trigger_ratio: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy { relative_scale: 1e-8, trigger_ratio: 1e-10 }
    }
}

/// Spectral form of a coefficient prior: covariance `phi * Psi diag(scale) Psi'`
/// for the scalar `phi` sampled in the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPrior<T> {
    /// Orthonormal eigenvector columns.
    pub psi: DMatrix<T>,
    /// Positive diagonal scales, one per basis column.
    pub scale: DVector<T>,
    /// Diagonal shift that was applied to the quadratic form, 0 when none.
    pub jitter: T,
}

impl<T: Scalar> SpectralPrior<T> {
    pub fn r(&self) -> usize {
        self.scale.len()
    }

    /// Quadratic form `coef' Psi diag(1/scale) Psi' coef`, the phi-free part
    /// of the prior exponent.
    pub fn quadform_inv(&self, coef: &DVector<T>) -> T {
        let u = self.psi.transpose() * coef;
        u.iter()
            .zip(self.scale.iter())
            .map(|(&ui, &si)| ui * ui / si)
            .sum()
    }

    /// Dense precision matrix `Psi diag(1/(phi * scale)) Psi'`.
    pub fn precision(&self, phi: T) -> DMatrix<T> {
        let d = DVector::from_iterator(self.r(), self.scale.iter().map(|&s| T::one() / (phi * s)));
        &self.psi * DMatrix::from_diagonal(&d) * self.psi.transpose()
    }

    /// Log determinant of the covariance `phi * Psi diag(scale) Psi'`.
    pub fn log_det(&self, phi: T) -> T {
        self.scale.iter().map(|&s| (phi * s).ln()).sum()
    }
}

/// The assembled hybrid basis for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridBasis<T> {
    /// Eigenvectors of the Moran operator (n x n), deterministic convention.
    pub moran_vectors: DMatrix<T>,
    /// Matching eigenvalues, descending.
    pub moran_values: DVector<T>,
    /// Bi-square kernel matrix (n x r), entries in [0, 1].
    pub bisquare: DMatrix<T>,
    /// Moran operator times `bisquare` (n x r): each kernel column smoothed
    /// through the covariate-adjusted neighbourhood structure.
    pub lambda: DMatrix<T>,
    /// Eigenvectors of the (jittered) `lambda' Q lambda` (r x r).
    pub psi: DMatrix<T>,
    /// Its eigenvalues, descending, strictly positive after jitter.
    pub phi: DVector<T>,
    /// Diagonal shift applied to `lambda' Q lambda`, 0 when none.
    pub jitter: T,
    pub knots: KnotSet<T>,
    /// Contiguity of the layer the basis was built on; retained so the
    /// truncated-Moran baseline can rebuild its own prior from Q.
    pub adjacency: Adjacency,
}

impl<T: Scalar> HybridBasis<T> {
    pub fn n(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn r(&self) -> usize {
        self.lambda.ncols()
    }

    /// Coefficient prior of the hybrid model: covariance `phi * Psi diag(phi_k) Psi'`.
    pub fn spectral_prior(&self) -> SpectralPrior<T> {
        SpectralPrior { psi: self.psi.clone(), scale: self.phi.clone(), jitter: self.jitter }
    }
}

/// Lay out `round(fraction * n)` knots (clamped to [1, n-1]) on a near-square
/// grid inside the bounding box of the layer's centroids.
pub fn place_knots<T: Scalar>(
    layer: &ArealLayer<T>,
    fraction: f64,
) -> Result<KnotSet<T>, BasisError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(BasisError::BadFraction { fraction });
    }
    let n = layer.n();
    if n < 2 {
        return Err(BasisError::TooFewUnits { n });
    }
    let r = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    place_knots_with_count(layer, r)
}

/// Same layout rule with the knot count given explicitly.
///
/// Knots sit at cell centers of a `ceil(sqrt(r))`-row grid (columns
/// `ceil(r / rows)`), filled row-major, inset half a cell from the centroid
/// bounding box; a final partial row spreads its knots evenly across the
/// full width so no corner is left bare. The support radius is 1.5 times
/// the coarser axis spacing, floored at 1.05 times the worst
/// centroid-to-nearest-knot distance so every centroid is always covered.
pub fn place_knots_with_count<T: Scalar>(
    layer: &ArealLayer<T>,
    r: usize,
) -> Result<KnotSet<T>, BasisError> {
    let n = layer.n();
    if n < 2 {
        return Err(BasisError::TooFewUnits { n });
    }
    if r < 1 || r >= n {
        return Err(BasisError::BadKnotCount { r, max: n - 1 });
    }

    let centroids = layer.centroids();
    let mut x0 = centroids[0].0;
    let mut x1 = centroids[0].0;
    let mut y0 = centroids[0].1;
    let mut y1 = centroids[0].1;
    for &(x, y) in &centroids[1..] {
        if x < x0 {
            x0 = x;
        }
        if x > x1 {
            x1 = x;
        }
        if y < y0 {
            y0 = y;
        }
        if y > y1 {
            y1 = y;
        }
    }
    let ex = x1 - x0;
    let ey = y1 - y0;
    if ex == T::zero() && ey == T::zero() {
        return Err(BasisError::DegenerateBbox);
    }

    let rows = (r as f64).sqrt().ceil() as usize;
    let cols = r.div_ceil(rows);
    let sx = ex / cvt::<T>(cols as f64);
    let sy = ey / cvt::<T>(rows as f64);
    let half = cvt::<T>(0.5);

    let mut points = Vec::with_capacity(r);
    for i in 0..rows {
        let remaining = r - points.len();
        let row_cols = remaining.min(cols);
        // A partial row keeps the full width by widening its own spacing.
        let row_sx = ex / cvt::<T>(row_cols as f64);
        let y = y0 + (cvt::<T>(i as f64) + half) * sy;
        for j in 0..row_cols {
            let x = x0 + (cvt::<T>(j as f64) + half) * row_sx;
            points.push((x, y));
        }
    }

    // Coarser axis spacing; a zero-extent axis contributes no spacing.
    let mut spacing = T::zero();
    if ex > T::zero() && sx > spacing {
        spacing = sx;
    }
    if ey > T::zero() && sy > spacing {
        spacing = sy;
    }
    let mut tau = cvt::<T>(1.5) * spacing;

    // Coverage floor: no centroid may sit outside every knot's support.
    let mut worst = T::zero();
    for &(cx, cy) in &centroids {
        let mut nearest = cvt::<T>(f64::INFINITY);
        for &(kx, ky) in &points {
            let (dx, dy) = (cx - kx, cy - ky);
            let d2 = dx * dx + dy * dy;
            if d2 < nearest {
                nearest = d2;
            }
        }
        if nearest > worst {
            worst = nearest;
        }
    }
    let floor = cvt::<T>(1.05) * worst.sqrt();
    if floor > tau {
        tau = floor;
    }
    Ok(KnotSet { points, tau, rows, cols })
}

/// Bi-square kernel matrix from layer centroids to knots: n x r with entries
/// `(1 - (d/tau)^2)^2` inside the support radius, exactly 0 outside.
/// A unit outside every knot's support is an error naming the unit ids.
pub fn bisquare_basis<T: Scalar>(
    layer: &ArealLayer<T>,
    knots: &KnotSet<T>,
) -> Result<DMatrix<T>, BasisError> {
    let n = layer.n();
    let r = knots.len();
    if r == 0 || !(knots.tau > T::zero()) {
        return Err(BasisError::Dimension {
            message: format!("knot set must be non-empty with positive tau, got r = {r}"),
        });
    }
    let tau2 = knots.tau * knots.tau;
    let mut m = DMatrix::zeros(n, r);
    let mut uncovered = Vec::new();
    for (i, unit) in layer.units.iter().enumerate() {
        let (cx, cy) = unit.centroid;
        let mut covered = false;
        for (j, &(kx, ky)) in knots.points.iter().enumerate() {
            let dx = cx - kx;
            let dy = cy - ky;
            let u = (dx * dx + dy * dy) / tau2;
            if u < T::one() {
                let w = T::one() - u;
                m[(i, j)] = w * w;
                covered = true;
            }
        }
        if !covered {
            uncovered.push(unit.id.clone());
        }
    }
    if !uncovered.is_empty() {
        return Err(BasisError::Uncovered {
            count: uncovered.len(),
            sample: uncovered.iter().take(5).cloned().collect(),
            ids: uncovered,
        });
    }
    Ok(m)
}

/// Moran operator `(I - H) W (I - H)` with `H = X(X'X)^-1 X'`, computed via a
/// thin QR of X (never an explicit inverse) and symmetrized exactly.
pub fn moran_operator<T: Scalar>(
    w: &DMatrix<T>,
    x: &DMatrix<T>,
) -> Result<DMatrix<T>, BasisError> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(GeometryError::NonSquareWeights { rows: n, cols: w.ncols() }.into());
    }
    if x.nrows() != n {
        return Err(BasisError::Dimension {
            message: format!("design matrix has {} rows but W is {n} x {n}", x.nrows()),
        });
    }
    check_full_column_rank(x)?;

    if x.ncols() == 0 {
        return Ok((w + w.transpose()).scale(cvt::<T>(0.5)));
    }
    let q1 = x.clone().qr().q();
    // S = W - Q1 A - A' Q1' + Q1 (Q1' A) Q1'  with A = Q1' W.
    let a = q1.transpose() * w; // p x n
    let w_q1 = w * &q1; // n x p
    let core = &a * &q1; // p x p
    let s = w - &q1 * &a - &w_q1 * q1.transpose() + &q1 * core * q1.transpose();
    Ok((&s + s.transpose()).scale(cvt::<T>(0.5)))
}

/// Greedy pivoted Gram-Schmidt rank check. Reports the first column whose
/// residual (after projecting out the columns already accepted) falls below
/// `1e-10 * ||X||_F`, i.e. a column linearly dependent on the others.
fn check_full_column_rank<T: Scalar>(x: &DMatrix<T>) -> Result<(), BasisError> {
    let p = x.ncols();
    if p == 0 {
        return Ok(());
    }
    let tol = cvt::<T>(1e-10) * x.norm();
    let mut residuals: Vec<DVector<T>> = (0..p).map(|j| x.column(j).into_owned()).collect();
    let mut remaining: Vec<usize> = (0..p).collect();
    let mut basis: Vec<DVector<T>> = Vec::with_capacity(p);

    while !remaining.is_empty() {
        let (pos, &col) = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| {
                residuals[*a.1]
                    .norm()
                    .partial_cmp(&residuals[*b.1].norm())
                    .expect("finite norms")
            })
            .expect("non-empty remaining set");
        let norm = residuals[col].norm();
        if norm <= tol {
            return Err(BasisError::RankDeficient {
                column: col,
                residual: norm.to_f64().unwrap_or(0.0),
                tolerance: tol.to_f64().unwrap_or(0.0),
            });
        }
        let q = residuals[col].scale(T::one() / norm);
        remaining.remove(pos);
        for &other in &remaining {
            let proj = q.dot(&residuals[other]);
            residuals[other] -= q.scale(proj);
        }
        basis.push(q);
    }
    Ok(())
}

/// Eigendecompose a Moran operator under the crate-wide deterministic
/// convention, rejecting inputs that are asymmetric beyond 1e-8.
pub fn eigendecompose_moran<T: Scalar>(mw: &DMatrix<T>) -> Result<EigenPairs<T>, BasisError> {
    if mw.nrows() != mw.ncols() {
        return Err(GeometryError::NonSquareWeights { rows: mw.nrows(), cols: mw.ncols() }.into());
    }
    let tol = 1e-8;
    let max_asym = linalg::max_asymmetry(mw).to_f64().unwrap_or(f64::INFINITY);
    if max_asym > tol {
        return Err(BasisError::NotSymmetric { max_asym, tol });
    }
    Ok(linalg::symmetric_eigen(mw))
}

/// Assemble the hybrid basis for a layer: bi-square kernels smoothed through
/// the Moran operator, plus the spectral form of `Lambda' Q Lambda` used by
/// the coefficient prior.
pub fn hybrid_basis<T: Scalar>(
    layer: &ArealLayer<T>,
    x: &DMatrix<T>,
    knots: &KnotSet<T>,
    policy: &JitterPolicy,
) -> Result<HybridBasis<T>, BasisError> {
    let n = layer.n();
    if x.ncols() >= n {
        // The fixed-effect projector annihilates the whole space, so the
        // Moran operator is identically zero and the basis carries no
        // information.
        return Err(BasisError::Annihilated { p: x.ncols(), n });
    }
    let s = moran_operator(&layer.w_dense(), x)?;
    let eig = eigendecompose_moran(&s)?;
    build_from_moran_operator(layer, &s, eig, knots, policy)
}

/// Core assembly, shared with the prediction path (which skips the
/// annihilation guard so that tiny target layers still work).
///
/// `lambda` is the operator applied to the kernel columns, so every basis
/// function lives in the span of the nonzero-eigenvalue Moran directions and
/// is orthogonal to the fixed-effect columns. The same knot rendered on two
/// layers yields the same spatial function, which is what lets coefficients
/// fitted on one layer predict on another.
pub(crate) fn build_from_moran_operator<T: Scalar>(
    layer: &ArealLayer<T>,
    s: &DMatrix<T>,
    eig: EigenPairs<T>,
    knots: &KnotSet<T>,
    policy: &JitterPolicy,
) -> Result<HybridBasis<T>, BasisError> {
    let r_mat = bisquare_basis(layer, knots)?;
    let mut lambda = s * &r_mat;
    // A kernel column the operator annihilates (for example a constant
    // column, which the fixed-effect projector kills whenever an intercept
    // is present) leaves only cancellation residue of order
    // eps * max|S| * max|R_j|. Snap such columns to exact zero so they carry
    // no spurious signal and the prior's zero-form fallback can fire.
    let op_scale = s.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let residue_tol = cvt::<T>(1e-14) * op_scale;
    for mut col in lambda.column_iter_mut() {
        if col.iter().all(|v| v.abs() <= residue_tol) {
            col.fill(T::zero());
        }
    }
    let prior = spectral_quadratic_form(&layer.adjacency, &lambda, policy)?;
    Ok(HybridBasis {
        moran_vectors: eig.vectors,
        moran_values: eig.values,
        bisquare: r_mat,
        lambda,
        psi: prior.0,
        phi: prior.1,
        jitter: prior.2,
        knots: knots.clone(),
        adjacency: layer.adjacency.clone(),
    })
}

/// Decompose `B' Q B` (symmetrized), applying the jitter policy. Returns
/// (eigenvectors, positive eigenvalues descending, jitter applied).
///
/// A quadratic form that is numerically zero (for example, a basis spanned by
/// vectors the Laplacian annihilates) has no trace to scale the jitter by;
/// the absolute `relative_scale` is used instead, which keeps both derived
/// priors proper: the inverted-spectrum one becomes diffuse, the direct one
/// inert next to a basis that is itself zero.
fn spectral_quadratic_form<T: Scalar>(
    adjacency: &Adjacency,
    b: &DMatrix<T>,
    policy: &JitterPolicy,
) -> Result<(DMatrix<T>, DVector<T>, T), BasisError> {
    let r = b.ncols();
    if r == 0 {
        return Ok((DMatrix::zeros(0, 0), DVector::zeros(0), T::zero()));
    }
    let qb = adjacency.apply_laplacian(b);
    let g = b.transpose() * qb;
    let mut g = (&g + g.transpose()).scale(cvt::<T>(0.5));
    // A basis the Laplacian annihilates leaves only rounding residue in G
    // (entries around machine epsilon times the representable scale
    // 2 * max_degree * max column norm squared). Snap such a G to the exact
    // zero matrix so the diffuse-prior fallback below takes over instead of
    // inverting noise.
    let col_scale = b
        .column_iter()
        .map(|c| c.norm_squared())
        .fold(T::zero(), |acc, v| acc.max(v));
    let degree_scale = (0..adjacency.n()).map(|i| adjacency.degree(i)).max().unwrap_or(0);
    let residue_tol =
        cvt::<T>(1e-14) * col_scale * cvt::<T>(2.0 * degree_scale as f64);
    if g.iter().all(|v| v.abs() <= residue_tol) {
        g.fill(T::zero());
    }
    let eig = linalg::symmetric_eigen(&g);
    let lambda_max = eig.values[0];
    let lambda_min = eig.values[r - 1];
    let needs_jitter =
        !(lambda_max > T::zero()) || lambda_min < cvt::<T>(policy.trigger_ratio) * lambda_max;
    let (scale, jitter) = if needs_jitter {
        let mean_eigenvalue = g.trace() / cvt::<T>(r as f64);
        let eps = if mean_eigenvalue > T::zero() {
            cvt::<T>(policy.relative_scale) * mean_eigenvalue
        } else {
            cvt::<T>(policy.relative_scale)
        };
        (eig.values.add_scalar(eps), eps)
    } else {
        (eig.values, T::zero())
    };
    if scale.iter().any(|v| !(*v > T::zero())) {
        return Err(BasisError::DegenerateSpectrum);
    }
    Ok((eig.vectors, scale, jitter))
}

/// Truncated Moran basis for the comparison baseline: the first q eigenvector
/// columns, with a coefficient prior of covariance
/// `phi * Psi diag(1 / phi_k) Psi'` from the spectral decomposition of
/// `M_q' Q M_q` under the same jitter policy. `q = 0` yields an empty basis
/// (a pure linear model).
pub fn truncated_moran_basis<T: Scalar>(
    basis: &HybridBasis<T>,
    q: usize,
    policy: &JitterPolicy,
) -> Result<(DMatrix<T>, SpectralPrior<T>), BasisError> {
    let n = basis.n();
    if q > n {
        return Err(BasisError::BadKnotCount { r: q, max: n });
    }
    let m_q = basis.moran_vectors.columns(0, q).into_owned();
    if q == 0 {
        return Ok((
            m_q,
            SpectralPrior {
                psi: DMatrix::zeros(0, 0),
                scale: DVector::zeros(0),
                jitter: T::zero(),
            },
        ));
    }
    let (psi, eigenvalues, jitter) = spectral_quadratic_form(&basis.adjacency, &m_q, policy)?;
    let scale = eigenvalues.map(|v| T::one() / v);
    Ok((m_q, SpectralPrior { psi, scale, jitter }))
}
