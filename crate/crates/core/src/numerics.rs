//! Dense complex linear algebra primitives and scalar root finders.
//!
//! Eigen- and singular-value decompositions are delegated to `nalgebra`; this
//! module pins down ordering, orthonormality and residual contracts on top of
//! it so the rest of the crate can rely on them.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

/// Relative asymmetry accepted by [`HermitianMatrix::new`].
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Absolute floor applied to every relative tolerance.
pub const ABS_FLOOR: f64 = 1e-14;

const EIG_EPS: f64 = 1e-15;
const EIG_MAX_ITER: usize = 10_000;

/// Square complex matrix equal to its conjugate transpose.
///
/// Construction through [`HermitianMatrix::new`] checks the asymmetry and then
/// stores the exactly symmetrized matrix, so downstream code may rely on
/// `m[(i, j)] == m[(j, i)].conj()` bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(ComplexMatrix);

impl HermitianMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let asymmetry = max_asymmetry(&m);
        let limit = (HERMITIAN_TOL * m.norm()).max(ABS_FLOOR);
        if asymmetry > limit {
            return Err(Error::NotHermitian { asymmetry, limit });
        }
        Ok(Self::symmetrized(m))
    }

    /// Returns `(m + m^H) / 2` without checking how far `m` was from Hermitian.
    ///
    /// # Panics
    /// If `m` is not square.
    pub fn symmetrized(m: ComplexMatrix) -> Self {
        assert!(m.is_square(), "Hermitian matrix must be square");
        let n = m.nrows();
        let mut out = m;
        for j in 0..n {
            out[(j, j)] = C64::new(out[(j, j)].re, 0.0);
            for i in (j + 1)..n {
                let v = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
                out[(i, j)] = v;
                out[(j, i)] = v.conj();
            }
        }
        Self(out)
    }

    pub fn zeros(n: usize) -> Self {
        Self(ComplexMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(ComplexMatrix::identity(n, n))
    }

    pub fn scaled_identity(n: usize, c: f64) -> Self {
        Self(ComplexMatrix::from_diagonal_element(n, n, C64::new(c, 0.0)))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = ComplexMatrix::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        Self(m)
    }

    /// `v v^H`.
    pub fn outer(v: &ComplexVector) -> Self {
        Self::symmetrized(v * v.adjoint())
    }

    /// `U Diag(values) U^H` for any `U` with `values.len()` columns.
    pub fn from_eigen(vectors: &ComplexMatrix, values: &[f64]) -> Self {
        assert_eq!(vectors.ncols(), values.len());
        let mut scaled = vectors.clone();
        for (j, &v) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        Self::symmetrized(&scaled * vectors.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_inner(self) -> ComplexMatrix {
        self.0
    }

    pub fn trace_re(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    /// Real part of `v^H M v`, i.e. `tr(M v v^H)`.
    pub fn quad_form(&self, v: &ComplexVector) -> f64 {
        v.dotc(&(&self.0 * v)).re
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(self.0.scale(c))
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(&self.0 - &other.0)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Self) -> Self {
        let mut out = self.0.clone();
        out.zip_apply(&other.0, |a, b| *a += b * c);
        Self(out)
    }

    /// `U^H M U` for a matrix `U` with orthonormal or arbitrary columns.
    pub fn congruence_adjoint(&self, u: &ComplexMatrix) -> Self {
        Self::symmetrized(u.adjoint() * &self.0 * u)
    }

    /// `U M U^H`.
    pub fn congruence(&self, u: &ComplexMatrix) -> Self {
        Self::symmetrized(u * &self.0 * u.adjoint())
    }

    pub fn max_asymmetry(&self) -> f64 {
        max_asymmetry(&self.0)
    }
}

impl Deref for HermitianMatrix {
    type Target = ComplexMatrix;

    fn deref(&self) -> &ComplexMatrix {
        &self.0
    }
}

/// Largest `|m_ij - conj(m_ji)|` over all entries.
pub fn max_asymmetry(m: &ComplexMatrix) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst = 0.0f64;
    for j in 0..n {
        worst = worst.max(m[(j, j)].im.abs() * 2.0);
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigen-decomposition `U Diag(values) U^H` with values sorted descending.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub vectors: ComplexMatrix,
    pub values: Vec<f64>,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> HermitianMatrix {
        HermitianMatrix::from_eigen(&self.vectors, &self.values)
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }
}

pub fn hermitian_eig(m: &HermitianMatrix) -> Result<EigenDecomposition> {
    let n = m.dim();
    if n == 0 {
        return Ok(EigenDecomposition { vectors: ComplexMatrix::zeros(0, 0), values: vec![] });
    }
    let eig = SymmetricEigen::try_new(m.as_matrix().clone(), EIG_EPS, EIG_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("Hermitian eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(EigenDecomposition { vectors, values })
}

/// Thin SVD of a tall full-column-rank matrix.
#[derive(Clone, Debug)]
pub struct CompactSvd {
    /// `rows x cols`, orthonormal columns.
    pub left_basis: ComplexMatrix,
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `cols x cols` unitary.
    pub right_basis: ComplexMatrix,
}

impl CompactSvd {
    pub fn reconstruct(&self) -> ComplexMatrix {
        let mut us = self.left_basis.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.right_basis.adjoint()
    }
}

/// Ratio `sigma_min / sigma_max` below which a channel counts as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

pub fn compact_svd(m: &ComplexMatrix) -> Result<CompactSvd> {
    let (rows, cols) = m.shape();
    if rows < cols || cols == 0 {
        return Err(Error::DimensionMismatch(format!(
            "compact SVD expects rows >= cols > 0, got {rows}x{cols}"
        )));
    }
    let svd = SVD::try_new(m.clone(), true, true, EIG_EPS, EIG_MAX_ITER)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let s_max = singular_values[0];
    let s_min = singular_values[cols - 1];
    if !(s_max > 0.0) || s_min < RANK_TOL * s_max {
        return Err(Error::RankDeficientChannel {
            ratio: if s_max > 0.0 { s_min / s_max } else { 0.0 },
        });
    }
    let left_basis = ComplexMatrix::from_fn(rows, cols, |r, c| u[(r, order[c])]);
    // v_t rows are right singular vectors (conjugated); the right basis holds them as columns.
    let right_basis = ComplexMatrix::from_fn(cols, cols, |r, c| v_t[(order[c], r)].conj());
    Ok(CompactSvd { left_basis, singular_values, right_basis })
}

/// Orthonormal basis of the null space of `m^H`, i.e. the orthogonal complement
/// of the column space of `m`.
pub fn null_space_basis(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let (rows, cols) = m.shape();
    if rows <= cols {
        return Err(Error::DimensionMismatch(format!(
            "null space of m^H needs rows > cols, got {rows}x{cols}"
        )));
    }
    let range = compact_svd(m)?.left_basis;
    // The complement projector has eigenvalue 1 with multiplicity rows - cols.
    let projector = HermitianMatrix::symmetrized(
        ComplexMatrix::identity(rows, rows) - &range * range.adjoint(),
    );
    let eig = hermitian_eig(&projector)?;
    Ok(eig.vectors.columns(0, rows - cols).into_owned())
}

/// Unique positive root of `x^3 - sigma x^2 - tau = 0` for `tau > 0`.
///
/// Newton's method started at the upper bound `max(sigma, 0) + tau^(1/3)`
/// decreases monotonically onto the root since the cubic is increasing and
/// convex there; bisection takes over if Newton stalls.
pub fn positive_cubic_root(sigma: f64, tau: f64) -> f64 {
    assert!(tau > 0.0, "positive_cubic_root needs tau > 0, got {tau}");
    let h = |x: f64| x * x * (x - sigma) - tau;
    let lower = sigma.max(0.0);
    let mut x = lower + tau.cbrt();
    let mut upper = x;
    for _ in 0..100 {
        let fx = h(x);
        if fx <= 0.0 {
            return x;
        }
        upper = x;
        let slope = x * (3.0 * x - 2.0 * sigma);
        let next = x - fx / slope;
        if !(next > lower) || !(next < x) {
            break;
        }
        if x - next <= 4.0 * f64::EPSILON * x {
            return next;
        }
        x = next;
    }
    // Fallback: h(lower) = -tau < 0 <= h(upper).
    monotone_scalar_root(h, (lower, upper), 0.0).unwrap_or(upper)
}

/// Root of a monotone function on a sign-changing bracket by bisection.
///
/// Stops once `|f| <= tol`, the bracket has shrunk to `1e-14` of its initial
/// width, or the midpoint can no longer be represented between the ends.
pub fn monotone_scalar_root<F: Fn(f64) -> f64>(f: F, bracket: (f64, f64), tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo * f_hi > 0.0 || f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::InvalidBracket { lo, hi, f_lo, f_hi });
    }
    let increasing = f_lo < 0.0;
    let min_width = 1e-14 * (hi - lo);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= min_width {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm.abs() <= tol {
            return Ok(mid);
        }
        if (fm < 0.0) == increasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Smallest `t >= 0` with `sum_i max(v_i - t, 0) <= budget`.
///
/// Exact piecewise-linear solve over the sorted breakpoints; shared by the
/// trace-budget projection and the sensing-block proximal step.
pub fn water_level(values: &[f64], budget: f64) -> f64 {
    let positive_sum: f64 = values.iter().filter(|v| **v > 0.0).sum();
    if positive_sum <= budget {
        return 0.0;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    for m in 0..sorted.len() {
        prefix += sorted[m];
        let t = (prefix - budget) / (m + 1) as f64;
        let next = sorted.get(m + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if t >= next {
            return t.max(0.0);
        }
    }
    unreachable!("water level always exists for finite values")
}

pub fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}
