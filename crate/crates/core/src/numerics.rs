//! Dense linear-algebra kernels: orthonormalization, least squares,
//! singular values and orthogonal projection.
//!
//! Everything is `f64` and backed by `nalgebra` dense storage. Least squares
//! goes through a Householder QR factorization rather than the normal
//! equations, so its accuracy degrades with `cond(B)` and not `cond(B)^2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Maximum `||B^T B - I||_F` accepted by [`OrthonormalBasis::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Relative singular-value floor used by [`orthonormalize`].
pub const ORTHONORMALIZE_RANK_TOL: f64 = 1e-12;

/// Relative singular-value floor used by [`least_squares`].
pub const LEAST_SQUARES_RANK_TOL: f64 = 1e-10;

/// An `n x d` matrix with orthonormal columns, `d <= n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    columns: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Wraps `columns`, checking finiteness, shape and orthonormality
    /// against [`ORTHONORMAL_TOL`].
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(columns, ORTHONORMAL_TOL)
    }

    pub fn with_tolerance(columns: DMatrix<f64>, tol: f64) -> Result<Self> {
        let (n, d) = columns.shape();
        if n == 0 || d == 0 || d > n {
            return Err(Error::dims("n >= d >= 1", format!("{n}x{d}")));
        }
        if columns.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let deviation = orthonormality_error(&columns);
        if deviation > tol {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { columns })
    }

    /// The first `d` columns of the `n x n` identity.
    pub fn canonical(n: usize, d: usize) -> Result<Self> {
        if d == 0 || d > n {
            return Err(Error::dims("n >= d >= 1", format!("{n}x{d}")));
        }
        Ok(Self {
            columns: DMatrix::identity(n, d),
        })
    }

    /// Skips the orthonormality check. Callers guarantee the invariant up to
    /// floating-point drift.
    pub(crate) fn from_raw(columns: DMatrix<f64>) -> Self {
        Self { columns }
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.columns
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.columns
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.columns)
    }
}

impl AsRef<DMatrix<f64>> for OrthonormalBasis {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.columns
    }
}

/// `||M^T M - I||_F`.
pub fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let mut gram = m.tr_mul(m);
    for i in 0..gram.nrows() {
        gram[(i, i)] -= 1.0;
    }
    gram.norm()
}

/// Orthonormal basis for the column span of `m`, via Householder QR.
///
/// Column signs are normalized so that the triangular factor has a positive
/// diagonal; an input that is already orthonormal therefore comes back
/// unchanged up to rounding.
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<OrthonormalBasis> {
    orthonormalize_with_tolerance(m, ORTHONORMALIZE_RANK_TOL)
}

pub fn orthonormalize_with_tolerance(m: &DMatrix<f64>, rank_tol: f64) -> Result<OrthonormalBasis> {
    let (n, d) = m.shape();
    if n == 0 || d == 0 {
        return Err(Error::dims("non-empty matrix", format!("{n}x{d}")));
    }
    if d > n {
        return Err(Error::RankDeficient { ratio: 0.0 });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let qr = m.clone().qr();
    let r = qr.r();
    check_rank(&r, rank_tol)?;
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(OrthonormalBasis::from_raw(q))
}

/// Least-squares solver with a configurable relative rank floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeastSquares {
    rank_tol: f64,
}

impl Default for LeastSquares {
    fn default() -> Self {
        Self {
            rank_tol: LEAST_SQUARES_RANK_TOL,
        }
    }
}

impl LeastSquares {
    pub fn new(rank_tol: f64) -> Self {
        Self { rank_tol }
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// The unique minimizer of `||B w - x||_2`.
    ///
    /// Fails with [`Error::RankDeficient`] when `B` has fewer rows than
    /// columns or its singular-value ratio is at or below the rank floor.
    pub fn solve(&self, b: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, d) = b.shape();
        if x.len() != m {
            return Err(Error::dims(format!("rhs of length {m}"), x.len()));
        }
        if d == 0 {
            return Err(Error::dims("at least one column", 0));
        }
        if m < d {
            return Err(Error::RankDeficient { ratio: 0.0 });
        }
        if b.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let qr = b.clone().qr();
        let r = qr.r();
        check_rank(&r, self.rank_tol)?;
        let mut qtx = x.clone();
        qr.q_tr_mul(&mut qtx);
        let rhs = qtx.rows(0, d).into_owned();
        r.solve_upper_triangular(&rhs)
            .ok_or(Error::RankDeficient { ratio: 0.0 })
    }
}

/// See [`LeastSquares::solve`]; uses the default rank floor.
pub fn least_squares(b: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    LeastSquares::default().solve(b, x)
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if m.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let mut values: Vec<f64> = m.singular_values().iter().map(|s| s.abs()).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(DVector::from_vec(values))
}

/// Splits `v` into its component in `span(U)` and the orthogonal residual.
pub fn project(u: &OrthonormalBasis, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    if v.len() != u.ambient_dim() {
        return Err(Error::dims(u.ambient_dim(), v.len()));
    }
    let coeffs = u.as_matrix().tr_mul(v);
    let v_par = u.as_matrix() * coeffs;
    let v_perp = v - &v_par;
    Ok((v_par, v_perp))
}

fn check_rank(r: &DMatrix<f64>, rank_tol: f64) -> Result<()> {
    let sv = r.singular_values();
    let largest = sv.iter().cloned().fold(0.0_f64, f64::max);
    let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let ratio = if largest > 0.0 { smallest / largest } else { 0.0 };
    if largest == 0.0 || ratio <= rank_tol {
        return Err(Error::RankDeficient { ratio });
    }
    Ok(())
}
