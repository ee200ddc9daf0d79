//! Per-observation sampling operators `A_t : R^n -> R^m`.
//!
//! Three variants are supported: the identity, a dense Gaussian sketch with
//! `N(0, 1/n)` entries, and entry-wise observation of `m` coordinates drawn
//! uniformly *with replacement*. Duplicated coordinates are kept; the adjoint
//! of an entry-wise operator accumulates them.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::OrthonormalBasis;

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingOperator {
    Full { n: usize },
    Gaussian { matrix: DMatrix<f64> },
    Entrywise { indices: Vec<usize>, n: usize },
}

impl SamplingOperator {
    pub fn make_full(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        Ok(Self::Full { n })
    }

    /// `m x n` matrix with independent `N(0, 1/n)` entries.
    pub fn make_gaussian<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::invalid("m", format!("need 1 <= m <= n, got m={m}, n={n}")));
        }
        let scale = (n as f64).recip().sqrt();
        let entries = rng
            .sample_iter::<f64, _>(StandardNormal)
            .take(m * n)
            .map(|z| z * scale);
        Ok(Self::Gaussian {
            matrix: DMatrix::from_iterator(m, n, entries),
        })
    }

    /// `m` coordinates drawn i.i.d. uniformly from `0..n`, duplicates kept.
    pub fn make_entrywise<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::invalid("m", format!("need m >= 1 and n >= 1, got m={m}, n={n}")));
        }
        let indices = (0..m).map(|_| rng.random_range(0..n)).collect();
        Ok(Self::Entrywise { indices, n })
    }

    /// `m` distinct coordinates drawn uniformly from `0..n`.
    pub fn make_entrywise_without_replacement<R: Rng + ?Sized>(
        m: usize,
        n: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::invalid("m", format!("need 1 <= m <= n, got m={m}, n={n}")));
        }
        let indices = index::sample(rng, n, m).into_vec();
        Ok(Self::Entrywise { indices, n })
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.is_empty() {
            return Err(Error::invalid("matrix", "must be non-empty"));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self::Gaussian { matrix })
    }

    pub fn from_indices(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("indices", "must be non-empty"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid("indices", format!("index {bad} out of range 0..{n}")));
        }
        Ok(Self::Entrywise { indices, n })
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Self::Full { n } | Self::Entrywise { n, .. } => *n,
            Self::Gaussian { matrix } => matrix.ncols(),
        }
    }

    pub fn num_measurements(&self) -> usize {
        match self {
            Self::Full { n } => *n,
            Self::Gaussian { matrix } => matrix.nrows(),
            Self::Entrywise { indices, .. } => indices.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Full { .. } => "full",
            Self::Gaussian { .. } => "gaussian",
            Self::Entrywise { .. } => "entrywise",
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(v.len(), self.ambient_dim())?;
        Ok(match self {
            Self::Full { .. } => v.clone(),
            Self::Gaussian { matrix } => matrix * v,
            Self::Entrywise { indices, .. } => {
                DVector::from_iterator(indices.len(), indices.iter().map(|&i| v[i]))
            }
        })
    }

    /// Transpose action. Entry-wise contributions at repeated indices add.
    pub fn adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(y.len(), self.num_measurements())?;
        Ok(match self {
            Self::Full { .. } => y.clone(),
            Self::Gaussian { matrix } => matrix.tr_mul(y),
            Self::Entrywise { indices, n } => {
                let mut out = DVector::zeros(*n);
                for (k, &i) in indices.iter().enumerate() {
                    out[i] += y[k];
                }
                out
            }
        })
    }

    /// `A U`, i.e. [`apply`](Self::apply) column by column.
    pub fn restrict_basis(&self, u: &OrthonormalBasis) -> Result<DMatrix<f64>> {
        self.restrict(u.as_matrix())
    }

    pub fn restrict(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_len(u.nrows(), self.ambient_dim())?;
        Ok(match self {
            Self::Full { .. } => u.clone(),
            Self::Gaussian { matrix } => matrix * u,
            Self::Entrywise { indices, .. } => u.select_rows(indices.iter()),
        })
    }

    fn check_len(&self, found: usize, expected: usize) -> Result<()> {
        if found != expected {
            return Err(Error::dims(expected, found));
        }
        Ok(())
    }
}
