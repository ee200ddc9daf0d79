//! Ground-truth-aware similarity and incoherence measurements.
//!
//! The determinant similarity `zeta = prod cos^2(phi_k)` is evaluated in the
//! log domain. Cosines come from the singular values of `Ubar^T U`; sines
//! come from the complement `(I - Ubar Ubar^T) U`, which keeps small angles
//! (and hence `kappa = 1 - zeta` near convergence) accurate to full relative
//! precision.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::numerics::{singular_values, OrthonormalBasis};

/// Cosines at or below this are treated as an exact right angle.
pub const COSINE_UNDERFLOW: f64 = 1e-300;

/// Absolute slack applied by [`local_region_check`].
pub const REGION_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalAngleProfile {
    /// `cos(phi_k)`, descending.
    pub cosines: Vec<f64>,
    /// `sin(phi_k)`, ascending, paired index-for-index with `cosines`.
    pub sines: Vec<f64>,
    /// `ln(zeta)`; `-inf` when `zeta == 0`.
    pub log_zeta: f64,
    pub zeta: f64,
    /// `1 - zeta`, computed as `-expm1(log_zeta)`.
    pub kappa: f64,
    /// `sum_k sin^2(phi_k) = ||(I - Ubar Ubar^T) U||_F^2`.
    pub frob_discrepancy: f64,
}

impl PrincipalAngleProfile {
    pub fn rank(&self) -> usize {
        self.cosines.len()
    }

    /// Largest principal angle `phi_d`, in radians.
    pub fn largest_angle(&self) -> f64 {
        let (c, s) = self.extreme_pair();
        s.atan2(c)
    }

    pub fn sin_largest(&self) -> f64 {
        self.extreme_pair().1
    }

    pub fn cos_largest(&self) -> f64 {
        self.extreme_pair().0
    }

    fn extreme_pair(&self) -> (f64, f64) {
        let k = self.cosines.len() - 1;
        (self.cosines[k], self.sines[k])
    }
}

/// Principal-angle profile between `span(U)` and `span(Ubar)`.
pub fn principal_angles(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Result<PrincipalAngleProfile> {
    check_same_shape(u, ubar)?;
    let um = u.as_matrix();
    let overlap = ubar.as_matrix().tr_mul(um);
    let cosines: Vec<f64> = singular_values(&overlap)?
        .iter()
        .map(|c| c.clamp(0.0, 1.0))
        .collect();

    let complement = um - ubar.as_matrix() * &overlap;
    let frob_discrepancy = complement.norm_squared();
    let gram = complement.tr_mul(&complement);
    let mut sin_sq: Vec<f64> = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    sin_sq.sort_by(f64::total_cmp);

    let mut log_zeta = 0.0;
    for (c, s2) in cosines.iter().zip(&sin_sq) {
        if *c <= COSINE_UNDERFLOW {
            log_zeta = f64::NEG_INFINITY;
            break;
        }
        log_zeta += if c * c < 0.5 { 2.0 * c.ln() } else { (-s2).ln_1p() };
    }
    let zeta = log_zeta.exp();
    let kappa = -log_zeta.exp_m1();

    Ok(PrincipalAngleProfile {
        cosines,
        sines: sin_sq.iter().map(|s| s.sqrt()).collect(),
        log_zeta,
        zeta,
        kappa,
        frob_discrepancy,
    })
}

/// `zeta` from the cosines alone; cheaper than [`principal_angles`] and
/// accurate to absolute `~1e-15`, which suffices for convergence tests.
pub fn determinant_similarity(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Result<f64> {
    check_same_shape(u, ubar)?;
    let overlap = ubar.as_matrix().tr_mul(u.as_matrix());
    Ok(singular_values(&overlap)?
        .iter()
        .map(|c| c.clamp(0.0, 1.0).powi(2))
        .product())
}

/// Signed `det(Ubar^T U)`.
pub fn overlap_determinant(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Result<f64> {
    check_same_shape(u, ubar)?;
    Ok(ubar.as_matrix().tr_mul(u.as_matrix()).lu().determinant())
}

/// `mu(U) = (n/d) max_i ||P_U e_i||^2`.
pub fn subspace_incoherence(u: &OrthonormalBasis) -> f64 {
    let (n, d) = u.as_matrix().shape();
    let max_row = u
        .as_matrix()
        .row_iter()
        .map(|row| row.norm_squared())
        .fold(0.0_f64, f64::max);
    n as f64 / d as f64 * max_row
}

/// `mu(z) = n ||z||_inf^2 / ||z||_2^2`.
pub fn vector_incoherence(z: &DVector<f64>) -> Result<f64> {
    let norm_sq = z.norm_squared();
    if norm_sq == 0.0 || !norm_sq.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(z.len() as f64 * z.amax().powi(2) / norm_sq)
}

/// `min_V ||Ubar V - U||_F` over orthogonal `V`, realized by the polar factor
/// of `Ubar^T U`.
pub fn procrustes_distance(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Result<f64> {
    check_same_shape(u, ubar)?;
    let overlap = ubar.as_matrix().tr_mul(u.as_matrix());
    let svd = overlap.svd(true, true);
    let (Some(left), Some(right_t)) = (svd.u, svd.v_t) else {
        return Err(Error::NonFinite);
    };
    let align: DMatrix<f64> = left * right_t;
    Ok((ubar.as_matrix() * align - u.as_matrix()).norm())
}

/// Radius `d mu0 / (16 n)` of the local region, measured in `sum sin^2`.
pub fn local_region_radius(n: usize, d: usize, mu0: f64) -> f64 {
    d as f64 * mu0 / (16.0 * n as f64)
}

/// Whether `sum_k sin^2(phi_k) <= d mu0 / (16 n)`, up to [`REGION_SLACK`].
pub fn local_region_check(u: &OrthonormalBasis, ubar: &OrthonormalBasis, mu0: f64) -> Result<bool> {
    let profile = principal_angles(u, ubar)?;
    let radius = local_region_radius(u.ambient_dim(), u.rank(), mu0);
    Ok(profile.frob_discrepancy <= radius + REGION_SLACK)
}

fn check_same_shape(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Result<()> {
    let a = u.as_matrix().shape();
    let b = ubar.as_matrix().shape();
    if a != b {
        return Err(Error::dims(format!("{}x{}", b.0, b.1), format!("{}x{}", a.0, a.1)));
    }
    Ok(())
}
