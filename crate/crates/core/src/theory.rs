//! Closed-form convergence rates, iteration counts, and sample complexities.
//!
//! Where a bound has a stated form and a slightly different form that arises
//! in its derivation, the stated form is returned and the other is kept in
//! `alternates` (complexities) or `params` (rates) under a `_derived` suffix.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::COSINE_UNDERFLOW;
use crate::numerics::{least_squares, singular_values, OrthonormalBasis};
use crate::sampling::SamplingOperator;

/// Expected multiplicative improvement of `zeta` and the confidence with
/// which it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub rate: f64,
    /// In `[0, 1]`; `1.0` for deterministic statements.
    pub probability: f64,
    pub params: BTreeMap<String, f64>,
}

impl RateBound {
    pub fn excess(&self) -> f64 {
        self.rate - 1.0
    }

    /// True when the unclamped probability expression was negative.
    pub fn is_vacuous(&self) -> bool {
        self.params.get("vacuous").is_some_and(|v| *v != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityBound {
    pub value: f64,
    pub components: BTreeMap<String, f64>,
    /// Variants that differ from the stated bound; not part of `value`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub alternates: BTreeMap<String, f64>,
}

fn map<const N: usize>(entries: [(&str, f64); N]) -> BTreeMap<String, f64> {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn check_unit_open(name: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::invalid(name, format!("must lie in (0, 1), got {value}")));
    }
    Ok(())
}

fn check_dims(n: usize, d: usize, m: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    if m == 0 || m > n {
        return Err(Error::invalid("m", format!("need 1 <= m <= n, got m={m}, n={n}")));
    }
    Ok(())
}

/// `zeta_{t+1} / zeta_t = 1 + ||v_perp||^2 / ||v_par||^2` under full sampling
/// with the greedy angle.
pub fn exact_full_ratio(norm_v_par: f64, norm_v_perp: f64) -> Result<f64> {
    if norm_v_par <= 0.0 {
        return Err(Error::ZeroProjection);
    }
    Ok(1.0 + (norm_v_perp / norm_v_par).powi(2))
}

/// `(cos theta + (||v_perp|| / ||v_par||) sin theta)^2` for an arbitrary angle
/// under full sampling.
pub fn full_ratio_at_angle(norm_v_par: f64, norm_v_perp: f64, theta: f64) -> Result<f64> {
    if norm_v_par <= 0.0 {
        return Err(Error::ZeroProjection);
    }
    Ok((theta.cos() + norm_v_perp / norm_v_par * theta.sin()).powi(2))
}

/// Factor `1 + (1 - zeta)/d` in `E[zeta_{t+1} | U] >= factor * zeta_t`.
pub fn expected_rate_full(zeta: f64, d: usize) -> f64 {
    1.0 + (1.0 - zeta) / d as f64
}

/// Lower bound `(1 - zeta)/d` on `E[||v_perp||^2 / ||v||^2]`.
pub fn key_quantity_bound(zeta: f64, d: usize) -> f64 {
    (1.0 - zeta) / d as f64
}

/// Iterations to reach `zeta >= zeta_star` with probability at least
/// `1 - rho` under full sampling: `K1 + K2`.
pub fn iteration_bound_full(
    n: usize,
    d: usize,
    rho: f64,
    zeta_star: f64,
    c: f64,
) -> Result<ComplexityBound> {
    check_unit_open("rho", rho)?;
    check_unit_open("zeta_star", zeta_star)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("c", format!("must be positive, got {c}")));
    }
    if d == 0 || d >= n {
        return Err(Error::invalid("d", format!("need 1 <= d < n, got d={d}, n={n}")));
    }
    let (nf, df) = (n as f64, d as f64);
    let ln_n = nf.ln();
    let tau0 = 1.0 + (((1.0 - rho / 2.0) / c).ln() + df * (1.0 - df.ln())) / (df * ln_n);
    let k1 = (2.0 * df * df / rho + 1.0) * tau0 * ln_n;
    let k1_derived = (2.0 * df * df / rho + df) * tau0 * ln_n;
    let k2 = (2.0 * df * (1.0 / (2.0 * rho * (1.0 - zeta_star))).ln()).max(0.0);
    Ok(ComplexityBound {
        value: k1 + k2,
        components: map([("k1", k1), ("k2", k2), ("tau0", tau0), ("c", c)]),
        alternates: map([("k1_derived", k1_derived)]),
    })
}

/// `(n/m) (d^2 ln n + d ln(1/(1 - zeta_star)))`.
pub fn heuristic_iterations(n: usize, m: usize, d: usize, zeta_star: f64) -> Result<f64> {
    check_dims(n, d, m)?;
    check_unit_open("zeta_star", zeta_star)?;
    let (nf, df) = (n as f64, d as f64);
    Ok(nf / m as f64 * (df * df * nf.ln() - df * (1.0 - zeta_star).ln()))
}

/// `w_perp^T (Ubar^T U)^{-1} Ubar^T r`, where `w_perp` is the least-squares
/// weight vector of `A v_perp` and `r = A^T (A v_perp - A U w_perp)`.
pub fn delta_term(
    u: &OrthonormalBasis,
    ubar: &OrthonormalBasis,
    op: &SamplingOperator,
    v: &DVector<f64>,
) -> Result<f64> {
    if u.as_matrix().shape() != ubar.as_matrix().shape() {
        return Err(Error::dims("matching bases", "differing shapes"));
    }
    if v.len() != u.ambient_dim() {
        return Err(Error::dims(u.ambient_dim(), v.len()));
    }
    let overlap = ubar.as_matrix().tr_mul(u.as_matrix());
    let sv = singular_values(&overlap)?;
    if sv.iter().any(|s| *s <= COSINE_UNDERFLOW) {
        return Err(Error::SingularOverlap);
    }
    let um = u.as_matrix();
    let v_perp = v - um * um.tr_mul(v);
    let restricted = op.restrict(um)?;
    let x_perp = op.apply(&v_perp)?;
    let w_perp = least_squares(&restricted, &x_perp)?;
    let r = op.adjoint(&(x_perp - &restricted * &w_perp))?;
    let rhs = ubar.as_matrix().tr_mul(&r);
    let solved = overlap.lu().solve(&rhs).ok_or(Error::SingularOverlap)?;
    Ok(w_perp.dot(&solved))
}

/// Per-step lower bound
/// `1 + (2 ||r_tilde||^2 - ||r||^2)/||p||^2 + 2 delta/||p||^2` on the realized
/// `zeta` ratio; may be below one.
pub fn step_lower_bound_undersampled(
    norm_p: f64,
    norm_r_tilde: f64,
    norm_r: f64,
    delta: f64,
) -> Result<f64> {
    if norm_p <= 0.0 {
        return Err(Error::ZeroProjection);
    }
    let p2 = norm_p * norm_p;
    Ok(1.0 + (2.0 * norm_r_tilde * norm_r_tilde - norm_r * norm_r) / p2 + 2.0 * delta / p2)
}

/// `det(Ubar^T U') / det(Ubar^T U)` for one greedy update:
/// `(||p||^2 + ||r_tilde||^2 + delta) / (||p|| sqrt(||p||^2 + ||r||^2))`.
pub fn determinant_update_factor(
    norm_p: f64,
    norm_r_tilde: f64,
    norm_r: f64,
    delta: f64,
) -> Result<f64> {
    if norm_p <= 0.0 {
        return Err(Error::ZeroProjection);
    }
    let p2 = norm_p * norm_p;
    Ok((p2 + norm_r_tilde * norm_r_tilde + delta) / (norm_p * (p2 + norm_r * norm_r).sqrt()))
}

fn clamp_probability(raw: f64, params: &mut BTreeMap<String, f64>) -> f64 {
    params.insert("probability_raw".into(), raw);
    params.insert("vacuous".into(), if raw < 0.0 { 1.0 } else { 0.0 });
    raw.clamp(0.0, 1.0)
}

/// Expected improvement factor under an `m x n` Gaussian sketch with
/// distortion `delta` and largest principal angle `phi_d`.
pub fn expected_rate_cs(
    zeta: f64,
    d: usize,
    m: usize,
    n: usize,
    delta: f64,
    phi_d: f64,
) -> Result<RateBound> {
    check_dims(n, d, m)?;
    check_unit_open("delta", delta)?;
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&phi_d) {
        return Err(Error::invalid("phi_d", format!("must lie in [0, pi/2), got {phi_d}")));
    }
    let (nf, df, mf) = (n as f64, d as f64, m as f64);
    let shrink = 1.0 - 2.0 * delta * (mf / nf).sqrt();
    if shrink <= 0.0 {
        return Err(Error::invalid("delta", format!("needs 2 delta sqrt(m/n) < 1, got delta={delta}")));
    }
    let gamma1 = (1.0 - delta) * shrink
        / (1.0 + ((1.0 + delta) / (1.0 - delta) * df / mf).sqrt()).powi(2);
    let angle_term = 2.0 * phi_d.tan() + delta * df / phi_d.cos();
    let skew = (1.0 + delta) / (1.0 - delta);
    let gamma2 = (1.0 + angle_term / (shrink * ((1.0 + delta) * df / mf).sqrt())) * skew;
    let gamma2_derived = (1.0 + angle_term / (shrink * ((1.0 - delta * delta) * df / mf).sqrt())) * skew;
    let rate = 1.0 + gamma1 * (1.0 - gamma2 * df / mf) * (mf / nf) * (1.0 - zeta) / df;

    let raw = 1.0
        - (-df * delta * delta / 8.0).exp()
        - (-mf * delta * delta / 32.0 + df * (24.0 / delta).ln()).exp()
        - (4.0 * df + 2.0) * (-mf * delta * delta / 8.0).exp();
    let mut params = map([
        ("gamma1", gamma1),
        ("gamma2", gamma2),
        ("gamma2_derived", gamma2_derived),
        ("delta", delta),
        ("phi_d", phi_d),
    ]);
    let probability = clamp_probability(raw, &mut params);
    Ok(RateBound {
        rate,
        probability,
        params,
    })
}

/// Measurements per observation sufficient for [`expected_rate_cs`]:
/// `max(term1, term2)`.
pub fn sample_complexity_cs(d: usize, delta: f64, phi_d: f64, n: usize) -> Result<ComplexityBound> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::invalid("delta", format!("must lie in (0, 1/2), got {delta}")));
    }
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&phi_d) {
        return Err(Error::invalid("phi_d", format!("must lie in [0, pi/2), got {phi_d}")));
    }
    if d == 0 || n == 0 {
        return Err(Error::invalid("d", "d and n must be at least 1"));
    }
    let (nf, df) = (n as f64, d as f64);
    let beta = 8.0 * (1.0 + delta) / ((1.0 - delta).powi(2) * (1.0 - 2.0 * delta).powi(2));
    let term1 = df * 32.0 / (delta * delta) * (24.0 * nf.powf(2.0 / df) / delta).ln();
    let product = |a: f64| df * beta * a * (a + 0.5);
    let term2 = product(phi_d.tan() + delta * phi_d.cos() * df);
    let term2_derived = product(phi_d.tan() + delta * df / phi_d.cos());
    Ok(ComplexityBound {
        value: term1.max(term2),
        components: map([("term1", term1), ("term2", term2), ("beta", beta)]),
        alternates: map([("term2_derived", term2_derived)]),
    })
}

/// Expected improvement of the ratio `zeta_{t+1}/zeta_t` under entry-wise
/// sampling inside the local region.
pub fn expected_rate_missing(zeta: f64, d: usize, m: usize, n: usize) -> Result<RateBound> {
    check_dims(n, d, m)?;
    let nf = n as f64;
    let rate = 1.0 + 0.25 * (m as f64 / nf) * (1.0 - zeta) / d as f64;
    let mut params = map([("delta", 1.0 / (nf * nf))]);
    let probability = clamp_probability(1.0 - 3.0 / (nf * nf), &mut params);
    Ok(RateBound {
        rate,
        probability,
        params,
    })
}

/// Measurements per observation sufficient for [`expected_rate_missing`]:
/// `max(term1, term2, term3)`.
pub fn sample_complexity_missing(d: usize, mu0: f64, mu_vperp: f64, n: usize) -> Result<ComplexityBound> {
    if d == 0 || n <= d {
        return Err(Error::invalid("d", format!("need 1 <= d < n, got d={d}, n={n}")));
    }
    let (nf, df) = (n as f64, d as f64);
    if !(1.0 - 1e-12..=nf / df + 1e-12).contains(&mu0) {
        return Err(Error::invalid("mu0", format!("must lie in [1, n/d], got {mu0}")));
    }
    if !(1.0 - 1e-12..=nf + 1e-12).contains(&mu_vperp) {
        return Err(Error::invalid("mu_vperp", format!("must lie in [1, n], got {mu_vperp}")));
    }
    let ln_n = nf.ln();
    let lead = 128.0 * df * mu0 / 3.0;
    let term1 = lead * ((2.0 * df).sqrt() * nf).ln();
    let term1_derived = lead * (2.0 * df * nf * nf).ln();
    let term2 = 64.0 * mu_vperp * mu_vperp * ln_n;
    let term3 = 52.0 * (1.0 + 2.0 * (mu_vperp * ln_n).sqrt()).powi(2) * df * mu0;
    Ok(ComplexityBound {
        value: term1.max(term2).max(term3),
        components: map([("term1", term1), ("term2", term2), ("term3", term3)]),
        alternates: map([("term1_derived", term1_derived)]),
    })
}

/// Contraction factor `1 - (1/4)(1 - d mu0/(16 n)) m/(n d)` of the expected
/// discrepancy under entry-wise sampling.
pub fn discrepancy_decay_factor(d: usize, m: usize, n: usize, mu0: f64) -> f64 {
    let (nf, df) = (n as f64, d as f64);
    1.0 - 0.25 * (1.0 - df * mu0 / (16.0 * nf)) * (m as f64 / (nf * df))
}

/// Upper bound on `E[kappa_{t+1} | kappa_t]`.
pub fn discrepancy_decay_missing(kappa: f64, d: usize, m: usize, n: usize, mu0: f64) -> f64 {
    discrepancy_decay_factor(d, m, n, mu0) * kappa
}

/// `c (d/(n e))^d`, evaluated in the log domain.
pub fn expected_zeta0(n: usize, d: usize, c: f64) -> f64 {
    log_expected_zeta0(n, d, c).exp()
}

pub fn log_expected_zeta0(n: usize, d: usize, c: f64) -> f64 {
    let df = d as f64;
    c.ln() + df * (df.ln() - (n as f64).ln() - 1.0)
}

/// Exact `E[zeta_0] = prod_{i<d} (d - i)/(n - i)` for a uniformly random
/// start against any fixed `d`-dimensional subspace.
pub fn exact_expected_zeta0(n: usize, d: usize) -> f64 {
    (0..d).map(|i| (d - i) as f64 / (n - i) as f64).product()
}
