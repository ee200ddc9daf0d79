//! Seeded synthetic ground truths and observation streams.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouse::random_basis;
use crate::metrics::subspace_incoherence;
use crate::numerics::{orthonormalize, OrthonormalBasis};
use crate::sampling::SamplingOperator;

pub const SPARSE_MAX_ATTEMPTS: usize = 100;
/// Margin kept below the largest admissible discrepancy `min(d, n - d)`.
pub const PERTURB_MARGIN: f64 = 1e-9;

/// Independent generator for trial `trial` of an experiment seeded by
/// `base_seed`. Streams never overlap, so results do not depend on the order
/// in which trials run.
pub fn trial_rng(base_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TruthKind {
    DenseGaussian,
    Sparse { density: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub basis: OrthonormalBasis,
    pub kind: TruthKind,
    /// `subspace_incoherence(basis)`.
    pub mu0: f64,
}

impl GroundTruth {
    pub fn new(basis: OrthonormalBasis, kind: TruthKind) -> Self {
        let mu0 = subspace_incoherence(&basis);
        Self { basis, kind, mu0 }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.ambient_dim()
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }
}

pub fn gen_dense_truth<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<GroundTruth> {
    Ok(GroundTruth::new(random_basis(n, d, rng)?, TruthKind::DenseGaussian))
}

/// `max(4 ln n, 2d) / n`, clamped to `(0, 1]`.
pub fn default_sparse_density(n: usize, d: usize) -> f64 {
    let nf = n as f64;
    ((4.0 * nf.ln()).max(2.0 * d as f64) / nf).min(1.0)
}

/// Each entry is nonzero with probability `density` (standard normal when
/// nonzero); the result is orthonormalized. Rank-deficient draws are retried.
pub fn gen_sparse_truth<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    density: Option<f64>,
    rng: &mut R,
) -> Result<GroundTruth> {
    if d == 0 || d >= n {
        return Err(Error::invalid("d", format!("need 1 <= d < n, got d={d}, n={n}")));
    }
    let density = density.unwrap_or_else(|| default_sparse_density(n, d));
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::invalid("density", format!("must lie in (0, 1], got {density}")));
    }
    if density * (n as f64) < d as f64 {
        return Err(Error::invalid(
            "density",
            format!("expected nonzeros per column {} is below d={d}", density * n as f64),
        ));
    }
    for _ in 0..SPARSE_MAX_ATTEMPTS {
        let raw = sparse_matrix(n, d, density, rng);
        if let Ok(basis) = orthonormalize(&raw) {
            return Ok(GroundTruth::new(basis, TruthKind::Sparse { density }));
        }
    }
    Err(Error::GenerationFailed {
        attempts: SPARSE_MAX_ATTEMPTS,
        reason: format!("sparse {n}x{d} draw at density {density} stayed rank deficient"),
    })
}

fn sparse_matrix<R: Rng + ?Sized>(n: usize, d: usize, density: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| {
        if rng.random_bool(density) {
            StandardNormal.sample(rng)
        } else {
            0.0
        }
    })
}

/// I.i.d. standard-normal coefficient vector.
pub fn gen_coefficients<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(d, rng.sample_iter(StandardNormal).take(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum OperatorSpec {
    Full,
    Gaussian { m: usize },
    Entrywise { m: usize },
}

impl OperatorSpec {
    pub fn measurements(&self, n: usize) -> usize {
        match self {
            Self::Full => n,
            Self::Gaussian { m } | Self::Entrywise { m } => *m,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let m = self.measurements(n);
        if m == 0 || m > n {
            return Err(Error::invalid("m", format!("need 1 <= m <= n, got m={m}, n={n}")));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SamplingOperator> {
        match *self {
            Self::Full => SamplingOperator::make_full(n),
            Self::Gaussian { m } => SamplingOperator::make_gaussian(m, n, rng),
            Self::Entrywise { m } => SamplingOperator::make_entrywise(m, n, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    /// Hidden `v = Ubar s`; `None` in observations-only mode.
    pub v: Option<DVector<f64>>,
    pub op: SamplingOperator,
    pub x: DVector<f64>,
}

/// Draw `s`, then the operator, and observe `x = A (Ubar s)`.
pub fn sample_one<R: Rng + ?Sized>(
    truth: &GroundTruth,
    spec: &OperatorSpec,
    rng: &mut R,
) -> Result<StreamSample> {
    let s = gen_coefficients(truth.rank(), rng);
    let v = truth.basis.as_matrix() * s;
    let op = spec.draw(truth.ambient_dim(), rng)?;
    let x = op.apply(&v)?;
    Ok(StreamSample { v: Some(v), op, x })
}

/// Lazy stream of `len` samples.
pub struct Stream<'a, R: Rng + ?Sized> {
    truth: &'a GroundTruth,
    spec: OperatorSpec,
    remaining: usize,
    keep_truth: bool,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Stream<'_, R> {
    /// Drop `v` from emitted samples.
    pub fn observations_only(mut self) -> Self {
        self.keep_truth = false;
        self
    }
}

impl<R: Rng + ?Sized> Iterator for Stream<'_, R> {
    type Item = StreamSample;

    fn next(&mut self) -> Option<StreamSample> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        // The operator spec was validated against this truth when the stream was built.
        let mut sample = sample_one(self.truth, &self.spec, self.rng).ok()?;
        if !self.keep_truth {
            sample.v = None;
        }
        Some(sample)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

pub fn gen_stream<'a, R: Rng + ?Sized>(
    truth: &'a GroundTruth,
    spec: OperatorSpec,
    len: usize,
    rng: &'a mut R,
) -> Result<Stream<'a, R>> {
    spec.validate(truth.ambient_dim())?;
    Ok(Stream {
        truth,
        spec,
        remaining: len,
        keep_truth: true,
        rng,
    })
}

/// A basis whose principal angles to `ubar` have `sum sin^2 = target`.
///
/// `min(d, n - d)` directions of a randomly rotated `ubar` are tilted toward
/// random orthonormal directions in the complement, with random shares of
/// the target (equal shares if a random split would exceed a right angle).
pub fn perturb_within_region<R: Rng + ?Sized>(
    ubar: &OrthonormalBasis,
    target: f64,
    rng: &mut R,
) -> Result<OrthonormalBasis> {
    let (n, d) = ubar.as_matrix().shape();
    let k = d.min(n - d);
    let limit = k as f64 - PERTURB_MARGIN;
    if !(0.0..=limit).contains(&target) {
        return Err(Error::invalid(
            "target",
            format!("must lie in [0, {limit}], got {target}"),
        ));
    }
    let rotation = random_basis_square(d, rng)?;
    let mut columns = ubar.as_matrix() * rotation;
    if target == 0.0 {
        return orthonormalize(&columns);
    }

    let gaussian = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng));
    let mut outside = gaussian;
    for _ in 0..2 {
        let inside = ubar.as_matrix() * ubar.as_matrix().tr_mul(&outside);
        outside -= inside;
    }
    let outside = orthonormalize(&outside)?;

    let weights: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = weights.iter().sum();
    let mut shares: Vec<f64> = weights.iter().map(|w| target * w / total).collect();
    if shares.iter().any(|s| *s > 1.0 - PERTURB_MARGIN / k as f64) {
        shares = vec![target / k as f64; k];
    }
    for (j, sin_sq) in shares.into_iter().enumerate() {
        let (s, c) = (sin_sq.sqrt(), (1.0 - sin_sq).sqrt());
        let tilted = columns.column(j) * c + outside.as_matrix().column(j) * s;
        columns.set_column(j, &tilted);
    }
    OrthonormalBasis::new(columns)
}

fn random_basis_square<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    Ok(orthonormalize(&g)?.into_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{local_region_check, local_region_radius, principal_angles};
    use crate::numerics::project;
    use crate::theory::key_quantity_bound;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn dense_truth_is_deterministic_and_orthonormal() {
        let a = gen_dense_truth(40, 4, &mut rng(1)).unwrap();
        let b = gen_dense_truth(40, 4, &mut rng(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.basis.orthonormality_error() <= 1e-10);
        assert_eq!(a.kind, TruthKind::DenseGaussian);
    }

    #[test]
    fn dense_incoherence_is_moderate() {
        let mut r = rng(2);
        for _ in 0..5 {
            let t = gen_dense_truth(1000, 10, &mut r).unwrap();
            assert!(t.mu0 >= 1.0 && t.mu0 <= 100.0);
            assert!(t.mu0 < 6.0, "mu0 = {}", t.mu0);
        }
    }

    #[test]
    fn sparse_truth_has_requested_density() {
        let (n, d, density) = (2000usize, 5usize, 0.05);
        let mut r = rng(3);
        let raw = sparse_matrix(n, d, density, &mut r);
        let nonzero = raw.iter().filter(|x| **x != 0.0).count() as f64;
        let total = (n * d) as f64;
        let se = (density * (1.0 - density) / total).sqrt();
        assert!((nonzero / total - density).abs() <= 5.0 * se);
        let t = gen_sparse_truth(n, d, Some(density), &mut r).unwrap();
        assert_eq!(t.rank(), d);
        assert!(t.basis.orthonormality_error() <= 1e-10);
    }

    #[test]
    fn sparse_default_density_and_rejections() {
        assert!((default_sparse_density(5000, 10) - 4.0 * 5000f64.ln() / 5000.0).abs() < 1e-15);
        assert_eq!(default_sparse_density(5, 3), 1.0);
        assert!((default_sparse_density(100, 40) - 0.8).abs() < 1e-15);
        assert!(gen_sparse_truth(100, 10, Some(0.05), &mut rng(4)).is_err());
        assert!(gen_sparse_truth(100, 2, Some(0.0), &mut rng(4)).is_err());
        let t = gen_sparse_truth(500, 4, None, &mut rng(4)).unwrap();
        assert!(matches!(t.kind, TruthKind::Sparse { .. }));
    }

    #[test]
    fn full_density_sparse_truth_is_dense_gaussian() {
        let t = gen_sparse_truth(30, 3, Some(1.0), &mut rng(5)).unwrap();
        assert!(t.basis.as_matrix().iter().all(|x| *x != 0.0));
    }

    #[test]
    fn coefficient_moments() {
        let mut r = rng(6);
        let d = 3;
        let draws = 100_000;
        let mut sum = DVector::zeros(d);
        let mut cross = DMatrix::zeros(d, d);
        for _ in 0..draws {
            let s = gen_coefficients(d, &mut r);
            sum += &s;
            cross += &s * s.transpose();
        }
        let mean = sum / draws as f64;
        let cov = cross / draws as f64;
        let se = (1.0 / draws as f64).sqrt();
        for i in 0..d {
            assert!(mean[i].abs() <= 5.0 * se);
            assert!((cov[(i, i)] - 1.0).abs() <= 5.0 * 2f64.sqrt() * se);
            for j in 0..i {
                assert!(cov[(i, j)].abs() <= 5.0 * se);
            }
        }
    }

    #[test]
    fn stream_samples_lie_in_the_truth() {
        let mut r = rng(7);
        let truth = gen_dense_truth(60, 5, &mut r).unwrap();
        for spec in [OperatorSpec::Full, OperatorSpec::Gaussian { m: 20 }, OperatorSpec::Entrywise { m: 15 }] {
            let samples: Vec<_> = gen_stream(&truth, spec, 25, &mut r).unwrap().collect();
            assert_eq!(samples.len(), 25);
            for s in samples {
                let v = s.v.unwrap();
                let (_, residual) = project(&truth.basis, &v).unwrap();
                assert!(residual.norm() <= 1e-10 * v.norm());
                assert_eq!(s.x, s.op.apply(&v).unwrap());
                if spec == OperatorSpec::Full {
                    assert_eq!(s.x, v);
                }
            }
        }
    }

    #[test]
    fn stream_replays_bit_exactly() {
        let truth = gen_dense_truth(30, 3, &mut rng(8)).unwrap();
        let spec = OperatorSpec::Entrywise { m: 10 };
        let mut r1 = rng(9);
        let mut r2 = rng(9);
        let a: Vec<_> = gen_stream(&truth, spec, 10, &mut r1).unwrap().collect();
        let b: Vec<_> = gen_stream(&truth, spec, 10, &mut r2).unwrap().collect();
        assert_eq!(a, b);
        let hidden: Vec<_> = gen_stream(&truth, spec, 3, &mut r1).unwrap().observations_only().collect();
        assert!(hidden.iter().all(|s| s.v.is_none()));
        assert!(gen_stream(&truth, OperatorSpec::Gaussian { m: 31 }, 1, &mut r1).is_err());
    }

    #[test]
    fn trial_streams_are_distinct_and_reproducible() {
        let a: u64 = trial_rng(5, 0).random();
        let b: u64 = trial_rng(5, 1).random();
        let c: u64 = trial_rng(5, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn key_quantity_lemma_holds_empirically() {
        let mut r = rng(10);
        let (n, d) = (40usize, 4usize);
        let truth = gen_dense_truth(n, d, &mut r).unwrap();
        let u = random_basis(n, d, &mut r).unwrap();
        let zeta = principal_angles(&u, &truth.basis).unwrap().zeta;
        let samples = 20_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..samples {
            let v = truth.basis.as_matrix() * gen_coefficients(d, &mut r);
            let (_, v_perp) = project(&u, &v).unwrap();
            let q = v_perp.norm_squared() / v.norm_squared();
            sum += q;
            sum_sq += q * q;
        }
        let mean = sum / samples as f64;
        let se = ((sum_sq / samples as f64 - mean * mean) / samples as f64).sqrt();
        assert!(mean >= key_quantity_bound(zeta, d) - 3.0 * se);
    }

    #[test]
    fn perturbation_hits_target() {
        let mut r = rng(11);
        for case in 0..100 {
            let n = 10 + case % 30;
            let d = 1 + case % 5;
            let truth = gen_dense_truth(n, d, &mut r).unwrap();
            let k = d.min(n - d) as f64;
            let target = r.random::<f64>() * (k - 1e-6);
            let u = perturb_within_region(&truth.basis, target, &mut r).unwrap();
            let p = principal_angles(&u, &truth.basis).unwrap();
            assert!((p.frob_discrepancy - target).abs() <= 1e-9, "case {case}");
        }
    }

    #[test]
    fn perturbation_edge_cases() {
        let mut r = rng(12);
        let truth = gen_dense_truth(20, 3, &mut r).unwrap();
        let same = perturb_within_region(&truth.basis, 0.0, &mut r).unwrap();
        assert!((principal_angles(&same, &truth.basis).unwrap().zeta - 1.0).abs() <= 1e-12);
        assert!(perturb_within_region(&truth.basis, 3.0, &mut r).is_err());
        assert!(perturb_within_region(&truth.basis, -0.1, &mut r).is_err());

        let radius = local_region_radius(20, 3, truth.mu0);
        let edge = perturb_within_region(&truth.basis, radius, &mut r).unwrap();
        assert!(local_region_check(&edge, &truth.basis, truth.mu0).unwrap());
        let outside = perturb_within_region(&truth.basis, radius * 1.01, &mut r).unwrap();
        assert!(!local_region_check(&outside, &truth.basis, truth.mu0).unwrap());
    }

    #[test]
    fn local_region_keeps_incoherence_bounded() {
        let mut r = rng(13);
        for _ in 0..200 {
            let truth = gen_dense_truth(200, 4, &mut r).unwrap();
            let radius = local_region_radius(200, 4, truth.mu0);
            let u = perturb_within_region(&truth.basis, radius * r.random::<f64>(), &mut r).unwrap();
            assert!(local_region_check(&u, &truth.basis, truth.mu0).unwrap());
            assert!(subspace_incoherence(&u) <= 2.0 * truth.mu0);
        }
    }
}
