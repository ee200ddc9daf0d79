//! The streaming rank-one geodesic update.
//!
//! Each observation `x = A v` yields least-squares weights `w` for `A U`, the
//! approximated projection `p = U w`, the measurement residual
//! `r_tilde = x - A p`, and its lift `r = A^T r_tilde`. The basis then moves
//! along the geodesic that rotates `p / ||p||` toward `r / ||r||` by
//! `theta = atan(||r|| / ||p||)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{orthonormalize, LeastSquares, OrthonormalBasis};
use crate::sampling::SamplingOperator;

pub const DEFAULT_REORTH_CADENCE: usize = 100;
pub const DEFAULT_DRIFT_TOL: f64 = 1e-9;
/// Relative floor, against `||x||`, below which `||w||` or `||r||` counts as zero.
pub const DEGENERACY_TOL: f64 = 1e-12;
const DRIFT_CHECK_INTERVAL: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Updated,
    SkippedRankDeficient,
    SkippedZeroResidual,
    SkippedZeroProjection,
}

impl StepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Updated => "updated",
            Self::SkippedRankDeficient => "skipped_rank_deficient",
            Self::SkippedZeroResidual => "skipped_zero_residual",
            Self::SkippedZeroProjection => "skipped_zero_projection",
        }
    }

    pub fn is_updated(self) -> bool {
        self == Self::Updated
    }
}

impl std::fmt::Display for StepStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Deliberate corruption of the update, for exercising verifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateFault {
    /// Multiply the chosen angle by this factor before rotating.
    ScaleAngle(f64),
    /// Add this multiple of a fixed direction outside the rotation plane.
    Shear(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrouseConfig {
    /// Re-orthonormalize after this many updates; `0` disables the cadence.
    pub reorth_cadence: usize,
    /// Re-orthonormalize early once `||U^T U - I||_F` exceeds this.
    pub drift_tol: f64,
    pub least_squares: LeastSquares,
    pub fault: Option<UpdateFault>,
}

impl Default for GrouseConfig {
    fn default() -> Self {
        Self {
            reorth_cadence: DEFAULT_REORTH_CADENCE,
            drift_tol: DEFAULT_DRIFT_TOL,
            least_squares: LeastSquares::default(),
            fault: None,
        }
    }
}

/// The rank-one change applied by an update: `U' = U + left * right^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneUpdate {
    pub left: DVector<f64>,
    pub right: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub w: DVector<f64>,
    pub p: DVector<f64>,
    pub r_tilde: DVector<f64>,
    pub r: DVector<f64>,
    pub norm_p: f64,
    pub norm_r_tilde: f64,
    pub norm_r: f64,
    /// Angle actually applied, in `[0, pi/2]` unless overridden.
    pub theta: f64,
    pub status: StepStatus,
    /// Present only when `status` is `Updated`.
    pub update: Option<RankOneUpdate>,
    /// Whether the basis was re-orthonormalized after this step.
    pub reorthonormalized: bool,
}

#[derive(Debug, Clone)]
pub struct GrouseState {
    basis: OrthonormalBasis,
    t: u64,
    steps_since_reorth: usize,
    reorth_count: u64,
    config: GrouseConfig,
}

impl GrouseState {
    pub fn new(basis: OrthonormalBasis) -> Self {
        Self::with_config(basis, GrouseConfig::default())
    }

    pub fn with_config(basis: OrthonormalBasis, config: GrouseConfig) -> Self {
        Self {
            basis,
            t: 0,
            steps_since_reorth: 0,
            reorth_count: 0,
            config,
        }
    }

    /// Orthonormalized `n x d` standard-normal matrix.
    pub fn init_random<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Self> {
        Ok(Self::new(random_basis(n, d, rng)?))
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }

    pub fn into_basis(self) -> OrthonormalBasis {
        self.basis
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn steps_since_reorth(&self) -> usize {
        self.steps_since_reorth
    }

    pub fn reorth_count(&self) -> u64 {
        self.reorth_count
    }

    pub fn config(&self) -> &GrouseConfig {
        &self.config
    }

    pub fn set_config(&mut self, config: GrouseConfig) {
        self.config = config;
    }

    /// One update with the greedy angle `atan(||r|| / ||p||)`.
    pub fn step(&mut self, op: &SamplingOperator, x: &DVector<f64>) -> Result<StepReport> {
        self.step_operator(op, x, None)
    }

    /// One update with a caller-chosen angle in place of the greedy one.
    pub fn step_with_angle(
        &mut self,
        op: &SamplingOperator,
        x: &DVector<f64>,
        theta: f64,
    ) -> Result<StepReport> {
        if !theta.is_finite() {
            return Err(Error::NonFinite);
        }
        self.step_operator(op, x, Some(theta))
    }

    /// One update from pre-applied measurements.
    ///
    /// `restricted` must equal `A U` for the current basis and `lift` must act
    /// as `A^T`. This lets callers supply operators that are never
    /// materialized as a [`SamplingOperator`].
    pub fn step_with_lift<F>(
        &mut self,
        restricted: &DMatrix<f64>,
        x: &DVector<f64>,
        lift: F,
        theta_override: Option<f64>,
    ) -> Result<StepReport>
    where
        F: FnOnce(&DVector<f64>) -> Result<DVector<f64>>,
    {
        let (n, d) = self.basis.as_matrix().shape();
        if restricted.ncols() != d || restricted.nrows() != x.len() {
            return Err(Error::dims(
                format!("{}x{d} restricted basis", x.len()),
                format!("{}x{}", restricted.nrows(), restricted.ncols()),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        self.t += 1;

        let w = match self.config.least_squares.solve(restricted, x) {
            Ok(w) => w,
            Err(Error::RankDeficient { .. }) => {
                return Ok(skipped(n, d, x, StepStatus::SkippedRankDeficient));
            }
            Err(e) => return Err(e),
        };
        let p = self.basis.as_matrix() * &w;
        let r_tilde = x - restricted * &w;
        let r = lift(&r_tilde)?;
        if r.len() != n {
            return Err(Error::dims(n, r.len()));
        }

        let x_norm = x.norm();
        let norm_w = w.norm();
        let norm_p = p.norm();
        let norm_r_tilde = r_tilde.norm();
        let norm_r = r.norm();
        let mut report = StepReport {
            w,
            p,
            r_tilde,
            r,
            norm_p,
            norm_r_tilde,
            norm_r,
            theta: 0.0,
            status: StepStatus::Updated,
            update: None,
            reorthonormalized: false,
        };
        if norm_w <= DEGENERACY_TOL * x_norm || norm_p == 0.0 {
            report.status = StepStatus::SkippedZeroProjection;
            return Ok(report);
        }
        if norm_r <= DEGENERACY_TOL * x_norm {
            report.status = StepStatus::SkippedZeroResidual;
            return Ok(report);
        }

        let mut theta = theta_override.unwrap_or_else(|| norm_r.atan2(norm_p));
        if let Some(UpdateFault::ScaleAngle(f)) = self.config.fault {
            theta *= f;
        }
        report.theta = theta;

        // y/||y|| - p/||p|| with y/||y|| = cos(theta) p/||p|| + sin(theta) r/||r||
        let mut left = &report.p * ((theta.cos() - 1.0) / norm_p) + &report.r * (theta.sin() / norm_r);
        if let Some(UpdateFault::Shear(s)) = self.config.fault {
            left[0] += s;
        }
        let right = &report.w / norm_w;
        self.basis.matrix_mut().ger(1.0, &left, &right, 1.0);
        report.update = Some(RankOneUpdate { left, right });

        self.steps_since_reorth += 1;
        report.reorthonormalized = self.maintain();
        Ok(report)
    }

    /// Replace `U` by its sign-normalized QR factor. The span is unchanged.
    pub fn reorthonormalize(&mut self) {
        if let Ok(fresh) = orthonormalize(self.basis.as_matrix()) {
            self.basis = fresh;
        }
        self.steps_since_reorth = 0;
        self.reorth_count += 1;
    }

    fn step_operator(
        &mut self,
        op: &SamplingOperator,
        x: &DVector<f64>,
        theta_override: Option<f64>,
    ) -> Result<StepReport> {
        let n = self.basis.ambient_dim();
        if op.ambient_dim() != n {
            return Err(Error::dims(format!("operator on R^{n}"), op.ambient_dim()));
        }
        if x.len() != op.num_measurements() {
            return Err(Error::dims(op.num_measurements(), x.len()));
        }
        let restricted = op.restrict_basis(&self.basis)?;
        self.step_with_lift(&restricted, x, |y| op.adjoint(y), theta_override)
    }

    fn maintain(&mut self) -> bool {
        let cadence = self.config.reorth_cadence;
        let due = cadence > 0 && self.steps_since_reorth >= cadence;
        let drifted = !due
            && self.config.drift_tol.is_finite()
            && self.steps_since_reorth % DRIFT_CHECK_INTERVAL == 0
            && self.basis.orthonormality_error() > self.config.drift_tol;
        if due || drifted {
            self.reorthonormalize();
            return true;
        }
        false
    }
}

/// Orthonormalized `n x d` standard-normal matrix; requires `1 <= d < n`.
pub fn random_basis<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<OrthonormalBasis> {
    if d == 0 || d >= n {
        return Err(Error::invalid("d", format!("need 1 <= d < n, got d={d}, n={n}")));
    }
    let entries: Vec<f64> = rng.sample_iter(StandardNormal).take(n * d).collect();
    orthonormalize(&DMatrix::from_vec(n, d, entries))
}

fn skipped(n: usize, d: usize, x: &DVector<f64>, status: StepStatus) -> StepReport {
    StepReport {
        w: DVector::zeros(d),
        p: DVector::zeros(n),
        r_tilde: x.clone(),
        r: DVector::zeros(n),
        norm_p: 0.0,
        norm_r_tilde: x.norm(),
        norm_r: 0.0,
        theta: 0.0,
        status,
        update: None,
        reorthonormalized: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{overlap_determinant, principal_angles};
    use crate::numerics::{orthonormality_error, project};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
    }

    fn single_column(v: &[f64]) -> OrthonormalBasis {
        OrthonormalBasis::new(DMatrix::from_column_slice(v.len(), 1, v)).unwrap()
    }

    #[test]
    fn init_is_orthonormal_and_deterministic() {
        let a = GrouseState::init_random(30, 4, &mut rng(5)).unwrap();
        let b = GrouseState::init_random(30, 4, &mut rng(5)).unwrap();
        assert!(a.basis().orthonormality_error() <= 1e-10);
        assert_eq!(a.basis(), b.basis());
        assert_eq!(a.t(), 0);
        assert!(GrouseState::init_random(3, 3, &mut rng(1)).is_err());
        assert!(GrouseState::init_random(3, 0, &mut rng(1)).is_err());
    }

    #[test]
    fn vector_in_span_is_zero_residual() {
        let mut r = rng(2);
        let mut state = GrouseState::init_random(10, 3, &mut r).unwrap();
        let before = state.basis().clone();
        let v = before.as_matrix() * gaussian_vec(3, &mut r);
        let op = SamplingOperator::make_full(10).unwrap();
        let rep = state.step(&op, &v).unwrap();
        assert_eq!(rep.status, StepStatus::SkippedZeroResidual);
        assert_eq!(state.basis(), &before);
        assert_eq!(state.t(), 1);
    }

    #[test]
    fn quarter_turn_example() {
        let mut state = GrouseState::new(OrthonormalBasis::canonical(2, 1).unwrap());
        let truth = single_column(&[FRAC_1_SQRT_2, FRAC_1_SQRT_2]);
        assert!((principal_angles(state.basis(), &truth).unwrap().zeta - 0.5).abs() < 1e-15);
        let op = SamplingOperator::make_full(2).unwrap();
        let rep = state.step(&op, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(rep.status, StepStatus::Updated);
        assert!((rep.theta - FRAC_PI_4).abs() < 1e-15);
        let col = state.basis().as_matrix().column(0);
        assert!((col[0] - FRAC_1_SQRT_2).abs() < 1e-15 && (col[1] - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((principal_angles(state.basis(), &truth).unwrap().zeta - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unobserved_support_is_rank_deficient() {
        let mut state = GrouseState::new(OrthonormalBasis::canonical(4, 1).unwrap());
        let op = SamplingOperator::from_indices(vec![1], 4).unwrap();
        let rep = state.step(&op, &DVector::from_vec(vec![3.0])).unwrap();
        assert_eq!(rep.status, StepStatus::SkippedRankDeficient);
        assert_eq!(state.basis(), &OrthonormalBasis::canonical(4, 1).unwrap());
    }

    #[test]
    fn fewer_measurements_than_rank_always_skips() {
        let mut r = rng(3);
        let mut state = GrouseState::init_random(20, 5, &mut r).unwrap();
        for _ in 0..20 {
            let op = SamplingOperator::make_entrywise(4, 20, &mut r).unwrap();
            let v = gaussian_vec(20, &mut r);
            let rep = state.step(&op, &op.apply(&v).unwrap()).unwrap();
            assert_eq!(rep.status, StepStatus::SkippedRankDeficient);
        }
        assert_eq!(state.t(), 20);
        assert_eq!(state.steps_since_reorth(), 0);
    }

    #[test]
    fn zero_observation_is_zero_projection() {
        let mut state = GrouseState::init_random(6, 2, &mut rng(4)).unwrap();
        let op = SamplingOperator::make_full(6).unwrap();
        let rep = state.step(&op, &DVector::zeros(6)).unwrap();
        assert_eq!(rep.status, StepStatus::SkippedZeroProjection);
    }

    #[test]
    fn observation_orthogonal_to_estimate_is_zero_projection() {
        let mut state = GrouseState::new(OrthonormalBasis::canonical(3, 1).unwrap());
        let op = SamplingOperator::make_full(3).unwrap();
        let rep = state.step(&op, &DVector::from_vec(vec![0.0, 1.0, 0.0])).unwrap();
        assert_eq!(rep.status, StepStatus::SkippedZeroProjection);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut state = GrouseState::init_random(6, 2, &mut rng(4)).unwrap();
        let op = SamplingOperator::make_full(5).unwrap();
        assert!(state.step(&op, &DVector::zeros(5)).is_err());
        let op = SamplingOperator::make_full(6).unwrap();
        assert!(state.step(&op, &DVector::zeros(5)).is_err());
    }

    #[test]
    fn zero_angle_leaves_basis_unchanged() {
        let mut r = rng(6);
        let mut state = GrouseState::init_random(12, 3, &mut r).unwrap();
        let before = state.basis().clone();
        let op = SamplingOperator::make_full(12).unwrap();
        state.step_with_angle(&op, &gaussian_vec(12, &mut r), 0.0).unwrap();
        assert!((state.basis().as_matrix() - before.as_matrix()).norm() <= 1e-15);
    }

    #[test]
    fn greedy_override_matches_step() {
        let mut r = rng(7);
        let base = GrouseState::init_random(15, 3, &mut r).unwrap();
        let v = gaussian_vec(15, &mut r);
        let op = SamplingOperator::make_full(15).unwrap();
        let (v_par, v_perp) = project(base.basis(), &v).unwrap();
        let greedy = v_perp.norm().atan2(v_par.norm());
        let mut a = base.clone();
        let mut b = base;
        a.step(&op, &v).unwrap();
        b.step_with_angle(&op, &v, greedy).unwrap();
        assert!((a.basis().as_matrix() - b.basis().as_matrix()).norm() <= 1e-14);
    }

    #[test]
    fn reorthonormalize_is_idempotent_on_orthonormal_input() {
        let mut state = GrouseState::init_random(40, 5, &mut rng(8)).unwrap();
        let before = state.basis().clone();
        state.reorthonormalize();
        assert!((state.basis().as_matrix() - before.as_matrix()).norm() <= 1e-12);
        assert_eq!(state.steps_since_reorth(), 0);
        assert_eq!(state.reorth_count(), 1);
    }

    #[test]
    fn drift_without_reorthonormalization_is_repaired() {
        let mut r = rng(9);
        let config = GrouseConfig {
            reorth_cadence: 0,
            drift_tol: f64::INFINITY,
            ..GrouseConfig::default()
        };
        let basis = random_basis(50, 5, &mut r).unwrap();
        let mut state = GrouseState::with_config(basis, config);
        for _ in 0..10_000 {
            let op = SamplingOperator::make_entrywise(15, 50, &mut r).unwrap();
            let v = gaussian_vec(50, &mut r);
            state.step(&op, &op.apply(&v).unwrap()).unwrap();
        }
        let drift = state.basis().orthonormality_error();
        let before = state.basis().clone();
        state.reorthonormalize();
        assert!(state.basis().orthonormality_error() <= 1e-12, "drift was {drift:e}");
        let zeta = principal_angles(state.basis(), &before).unwrap().zeta;
        assert!((zeta - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn cadence_triggers_reorthonormalization() {
        let mut r = rng(10);
        let config = GrouseConfig {
            reorth_cadence: 5,
            ..GrouseConfig::default()
        };
        let basis = random_basis(20, 2, &mut r).unwrap();
        let mut state = GrouseState::with_config(basis, config);
        let op = SamplingOperator::make_full(20).unwrap();
        let mut flagged = 0;
        for _ in 0..12 {
            if state.step(&op, &gaussian_vec(20, &mut r)).unwrap().reorthonormalized {
                flagged += 1;
            }
        }
        assert_eq!(state.reorth_count(), 2);
        assert_eq!(flagged, 2);
        assert_eq!(state.steps_since_reorth(), 2);
    }

    #[test]
    fn angle_fault_breaks_the_greedy_ratio() {
        let mut r = rng(11);
        let truth = random_basis(10, 2, &mut r).unwrap();
        let basis = random_basis(10, 2, &mut r).unwrap();
        let config = GrouseConfig {
            fault: Some(UpdateFault::ScaleAngle(0.5)),
            ..GrouseConfig::default()
        };
        let mut state = GrouseState::with_config(basis, config);
        let v = truth.as_matrix() * gaussian_vec(2, &mut r);
        let (v_par, v_perp) = project(state.basis(), &v).unwrap();
        let before = principal_angles(state.basis(), &truth).unwrap().zeta;
        state.step(&SamplingOperator::make_full(10).unwrap(), &v).unwrap();
        let after = principal_angles(state.basis(), &truth).unwrap().zeta;
        let expected = 1.0 + v_perp.norm_squared() / v_par.norm_squared();
        assert!(((after / before) - expected).abs() > 1e-6 * expected);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn full_data_ratio_holds_for_any_angle(seed in any::<u64>(), theta in 0.0f64..1.5707) {
                let mut r = rng(seed);
                let truth = random_basis(12, 3, &mut r).unwrap();
                let mut state = GrouseState::init_random(12, 3, &mut r).unwrap();
                let v = truth.as_matrix() * gaussian_vec(3, &mut r);
                let (v_par, v_perp) = project(state.basis(), &v).unwrap();
                let det0 = overlap_determinant(state.basis(), &truth).unwrap();
                let z0 = principal_angles(state.basis(), &truth).unwrap().log_zeta;
                state.step_with_angle(&SamplingOperator::make_full(12).unwrap(), &v, theta).unwrap();
                let det1 = overlap_determinant(state.basis(), &truth).unwrap();
                let z1 = principal_angles(state.basis(), &truth).unwrap().log_zeta;
                let factor = theta.cos() + v_perp.norm() / v_par.norm() * theta.sin();
                prop_assert!((det1 - det0 * factor).abs() <= 1e-9 * (det0 * factor).abs());
                let ratio = (z1 - z0).exp();
                prop_assert!((ratio - factor * factor).abs() <= 1e-9 * factor * factor);
            }

            #[test]
            fn residual_is_orthogonal_and_skips_keep_basis(seed in any::<u64>(), m in 1usize..25) {
                let mut r = rng(seed);
                let n = 25;
                let truth = random_basis(n, 4, &mut r).unwrap();
                let mut state = GrouseState::init_random(n, 4, &mut r).unwrap();
                for _ in 0..10 {
                    let op = SamplingOperator::make_entrywise(m, n, &mut r).unwrap();
                    let v = truth.as_matrix() * gaussian_vec(4, &mut r);
                    let x = op.apply(&v).unwrap();
                    let restricted = op.restrict_basis(state.basis()).unwrap();
                    let before = state.basis().clone();
                    let rep = state.step(&op, &x).unwrap();
                    if rep.status.is_updated() {
                        let ortho = restricted.tr_mul(&rep.r_tilde).amax();
                        prop_assert!(ortho <= 1e-10 * x.norm());
                        prop_assert!((rep.theta - rep.norm_r.atan2(rep.norm_p)).abs() <= 1e-15);
                        prop_assert!((0.0..=std::f64::consts::FRAC_PI_2).contains(&rep.theta));
                    } else {
                        prop_assert_eq!(state.basis(), &before);
                    }
                    prop_assert!(orthonormality_error(state.basis().as_matrix()) <= 1e-8);
                }
            }
        }
    }
}
