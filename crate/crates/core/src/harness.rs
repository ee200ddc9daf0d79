//! Seeded Monte Carlo experiments over synthetic streams.
//!
//! Trials are independent tasks, each with its own random stream derived from
//! `(seed, trial index)`, so results do not depend on scheduling. Within a
//! trial the stream is strictly sequential.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    gen_coefficients, gen_dense_truth, gen_sparse_truth, perturb_within_region, trial_rng, GroundTruth,
    OperatorSpec,
};
use crate::error::{Error, Result};
use crate::grouse::{random_basis, GrouseConfig, GrouseState, StepReport, StepStatus, UpdateFault};
use crate::metrics::{
    local_region_check, local_region_radius, principal_angles, procrustes_distance, subspace_incoherence,
    PrincipalAngleProfile,
};
use crate::numerics::{least_squares, orthonormality_error, project, OrthonormalBasis};
use crate::sampling::SamplingOperator;
use crate::theory;

/// Consecutive non-updating steps after which a trial is declared stalled.
pub const STALL_WINDOW: u64 = 1000;
pub const DEFAULT_ZETA_STAR: f64 = 1.0 - 1e-4;
pub const DEFAULT_CAP_FACTOR: f64 = 50.0;
pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_MIN_KAPPA: f64 = 1e-12;
/// Bins with fewer samples carry no standard error and are not judged.
pub const MIN_BIN_COUNT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Full,
    Gaussian,
    Entrywise,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TruthSpec {
    #[default]
    Dense,
    Sparse {
        #[serde(default)]
        density: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum InitSpec {
    #[default]
    Random,
    /// Start at discrepancy `sum sin^2 = target` from the truth.
    PerturbedWithin { target: f64 },
    /// Start at `fraction` of the local-region radius `d mu0 / (16 n)`.
    RegionFraction { fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticsLevel {
    /// Similarity only, tracked incrementally.
    #[default]
    Basic,
    /// Full principal-angle profile, delta term and per-step lower bound.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianMode {
    /// Materialize the `m x n` operator.
    #[default]
    Explicit,
    /// Draw only the action on `span(U, v)` plus an isotropic lift; equal in
    /// distribution to the explicit operator.
    Implicit,
}

fn default_zeta_star() -> f64 {
    DEFAULT_ZETA_STAR
}

fn default_cadence() -> usize {
    crate::grouse::DEFAULT_REORTH_CADENCE
}

fn default_cap_factor() -> f64 {
    DEFAULT_CAP_FACTOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub n: usize,
    pub d: usize,
    /// Measurements per observation; ignored for full sampling.
    #[serde(default)]
    pub m: Option<usize>,
    pub op_kind: OpKind,
    #[serde(default)]
    pub truth_kind: TruthSpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default = "default_zeta_star")]
    pub zeta_star: f64,
    /// Iteration cap; `None` means `cap_factor * heuristic_iterations`.
    #[serde(default)]
    pub max_iters: Option<u64>,
    #[serde(default = "default_cap_factor")]
    pub cap_factor: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cadence")]
    pub reorth_cadence: usize,
    #[serde(default)]
    pub diagnostics_level: DiagnosticsLevel,
    #[serde(default)]
    pub gaussian_mode: GaussianMode,
    #[serde(default)]
    pub fault: Option<UpdateFault>,
}

impl TrialConfig {
    pub fn new(n: usize, d: usize, op_kind: OpKind, m: Option<usize>) -> Self {
        Self {
            n,
            d,
            m,
            op_kind,
            truth_kind: TruthSpec::Dense,
            init: InitSpec::Random,
            zeta_star: DEFAULT_ZETA_STAR,
            max_iters: None,
            cap_factor: DEFAULT_CAP_FACTOR,
            seed: 0,
            reorth_cadence: default_cadence(),
            diagnostics_level: DiagnosticsLevel::Basic,
            gaussian_mode: GaussianMode::Explicit,
            fault: None,
        }
    }

    pub fn measurements(&self) -> usize {
        match self.op_kind {
            OpKind::Full => self.n,
            _ => self.m.unwrap_or(0),
        }
    }

    pub fn operator_spec(&self) -> OperatorSpec {
        let m = self.measurements();
        match self.op_kind {
            OpKind::Full => OperatorSpec::Full,
            OpKind::Gaussian => OperatorSpec::Gaussian { m },
            OpKind::Entrywise => OperatorSpec::Entrywise { m },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d >= self.n {
            return Err(Error::invalid("d", format!("need 1 <= d < n, got d={}, n={}", self.d, self.n)));
        }
        if self.op_kind != OpKind::Full && self.m.is_none() {
            return Err(Error::invalid("m", "required for gaussian and entrywise sampling"));
        }
        self.operator_spec().validate(self.n)?;
        if !(self.zeta_star > 0.0 && self.zeta_star < 1.0) {
            return Err(Error::invalid("zeta_star", format!("must lie in (0, 1), got {}", self.zeta_star)));
        }
        if self.max_iters == Some(0) {
            return Err(Error::invalid("max_iters", "must be at least 1"));
        }
        if !(self.cap_factor > 0.0 && self.cap_factor.is_finite()) {
            return Err(Error::invalid("cap_factor", format!("must be positive, got {}", self.cap_factor)));
        }
        match self.init {
            InitSpec::PerturbedWithin { target } if !(target >= 0.0) => {
                return Err(Error::invalid("init.target", "must be nonnegative"));
            }
            InitSpec::RegionFraction { fraction } if !(fraction >= 0.0) => {
                return Err(Error::invalid("init.fraction", "must be nonnegative"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn heuristic_iterations(&self) -> Result<f64> {
        theory::heuristic_iterations(self.n, self.measurements(), self.d, self.zeta_star)
    }

    /// The explicit cap, or `ceil(cap_factor * heuristic_iterations)`.
    pub fn iteration_cap(&self) -> Result<u64> {
        match self.max_iters {
            Some(k) => Ok(k),
            None => Ok((self.cap_factor * self.heuristic_iterations()?).ceil().max(1.0) as u64),
        }
    }

    pub fn cap_rule(&self) -> String {
        match self.max_iters {
            Some(k) => format!("explicit cap of {k} iterations"),
            None => format!("{} x heuristic_iterations", self.cap_factor),
        }
    }

    fn grouse_config(&self) -> GrouseConfig {
        GrouseConfig {
            reorth_cadence: self.reorth_cadence,
            fault: self.fault,
            ..GrouseConfig::default()
        }
    }

    fn implicit_gaussian(&self) -> bool {
        self.op_kind == OpKind::Gaussian && self.gaussian_mode == GaussianMode::Implicit
    }
}

/// Truth and starting estimate for one trial.
pub fn setup_trial<R: Rng + ?Sized>(config: &TrialConfig, rng: &mut R) -> Result<(GroundTruth, GrouseState)> {
    config.validate()?;
    let truth = match config.truth_kind {
        TruthSpec::Dense => gen_dense_truth(config.n, config.d, rng)?,
        TruthSpec::Sparse { density } => gen_sparse_truth(config.n, config.d, density, rng)?,
    };
    let start = match config.init {
        InitSpec::Random => random_basis(config.n, config.d, rng)?,
        InitSpec::PerturbedWithin { target } => perturb_within_region(&truth.basis, target, rng)?,
        InitSpec::RegionFraction { fraction } => {
            let target = fraction * local_region_radius(config.n, config.d, truth.mu0);
            perturb_within_region(&truth.basis, target, rng)?
        }
    };
    Ok((truth, GrouseState::with_config(start, config.grouse_config())))
}

/// One observation: hidden `v` and, for explicit operators, the operator.
struct Observation {
    v: DVector<f64>,
    op: Option<SamplingOperator>,
}

fn observe<R: Rng + ?Sized>(
    config: &TrialConfig,
    truth: &GroundTruth,
    rng: &mut R,
) -> Result<Observation> {
    let v = truth.basis.as_matrix() * gen_coefficients(config.d, rng);
    let op = if config.implicit_gaussian() {
        None
    } else {
        Some(config.operator_spec().draw(config.n, rng)?)
    };
    Ok(Observation { v, op })
}

fn advance<R: Rng + ?Sized>(
    state: &mut GrouseState,
    obs: &Observation,
    m: usize,
    rng: &mut R,
) -> Result<StepReport> {
    match &obs.op {
        Some(op) => state.step(op, &op.apply(&obs.v)?),
        None => implicit_gaussian_step(state, &obs.v, m, rng),
    }
}

/// A greedy step under an `m x n` matrix `G / sqrt(n)` with i.i.d. standard
/// normal `G`, drawn lazily.
///
/// With `Q = [U, q]` an orthonormal basis of `span(U, v)`, only `G Q` enters
/// `A U` and `A v`. The complementary block `G Q_perp` is independent of it,
/// so `Q_perp (G Q_perp)^T r_tilde` is distributed as
/// `||r_tilde|| (I - Q Q^T) h` for a fresh standard-normal `h`.
pub fn implicit_gaussian_step<R: Rng + ?Sized>(
    state: &mut GrouseState,
    v: &DVector<f64>,
    m: usize,
    rng: &mut R,
) -> Result<StepReport> {
    let u = state.basis().as_matrix().clone();
    let (n, d) = u.shape();
    if v.len() != n {
        return Err(Error::dims(n, v.len()));
    }
    if m == 0 || m > n {
        return Err(Error::invalid("m", format!("need 1 <= m <= n, got m={m}, n={n}")));
    }
    let scale = (n as f64).recip().sqrt();
    let coeffs = u.tr_mul(v);
    let v_perp = v - &u * &coeffs;
    let perp_norm = v_perp.norm();
    let q = if perp_norm > 0.0 { v_perp / perp_norm } else { DVector::zeros(n) };

    let g_basis = DMatrix::from_iterator(m, d, rng.sample_iter::<f64, _>(StandardNormal).take(m * d));
    let g_extra = DVector::from_iterator(m, rng.sample_iter::<f64, _>(StandardNormal).take(m));
    let restricted = &g_basis * scale;
    let x = (&g_basis * &coeffs + &g_extra * perp_norm) * scale;

    let lift = |r_tilde: &DVector<f64>| -> Result<DVector<f64>> {
        let h = DVector::from_iterator(n, rng.sample_iter::<f64, _>(StandardNormal).take(n));
        let outside = &h - &u * u.tr_mul(&h) - &q * q.dot(&h);
        let inside = &u * g_basis.tr_mul(r_tilde) + &q * g_extra.dot(r_tilde);
        Ok((inside + outside * r_tilde.norm()) * scale)
    };
    state.step_with_lift(&restricted, &x, lift, None)
}

/// Keeps `Ubar^T U` current across rank-one updates; resynchronizes after
/// re-orthonormalization.
struct OverlapTracker {
    overlap: DMatrix<f64>,
}

impl OverlapTracker {
    fn new(u: &OrthonormalBasis, ubar: &OrthonormalBasis) -> Self {
        Self {
            overlap: ubar.as_matrix().tr_mul(u.as_matrix()),
        }
    }

    fn update(&mut self, report: &StepReport, u: &OrthonormalBasis, ubar: &OrthonormalBasis) {
        if report.reorthonormalized {
            self.overlap = ubar.as_matrix().tr_mul(u.as_matrix());
        } else if let Some(upd) = &report.update {
            let shift = ubar.as_matrix().tr_mul(&upd.left);
            self.overlap.ger(1.0, &shift, &upd.right, 1.0);
        }
    }

    fn zeta(&self) -> f64 {
        let det = self.overlap.clone().lu().determinant();
        (det * det).min(1.0)
    }
}

enum Similarity {
    Fast(OverlapTracker),
    Profile(PrincipalAngleProfile),
}

impl Similarity {
    fn zeta_kappa(&self) -> (f64, f64) {
        match self {
            Self::Fast(t) => {
                let z = t.zeta();
                (z, 1.0 - z)
            }
            Self::Profile(p) => (p.zeta, p.kappa),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub t: u64,
    pub zeta: f64,
    pub kappa: f64,
    pub theta: Option<f64>,
    pub norm_p: Option<f64>,
    pub norm_r_tilde: Option<f64>,
    pub norm_r: Option<f64>,
    pub delta: Option<f64>,
    pub det_lower_bound: Option<f64>,
    /// `None` for the initial record.
    pub status: Option<StepStatus>,
}

impl TrialRecord {
    pub const COLUMNS: [&'static str; 10] = [
        "t",
        "zeta",
        "kappa",
        "theta",
        "norm_p",
        "norm_r_tilde",
        "norm_r",
        "delta",
        "det_lower_bound",
        "status",
    ];

    pub fn status_label(&self) -> &'static str {
        self.status.map_or("initial", StepStatus::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    IterationCap,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub converged: bool,
    /// First `t` with `zeta_t >= zeta_star`.
    pub k_actual: Option<u64>,
    pub iterations_run: u64,
    pub stop_reason: StopReason,
    pub initial_zeta: f64,
    pub final_zeta: f64,
    pub updates: u64,
    pub skips: BTreeMap<String, u64>,
    pub max_iters: u64,
    pub heuristic_iterations: f64,
    pub cap_rule: String,
    pub mu0: f64,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSeries {
    pub records: Vec<TrialRecord>,
    pub summary: TrialSummary,
}

pub fn run_trial(config: &TrialConfig) -> Result<TrialSeries> {
    run_trial_indexed(config, 0, true)
}

/// Runs trial `trial` of the experiment seeded by `config.seed`. With
/// `keep_records == false` only the initial record is kept.
pub fn run_trial_indexed(config: &TrialConfig, trial: u64, keep_records: bool) -> Result<TrialSeries> {
    let started = Instant::now();
    config.validate()?;
    let cap = config.iteration_cap()?;
    let heuristic = config.heuristic_iterations()?;
    let mut rng = trial_rng(config.seed, trial);
    let (truth, mut state) = setup_trial(config, &mut rng)?;
    let ubar = &truth.basis;
    let full = config.diagnostics_level == DiagnosticsLevel::Full;
    let m = config.measurements();

    let mut sim = if full {
        Similarity::Profile(principal_angles(state.basis(), ubar)?)
    } else {
        Similarity::Fast(OverlapTracker::new(state.basis(), ubar))
    };
    let (initial_zeta, initial_kappa) = sim.zeta_kappa();
    let mut records = vec![TrialRecord {
        t: 0,
        zeta: initial_zeta,
        kappa: initial_kappa,
        theta: None,
        norm_p: None,
        norm_r_tilde: None,
        norm_r: None,
        delta: None,
        det_lower_bound: None,
        status: None,
    }];

    let mut zeta = initial_zeta;
    let mut k_actual = (zeta >= config.zeta_star).then_some(0);
    let mut stop = StopReason::IterationCap;
    let mut updates = 0;
    let mut skips: BTreeMap<String, u64> = BTreeMap::new();
    let mut idle = 0;
    let mut t = 0;
    if k_actual.is_some() {
        stop = StopReason::Converged;
    }

    while k_actual.is_none() && t < cap {
        t += 1;
        let obs = observe(config, &truth, &mut rng)?;
        let delta = match (&obs.op, full) {
            (Some(op), true) => theory::delta_term(state.basis(), ubar, op, &obs.v).ok(),
            _ => None,
        };
        let report = advance(&mut state, &obs, m, &mut rng)?;
        match &mut sim {
            Similarity::Fast(tracker) => tracker.update(&report, state.basis(), ubar),
            Similarity::Profile(p) => *p = principal_angles(state.basis(), ubar)?,
        }
        let (z, kappa) = sim.zeta_kappa();
        zeta = z;

        if report.status.is_updated() {
            updates += 1;
            idle = 0;
        } else {
            *skips.entry(report.status.as_str().to_string()).or_default() += 1;
            idle += 1;
        }
        if keep_records {
            let det_lower_bound = match (report.status.is_updated(), delta) {
                (true, Some(dl)) => {
                    theory::step_lower_bound_undersampled(report.norm_p, report.norm_r_tilde, report.norm_r, dl).ok()
                }
                _ => None,
            };
            records.push(TrialRecord {
                t,
                zeta,
                kappa,
                theta: Some(report.theta),
                norm_p: Some(report.norm_p),
                norm_r_tilde: Some(report.norm_r_tilde),
                norm_r: Some(report.norm_r),
                delta,
                det_lower_bound,
                status: Some(report.status),
            });
        }
        if zeta >= config.zeta_star {
            k_actual = Some(t);
            stop = StopReason::Converged;
        } else if idle >= STALL_WINDOW {
            stop = StopReason::Stalled;
            break;
        }
    }

    Ok(TrialSeries {
        records,
        summary: TrialSummary {
            converged: k_actual.is_some(),
            k_actual,
            iterations_run: t,
            stop_reason: stop,
            initial_zeta,
            final_zeta: zeta,
            updates,
            skips,
            max_iters: cap,
            heuristic_iterations: heuristic,
            cap_rule: config.cap_rule(),
            mu0: truth.mu0,
            wall_time_secs: started.elapsed().as_secs_f64(),
        },
    })
}

/// Which expected-improvement bound a histogram is judged against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum RateModel {
    Full,
    Missing,
    Compressive { delta: f64 },
}

impl RateModel {
    pub fn for_config(config: &TrialConfig, cs_delta: f64) -> Self {
        match config.op_kind {
            OpKind::Full => Self::Full,
            OpKind::Entrywise => Self::Missing,
            OpKind::Gaussian => Self::Compressive { delta: cs_delta },
        }
    }

    /// Theory rate at similarity `zeta` and largest principal angle `phi_d`.
    pub fn rate(&self, zeta: f64, phi_d: f64, n: usize, d: usize, m: usize) -> Result<f64> {
        match *self {
            Self::Full => Ok(theory::expected_rate_full(zeta, d)),
            Self::Missing => Ok(theory::expected_rate_missing(zeta, d, m, n)?.rate),
            Self::Compressive { delta } => Ok(theory::expected_rate_cs(zeta, d, m, n, delta, phi_d)?.rate),
        }
    }

    fn depends_on_angle(&self) -> bool {
        matches!(self, Self::Compressive { .. })
    }
}

/// Axis along which histogram steps are binned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinScale {
    /// Equal-width bins of `zeta` over `[0, 1]`.
    Zeta,
    /// Equal-width bins of `log10(kappa)` over `[log10(min_kappa), 0]`.
    LogKappa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramOptions {
    pub bins: usize,
    pub scale: BinScale,
    /// Steps starting below this discrepancy are not recorded, and a trial
    /// ends once it drops below it.
    pub min_kappa: f64,
    pub model: RateModel,
}

impl HistogramOptions {
    pub fn for_config(config: &TrialConfig, cs_delta: f64) -> Self {
        Self {
            bins: DEFAULT_BINS,
            scale: BinScale::Zeta,
            min_kappa: DEFAULT_MIN_KAPPA,
            model: RateModel::for_config(config, cs_delta),
        }
    }

    fn coordinate(&self, zeta: f64, kappa: f64) -> f64 {
        match self.scale {
            BinScale::Zeta => zeta,
            BinScale::LogKappa => {
                let lo = self.min_kappa.log10();
                (kappa.log10() - lo) / -lo
            }
        }
    }

    fn zeta_at(&self, coordinate: f64) -> f64 {
        match self.scale {
            BinScale::Zeta => coordinate,
            BinScale::LogKappa => {
                let lo = self.min_kappa.log10();
                1.0 - 10f64.powf(lo - coordinate * lo)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Bin edges in the histogram's [`BinScale`] units.
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_zeta: f64,
    pub mean_ratio: f64,
    /// Mean of `zeta_{t+1}/zeta_t - 1`, accumulated without cancellation.
    pub mean_excess: f64,
    pub std_error: f64,
    /// Mean of the per-step theory rates in this bin.
    pub theory_rate: f64,
    /// Theory rate at the bin center, when it does not depend on the angle.
    pub theory_at_center: Option<f64>,
    /// `mean_excess >= theory_rate - 1 - 3 std_error`; `None` when too sparse.
    pub passes: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementHistogram {
    pub model: RateModel,
    pub scale: BinScale,
    pub trials: usize,
    pub bins: Vec<HistogramBin>,
    pub total_steps: usize,
    /// Steps from `zeta == 0`, where the ratio is undefined.
    pub undefined_steps: usize,
    pub min_kappa: f64,
}

impl ImprovementHistogram {
    pub fn all_pass(&self) -> bool {
        self.bins.iter().all(|b| b.passes != Some(false))
    }

    pub fn judged_bins(&self) -> usize {
        self.bins.iter().filter(|b| b.passes.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy)]
struct RatioSample {
    zeta: f64,
    kappa: f64,
    excess: f64,
    theory_excess: f64,
}

#[derive(Default)]
struct TrialSamples {
    samples: Vec<RatioSample>,
    undefined: usize,
}

fn ratio_trial(config: &TrialConfig, trial: u64, num_steps: usize, opts: &HistogramOptions) -> Result<TrialSamples> {
    let mut rng = trial_rng(config.seed, trial);
    let (truth, mut state) = setup_trial(config, &mut rng)?;
    let (n, d, m) = (config.n, config.d, config.measurements());
    let mut before = principal_angles(state.basis(), &truth.basis)?;
    let mut out = TrialSamples::default();
    for _ in 0..num_steps {
        if before.kappa < opts.min_kappa {
            break;
        }
        let obs = observe(config, &truth, &mut rng)?;
        advance(&mut state, &obs, m, &mut rng)?;
        let after = principal_angles(state.basis(), &truth.basis)?;
        if before.zeta == 0.0 {
            out.undefined += 1;
        } else {
            let theory = opts.model.rate(before.zeta, before.largest_angle(), n, d, m)?;
            out.samples.push(RatioSample {
                zeta: before.zeta,
                kappa: before.kappa,
                excess: (after.log_zeta - before.log_zeta).exp_m1(),
                theory_excess: theory - 1.0,
            });
        }
        before = after;
    }
    Ok(out)
}

/// Binned empirical `E[zeta_{t+1}/zeta_t]` against the theory rate.
pub fn monte_carlo_ratio(
    config: &TrialConfig,
    num_steps: usize,
    num_trials: usize,
    opts: &HistogramOptions,
) -> Result<ImprovementHistogram> {
    config.validate()?;
    if opts.bins == 0 {
        return Err(Error::invalid("bins", "must be at least 1"));
    }
    if !(opts.min_kappa > 0.0 && opts.min_kappa < 1.0) {
        return Err(Error::invalid("min_kappa", format!("must lie in (0, 1), got {}", opts.min_kappa)));
    }
    let per_trial: Vec<TrialSamples> = (0..num_trials as u64)
        .into_par_iter()
        .map(|trial| ratio_trial(config, trial, num_steps, opts))
        .collect::<Result<_>>()?;

    #[derive(Default, Clone)]
    struct Acc {
        count: usize,
        zeta: f64,
        excess: f64,
        excess_sq: f64,
        theory: f64,
    }
    let mut acc = vec![Acc::default(); opts.bins];
    let mut undefined = 0;
    for trial in &per_trial {
        undefined += trial.undefined;
        for s in &trial.samples {
            let coord = opts.coordinate(s.zeta, s.kappa).clamp(0.0, 1.0);
            let idx = ((coord * opts.bins as f64) as usize).min(opts.bins - 1);
            let a = &mut acc[idx];
            a.count += 1;
            a.zeta += s.zeta;
            a.excess += s.excess;
            a.excess_sq += s.excess * s.excess;
            a.theory += s.theory_excess;
        }
    }

    let (n, d, m) = (config.n, config.d, config.measurements());
    let width = 1.0 / opts.bins as f64;
    let mut bins = Vec::with_capacity(opts.bins);
    for (i, a) in acc.iter().enumerate() {
        let lower = i as f64 * width;
        let center = lower + width / 2.0;
        let theory_at_center = if opts.model.depends_on_angle() {
            None
        } else {
            Some(opts.model.rate(opts.zeta_at(center), 0.0, n, d, m)?)
        };
        let count = a.count;
        let cf = count as f64;
        let (mean_zeta, mean_excess, theory_excess) = if count > 0 {
            (a.zeta / cf, a.excess / cf, a.theory / cf)
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        let std_error = if count >= MIN_BIN_COUNT {
            let var = ((a.excess_sq - cf * mean_excess * mean_excess) / (cf - 1.0)).max(0.0);
            (var / cf).sqrt()
        } else {
            f64::NAN
        };
        let passes = (count >= MIN_BIN_COUNT).then(|| mean_excess >= theory_excess - 3.0 * std_error);
        bins.push(HistogramBin {
            lower,
            upper: lower + width,
            count,
            mean_zeta,
            mean_ratio: 1.0 + mean_excess,
            mean_excess,
            std_error,
            theory_rate: 1.0 + theory_excess,
            theory_at_center,
            passes,
        });
    }
    let total_steps = acc.iter().map(|a| a.count).sum();
    Ok(ImprovementHistogram {
        model: opts.model,
        scale: opts.scale,
        trials: num_trials,
        bins,
        total_steps,
        undefined_steps: undefined,
        min_kappa: opts.min_kappa,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub ns: Vec<usize>,
    pub ds: Vec<usize>,
    /// Ignored for full sampling, where each cell uses `m = n`.
    #[serde(default)]
    pub ms: Vec<usize>,
}

impl SweepGrid {
    pub fn cells(&self, op_kind: OpKind) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &n in &self.ns {
            for &d in &self.ds {
                if op_kind == OpKind::Full {
                    out.push((n, d, n));
                } else {
                    out.extend(self.ms.iter().map(|&m| (n, d, m)));
                }
            }
        }
        out
    }
}

/// Normalizer for `K_actual` in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum BoundKind {
    /// `(n/m)(d^2 ln n + d ln(1/(1 - zeta_star)))`.
    #[default]
    Heuristic,
    /// `K1 + K2` of the full-sampling convergence theorem.
    FullTheorem { rho: f64, c: f64 },
}

impl BoundKind {
    pub fn evaluate(&self, n: usize, d: usize, m: usize, zeta_star: f64) -> Result<f64> {
        match *self {
            Self::Heuristic => theory::heuristic_iterations(n, m, d, zeta_star),
            Self::FullTheorem { rho, c } => Ok(theory::iteration_bound_full(n, d, rho, zeta_star, c)?.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub trials: usize,
    pub bound: f64,
    /// Over converged trials; `NaN` when none converged.
    pub mean_ratio: f64,
    pub var_ratio: f64,
    pub fail_frac: f64,
    pub k_actual: Vec<Option<u64>>,
}

impl SweepCell {
    pub fn coefficient_of_variation(&self) -> f64 {
        self.var_ratio.sqrt() / self.mean_ratio
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub bound: BoundKind,
    pub cap_rule: String,
}

pub fn sweep(base: &TrialConfig, grid: &SweepGrid, trials_per_cell: usize, bound: BoundKind) -> Result<SweepResult> {
    let cells = grid.cells(base.op_kind);
    if cells.is_empty() {
        return Err(Error::invalid("grid", "has no cells"));
    }
    if trials_per_cell == 0 {
        return Err(Error::invalid("trials_per_cell", "must be at least 1"));
    }
    let configs: Vec<TrialConfig> = cells
        .iter()
        .map(|&(n, d, m)| {
            let mut c = base.clone();
            c.n = n;
            c.d = d;
            c.m = (base.op_kind != OpKind::Full).then_some(m);
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;

    let tasks: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| (0..trials_per_cell as u64).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<Option<u64>> = tasks
        .par_iter()
        .map(|&(c, t)| {
            let stream = ((c as u64) << 32) | t;
            run_trial_indexed(&configs[c], stream, false).map(|s| s.summary.k_actual)
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(configs.len());
    for (c, ((n, d, m), config)) in cells.iter().zip(&configs).enumerate() {
        let ks: Vec<Option<u64>> = outcomes[c * trials_per_cell..(c + 1) * trials_per_cell].to_vec();
        let bound_value = bound.evaluate(*n, *d, *m, config.zeta_star)?;
        let ratios: Vec<f64> = ks.iter().flatten().map(|k| *k as f64 / bound_value).collect();
        let (mean, var) = mean_and_variance(&ratios);
        out.push(SweepCell {
            n: *n,
            d: *d,
            m: *m,
            trials: trials_per_cell,
            bound: bound_value,
            mean_ratio: mean,
            var_ratio: var,
            fail_frac: (trials_per_cell - ratios.len()) as f64 / trials_per_cell as f64,
            k_actual: ks,
        });
    }
    Ok(SweepResult {
        cells: out,
        bound,
        cap_rule: base.cap_rule(),
    })
}

/// Sample mean and unbiased variance; `NaN` where undefined.
fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub tolerance: f64,
    pub max_violation: f64,
    pub samples: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub steps: usize,
    pub updated_steps: usize,
    pub checks: Vec<IdentityCheck>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&IdentityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    max_violation: f64,
    samples: usize,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            max_violation: 0.0,
            samples: 0,
        }
    }

    fn observe(&mut self, violation: f64) {
        self.samples += 1;
        // NaN counts as a violation.
        if violation.is_nan() {
            self.max_violation = f64::INFINITY;
        } else {
            self.max_violation = self.max_violation.max(violation);
        }
    }

    fn finish(self) -> IdentityCheck {
        IdentityCheck {
            name: self.name.to_string(),
            tolerance: self.tolerance,
            max_violation: self.max_violation,
            samples: self.samples,
            passed: self.max_violation <= self.tolerance,
        }
    }
}

/// Replays `num_steps` steps of trial 0 and records the largest violation of
/// each deterministic identity. Gaussian operators are materialized.
pub fn verify_step_invariants(config: &TrialConfig, num_steps: usize) -> Result<VerificationReport> {
    let mut config = config.clone();
    config.gaussian_mode = GaussianMode::Explicit;
    config.validate()?;
    let mut rng: ChaCha8Rng = trial_rng(config.seed, 0);
    let (truth, mut state) = setup_trial(&config, &mut rng)?;
    let ubar = &truth.basis;
    let full_op = config.op_kind == OpKind::Full;

    let mut residual_orth = Tally::new("residual_orthogonality", 1e-10);
    let mut parallel = Tally::new("projection_parallel_part", 1e-8);
    let mut full_ratio = Tally::new("full_data_ratio", 1e-9);
    let mut monotone = Tally::new("full_data_monotone", 1e-12);
    let mut schur = Tally::new("determinant_update", 1e-9);
    let mut lower = Tally::new("undersampled_lower_bound", 1e-9);
    let mut zeta_floor = Tally::new("zeta_above_one_minus_discrepancy", 1e-12);
    let mut angle = Tally::new("largest_angle_residual_bound", 1e-9);
    let mut procrustes = Tally::new("procrustes_sandwich", 1e-9);
    let mut ortho = Tally::new("orthonormality", 1e-8);
    let mut skipped = Tally::new("skipped_step_unchanged", 0.0);
    let mut region = Tally::new("incoherence_in_local_region", 1e-12);

    let mut before = principal_angles(state.basis(), ubar)?;
    let mut updated_steps = 0;
    for _ in 0..num_steps {
        let obs = observe(&config, &truth, &mut rng)?;
        let op = obs.op.as_ref().expect("explicit operator");
        let v = &obs.v;
        let x = op.apply(v)?;
        let u_before = state.basis().clone();
        let v_norm = v.norm();

        zeta_floor.observe((1.0 - before.frob_discrepancy) - before.zeta);
        let dist = procrustes_distance(&u_before, ubar)?;
        let dsq = dist * dist;
        procrustes.observe((before.frob_discrepancy - dsq).max(dsq - 2.0 * before.frob_discrepancy).max(0.0));
        if local_region_check(&u_before, ubar, truth.mu0)? {
            region.observe((subspace_incoherence(&u_before) - 2.0 * truth.mu0).max(0.0));
        }
        let (v_par, v_perp) = project(&u_before, v)?;
        let lhs = ubar.as_matrix().tr_mul(&v_perp).norm();
        angle.observe((lhs - before.sin_largest() * v_perp.norm()).max(0.0) / v_norm.max(1.0));

        let restricted = op.restrict_basis(&u_before)?;
        let delta = theory::delta_term(&u_before, ubar, op, v).ok();
        let det_before = crate::metrics::overlap_determinant(&u_before, ubar)?;
        let report = state.step(op, &x)?;
        let after = principal_angles(state.basis(), ubar)?;
        ortho.observe(orthonormality_error(state.basis().as_matrix()));

        if report.status.is_updated() {
            updated_steps += 1;
            residual_orth.observe(restricted.tr_mul(&report.r_tilde).amax() / x.norm().max(f64::MIN_POSITIVE));
            if let Ok(w_perp) = least_squares(&restricted, &op.apply(&v_perp)?) {
                let p_par = u_before.as_matrix() * (&report.w - w_perp);
                parallel.observe((p_par - &v_par).norm() / v_norm.max(f64::MIN_POSITIVE));
            }
            if before.zeta > 0.0 {
                let ratio = (after.log_zeta - before.log_zeta).exp();
                if full_op {
                    if let Ok(expected) = theory::exact_full_ratio(v_par.norm(), v_perp.norm()) {
                        full_ratio.observe((ratio - expected).abs() / expected);
                    }
                }
                if let Some(dl) = delta {
                    let bound = theory::step_lower_bound_undersampled(
                        report.norm_p,
                        report.norm_r_tilde,
                        report.norm_r,
                        dl,
                    )?;
                    lower.observe((bound - ratio).max(0.0) / bound.abs().max(1.0));
                    let factor =
                        theory::determinant_update_factor(report.norm_p, report.norm_r_tilde, report.norm_r, dl)?;
                    let det_after = crate::metrics::overlap_determinant(state.basis(), ubar)?;
                    let predicted = det_before * factor;
                    schur.observe((det_after - predicted).abs() / predicted.abs());
                }
            }
        } else {
            skipped.observe((state.basis().as_matrix() - u_before.as_matrix()).norm());
        }
        if full_op {
            monotone.observe((before.zeta - after.zeta).max(0.0));
        }
        before = after;
    }

    let checks: Vec<IdentityCheck> = [
        residual_orth,
        parallel,
        full_ratio,
        monotone,
        schur,
        lower,
        zeta_floor,
        angle,
        procrustes,
        ortho,
        skipped,
        region,
    ]
    .into_iter()
    .map(Tally::finish)
    .collect();
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerificationReport {
        steps: num_steps,
        updated_steps,
        checks,
        passed,
    })
}
