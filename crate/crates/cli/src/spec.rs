//! Config documents for each subcommand.
//!
//! `run` reads a bare trial config. `sweep` and `verify` nest one under
//! `base` and `trial` respectively. `bounds` reads theory parameters only.

use std::path::Path;

use grassmann_stream::harness::{BoundKind, SweepGrid, DEFAULT_ZETA_STAR};
use grassmann_stream::TrialConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::ConfigParse {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: TrialConfig,
    pub grid: SweepGrid,
    pub trials: usize,
    #[serde(default)]
    pub bound: BoundKind,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub trials: usize,
    pub steps: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Distortion used by the compressive rate model.
    #[serde(default = "default_cs_delta")]
    pub cs_delta: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            trials: 10,
            steps: 500,
            bins: default_bins(),
            cs_delta: default_cs_delta(),
        }
    }
}

fn default_bins() -> usize {
    grassmann_stream::harness::DEFAULT_BINS
}

fn default_cs_delta() -> f64 {
    1e-6
}

fn default_steps() -> usize {
    2000
}

fn default_histogram() -> Option<HistogramSpec> {
    Some(HistogramSpec::default())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    pub trial: TrialConfig,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Set to `null` to skip the Monte Carlo histogram.
    #[serde(default = "default_histogram")]
    pub histogram: Option<HistogramSpec>,
}

fn default_rho() -> f64 {
    0.1
}

fn default_c() -> f64 {
    1.0
}

fn default_zeta() -> f64 {
    0.5
}

fn default_delta() -> f64 {
    0.1
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub n: usize,
    pub d: usize,
    /// Measurements per observation; defaults to `n`.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Constant in the expected initial similarity `c (d/(n e))^d`.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_zeta_star")]
    pub zeta_star: f64,
    /// Similarity at which per-step rates are evaluated.
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub phi_d: f64,
    #[serde(default = "one")]
    pub mu0: f64,
    #[serde(default = "one")]
    pub mu_vperp: f64,
}

fn default_zeta_star() -> f64 {
    DEFAULT_ZETA_STAR
}

impl BoundsSpec {
    pub fn measurements(&self) -> usize {
        self.m.unwrap_or(self.n)
    }
}
