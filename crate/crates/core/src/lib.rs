//! Streaming subspace estimation on the Grassmannian.
//!
//! The estimator ([`GrouseState`]) consumes one compressed or partially
//! observed vector at a time and performs a rank-one geodesic update of an
//! orthonormal basis. Companion modules measure progress against a known
//! ground truth ([`metrics`]), evaluate closed-form convergence bounds
//! ([`theory`]), generate synthetic streams ([`datagen`]), and run seeded
//! Monte Carlo experiments ([`harness`]).

pub mod datagen;
pub mod error;
pub mod grouse;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod sampling;
pub mod theory;

pub use error::{Error, Result};
pub use grouse::{GrouseConfig, GrouseState, RankOneUpdate, StepReport, StepStatus, UpdateFault};
pub use metrics::{principal_angles, PrincipalAngleProfile};
pub use numerics::{least_squares, orthonormalize, LeastSquares, OrthonormalBasis};
pub use sampling::SamplingOperator;
pub use datagen::{GroundTruth, OperatorSpec, StreamSample, TruthKind};
pub use harness::{TrialConfig, TrialSeries};
pub use theory::{ComplexityBound, RateBound};
