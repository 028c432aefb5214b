//! Differentially private distributed fusion estimation.
//!
//! Sensors observe a linear time-varying plant driven by an unknown exogenous
//! input. Each sensor runs an unbiased minimum-variance filter, perturbs its
//! estimate with Gaussian noise shaped by a small semidefinite program so the
//! input stays (ε, δ)-differentially private, and a fusion center combines the
//! noisy estimates by covariance intersection. An optional feedback step hands
//! the fused estimate back to sensors it dominates.
//!
//! Module map:
//!
//! - [`model`]: plant, sensors, input signals and trajectory simulation.
//! - [`filter`]: per-sensor prediction and unknown-input update.
//! - [`privacy`]: Q-function, query geometry, sensitivity constant, certificate.
//! - [`sdp`]: ADMM solver for the noise-design SDP.
//! - [`fusion`]: noise injection, covariance intersection, both algorithms.
//! - [`harness`]: configs, Monte Carlo experiments and CSV reports.

pub mod filter;
pub mod fusion;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod privacy;
pub mod scenario;
pub mod sdp;
pub mod streams;

pub use filter::{FilterError, FilterState};
pub use fusion::{Algorithm, FusionError, FusionPipeline, FusionResult, FusionWeights, NoisyLocal};
pub use model::{InputSignal, ModelError, SystemModel, Trajectory};
pub use privacy::{Certificate, PrivacyParams, QueryGeometry, SensitivityRule};
pub use sdp::{SdpProblem, SdpSettings, SdpSolution, SolveStatus};
