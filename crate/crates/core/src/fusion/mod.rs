//! Fusion center: noise injection at the sensors, covariance-intersection
//! fusion of the released estimates, the accuracy-loss diagnostic and the
//! feedback rule.
//!
//! Fusion works in information form:
//!
//! ```text
//! P_f⁻¹ = Σ_i w_i P̄_i⁻¹,      x_f = P_f Σ_i w_i P̄_i⁻¹ x̄_i
//! ```
//!
//! with `x̄_i = x̂_i + ω_i`, `ω_i ~ N(0, Σ_i)` and `P̄_i = P_i + Σ_i`.

mod pipeline;

pub use pipeline::{
    run_algorithm_1, run_algorithm_2, FusionPipeline, NoisePlan, PipelineOptions, RunRecord,
    SdpDiagnostics, StepPlan, StepRecord,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::filter::{FilterError, FilterState};
use crate::linalg::{self, LinalgError};
use crate::model::ModelError;
use crate::privacy::PrivacyError;
use crate::streams::gaussian_from_factor;

/// Slack in the PSD comparison used by the feedback rule.
pub const DOMINANCE_TOLERANCE: f64 = 1e-9;

/// Largest accepted Frobenius discrepancy between the two accuracy-loss forms.
pub const ACCURACY_LOSS_TOLERANCE: f64 = 1e-8;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("{matrix} of sensor {} is singular (condition number {condition:.3e})", sensor + 1)]
    Singular {
        matrix: &'static str,
        sensor: usize,
        condition: f64,
    },
    #[error("fused information matrix is singular (condition number {condition:.3e})")]
    SingularFusion { condition: f64 },
    #[error("noise covariance of sensor {} is not PSD (minimum eigenvalue {min_eigenvalue:.3e})", sensor + 1)]
    NoiseNotPsd { sensor: usize, min_eigenvalue: f64 },
    #[error("accuracy-loss forms disagree by {discrepancy:.3e} (Frobenius)")]
    AccuracyLossMismatch { discrepancy: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("step {step}, sensor {}: {source}", sensor + 1)]
    Filter {
        step: usize,
        sensor: usize,
        #[source]
        source: FilterError,
    },
    #[error("step {step}: {source}")]
    Privacy {
        step: usize,
        #[source]
        source: PrivacyError,
    },
    #[error("step {step}: privacy certificate fails (achieved delta {delta_achieved:.3e})")]
    Uncertified { step: usize, delta_achieved: f64 },
    #[error("model does not satisfy the filter assumptions: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Covariance-intersection weights: nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    pub fn new(w: Vec<f64>) -> Result<Self, FusionError> {
        if w.is_empty() {
            return Err(FusionError::Weights("no weights given".into()));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(FusionError::Weights(format!("{w:?} has a negative or non-finite entry")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(FusionError::Weights(format!("{w:?} sums to {sum}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::str::FromStr for FusionWeights {
    type Err = FusionError;

    /// Comma-separated, e.g. `0.4,0.6`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let w = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| FusionError::Weights(format!("`{t}`: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(w)
    }
}

impl std::fmt::Display for FusionWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| format!("{w}")).collect();
        write!(f, "{}", parts.join("/"))
    }
}

/// A released local estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyLocal {
    pub x_bar: DVector<f64>,
    pub p_bar: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub x_fused: DVector<f64>,
    pub p_fused: DMatrix<f64>,
    pub delta_p: Option<DMatrix<f64>>,
    pub weights: FusionWeights,
}

fn singular(matrix: &'static str, sensor: usize) -> impl Fn(LinalgError) -> FusionError {
    move |e| match e {
        LinalgError::Singular { condition, .. } => FusionError::Singular {
            matrix,
            sensor,
            condition,
        },
        other => FusionError::Dimension(other.to_string()),
    }
}

/// Adds `ω ~ N(0, Σ)` to the local estimate.
pub fn inject_noise<R: Rng + ?Sized>(
    local: &FilterState,
    sigma: &DMatrix<f64>,
    rng: &mut R,
) -> Result<NoisyLocal, FusionError> {
    let factor = linalg::psd_factor(sigma, "Σ").map_err(|e| match e {
        LinalgError::NotPsd { min_eigenvalue, .. } => FusionError::NoiseNotPsd {
            sensor: 0,
            min_eigenvalue,
        },
        other => FusionError::Dimension(other.to_string()),
    })?;
    inject_noise_with_factor(local, sigma, &factor, rng)
}

/// [`inject_noise`] with a precomputed factor `L`, `L Lᵀ = Σ`.
pub fn inject_noise_with_factor<R: Rng + ?Sized>(
    local: &FilterState,
    sigma: &DMatrix<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> Result<NoisyLocal, FusionError> {
    let n = local.x_hat.len();
    if sigma.shape() != (n, n) || factor.nrows() != n {
        return Err(FusionError::Dimension(format!(
            "noise covariance {}x{} for state dimension {n}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let x_bar = if sigma.iter().all(|&v| v == 0.0) {
        local.x_hat.clone()
    } else {
        &local.x_hat + gaussian_from_factor(factor, rng)
    };
    Ok(NoisyLocal {
        x_bar,
        p_bar: &local.p + sigma,
    })
}

/// Covariance intersection in information form. Sensors with zero weight are
/// skipped.
pub fn ci_fuse(locals: &[NoisyLocal], weights: &FusionWeights) -> Result<FusionResult, FusionError> {
    if locals.len() != weights.len() {
        return Err(FusionError::Weights(format!(
            "{} weights for {} sensors",
            weights.len(),
            locals.len()
        )));
    }
    let n = locals[0].x_bar.len();
    let mut info = DMatrix::zeros(n, n);
    let mut info_x = DVector::zeros(n);
    let mut active = false;
    for (i, (local, &w)) in locals.iter().zip(weights.as_slice()).enumerate() {
        if w == 0.0 {
            continue;
        }
        let p_inv = linalg::spd_inverse(&local.p_bar, "P̄").map_err(singular("P̄", i))?;
        info_x += &p_inv * &local.x_bar * w;
        info += p_inv * w;
        active = true;
    }
    if !active {
        return Err(FusionError::Weights("all weights are zero".into()));
    }
    let p_fused = linalg::spd_inverse(&info, "P_f⁻¹").map_err(|e| match e {
        LinalgError::Singular { condition, .. } => FusionError::SingularFusion { condition },
        other => FusionError::Dimension(other.to_string()),
    })?;
    Ok(FusionResult {
        x_fused: &p_fused * info_x,
        p_fused,
        delta_p: None,
        weights: weights.clone(),
    })
}

/// Accuracy lost to the privacy noise,
/// `ΔP = P_f (Σ_i w_i P_i⁻¹ Σ_i (P_i + Σ_i)⁻¹) P_np`, checked against
/// `P_f − P_np`.
pub fn accuracy_loss(
    p_locals: &[DMatrix<f64>],
    sigmas: &[DMatrix<f64>],
    weights: &FusionWeights,
    p_fused: &DMatrix<f64>,
    p_nonprivate: &DMatrix<f64>,
) -> Result<DMatrix<f64>, FusionError> {
    if p_locals.len() != sigmas.len() || p_locals.len() != weights.len() {
        return Err(FusionError::Dimension(format!(
            "{} covariances, {} noise blocks, {} weights",
            p_locals.len(),
            sigmas.len(),
            weights.len()
        )));
    }
    let n = p_fused.nrows();
    let mut middle = DMatrix::zeros(n, n);
    for (i, ((p, s), &w)) in p_locals.iter().zip(sigmas).zip(weights.as_slice()).enumerate() {
        if w == 0.0 {
            continue;
        }
        let p_inv = linalg::spd_inverse(p, "P").map_err(singular("P", i))?;
        let pbar_inv = linalg::spd_inverse(&(p + s), "P̄").map_err(singular("P̄", i))?;
        middle += p_inv * s * pbar_inv * w;
    }
    let delta_p = p_fused * middle * p_nonprivate;
    let discrepancy = (&delta_p - (p_fused - p_nonprivate)).norm();
    if !(discrepancy <= ACCURACY_LOSS_TOLERANCE) {
        return Err(FusionError::AccuracyLossMismatch { discrepancy });
    }
    Ok(delta_p)
}

/// `true` when `P_fused ⪯ P_local` up to [`DOMINANCE_TOLERANCE`].
pub fn fused_dominates(p_fused: &DMatrix<f64>, p_local: &DMatrix<f64>) -> bool {
    linalg::psd_le(p_fused, p_local, DOMINANCE_TOLERANCE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackDecision {
    pub state: FilterState,
    pub adopted: bool,
}

/// Replaces the local pair by the fused pair when the fused covariance is no
/// larger in the PSD order; keeps the local pair otherwise.
pub fn feedback_update(local: &FilterState, fused: &FusionResult) -> FeedbackDecision {
    if fused_dominates(&fused.p_fused, &local.p) {
        FeedbackDecision {
            state: FilterState {
                x_hat: fused.x_fused.clone(),
                p: fused.p_fused.clone(),
                ..local.clone()
            },
            adopted: true,
        }
    } else {
        FeedbackDecision {
            state: local.clone(),
            adopted: false,
        }
    }
}

/// Which pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Local filters and CI fusion without privacy noise.
    NonPrivate,
    /// Private fusion; sensors keep their own estimates.
    Alg1,
    /// Private fusion with feedback of the fused estimate.
    Alg2,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::NonPrivate => "nonprivate",
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
        }
    }

    pub fn is_private(&self) -> bool {
        !matches!(self, Algorithm::NonPrivate)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nonprivate" => Ok(Algorithm::NonPrivate),
            "alg1" => Ok(Algorithm::Alg1),
            "alg2" => Ok(Algorithm::Alg2),
            other => Err(format!("unknown algorithm `{other}` (nonprivate|alg1|alg2)")),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
