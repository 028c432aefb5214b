//! Unbiased minimum-variance filter for systems with an unknown input.
//!
//! Prediction is the usual Kalman time update. The measurement update removes
//! the effect of the unknown `d_{k-1}` from the estimate:
//!
//! ```text
//! F = C P⁻ Cᵀ + R              K = P⁻ Cᵀ F⁻¹
//! H = Bᵀ Cᵀ F⁻¹ C B            E = B − K C B
//! G = K + E H⁻¹ Bᵀ Cᵀ F⁻¹
//! x̂ = x⁻ + G (y − C x⁻)
//! P = P⁻ − K C P⁻ + E H⁻¹ Eᵀ
//! ```
//!
//! `B` is the input matrix of the previous step. None of the covariance
//! quantities read the measurement, so the whole covariance recursion can be
//! run ahead of time.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::model::{ModelError, SystemModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("matrix {matrix} is singular (condition number {condition:.3e})")]
    Singular { matrix: &'static str, condition: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<LinalgError> for FilterError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Singular { name, condition } => FilterError::Singular {
                matrix: name,
                condition,
            },
            other => FilterError::Dimension(other.to_string()),
        }
    }
}

/// Per-sensor filter state after a measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub x_pred: DVector<f64>,
    pub p_pred: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
}

impl FilterState {
    /// Prior state: `x̂ = x_pred = x0_mean`, `P = P_pred = P0`, empty gain.
    pub fn initial(x0_mean: &DVector<f64>, p0: &DMatrix<f64>) -> Self {
        let n = x0_mean.len();
        let p0 = linalg::symmetrize(p0);
        Self {
            x_hat: x0_mean.clone(),
            p: p0.clone(),
            x_pred: x0_mean.clone(),
            p_pred: p0,
            gain: DMatrix::zeros(n, 0),
            innovation_cov: DMatrix::zeros(0, 0),
        }
    }

    pub fn from_model(model: &SystemModel) -> Self {
        Self::initial(model.x0_mean(), model.p0())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub x_pred: DVector<f64>,
    pub p_pred: DMatrix<f64>,
}

/// Covariance part of the update, independent of the measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceUpdate {
    pub p: DMatrix<f64>,
    /// `P⁻ − K C P⁻`, the standard Kalman covariance without the input term.
    pub p_kalman: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
}

fn dim_check(name: &str, found: (usize, usize), expected: (usize, usize)) -> Result<(), FilterError> {
    if found == expected {
        Ok(())
    } else {
        Err(FilterError::Dimension(format!(
            "{name} is {}x{}, expected {}x{}",
            found.0, found.1, expected.0, expected.1
        )))
    }
}

pub fn predict(
    x_hat: &DVector<f64>,
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<Prediction, FilterError> {
    let n = x_hat.len();
    dim_check("P", p.shape(), (n, n))?;
    dim_check("A", a.shape(), (n, n))?;
    dim_check("Q", q.shape(), (n, n))?;
    Ok(Prediction {
        x_pred: a * x_hat,
        p_pred: linalg::symmetrize(&(a * p * a.transpose() + q)),
    })
}

pub fn update_covariance(
    p_pred: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<CovarianceUpdate, FilterError> {
    let n = p_pred.nrows();
    let m = c.nrows();
    dim_check("P_pred", p_pred.shape(), (n, n))?;
    dim_check("C", c.shape(), (m, n))?;
    dim_check("R", r.shape(), (m, m))?;
    dim_check("B", b.shape(), (n, b.ncols()))?;

    let pct = p_pred * c.transpose();
    let f = linalg::symmetrize(&(c * &pct + r));
    let f_inv = linalg::spd_inverse(&f, "F")?;
    let k = &pct * &f_inv;
    let p_kalman = linalg::symmetrize(&(p_pred - &k * c * p_pred));

    if b.ncols() == 0 {
        return Ok(CovarianceUpdate {
            p: p_kalman.clone(),
            p_kalman,
            gain: k,
            innovation_cov: f,
        });
    }

    let cb = c * b;
    let cbt_f_inv = cb.transpose() * &f_inv;
    let h = linalg::symmetrize(&(&cbt_f_inv * &cb));
    let h_inv = linalg::spd_inverse(&h, "BᵀCᵀF⁻¹CB")?;
    let e = b - &k * &cb;
    let gain = &k + &e * &h_inv * &cbt_f_inv;
    let p = linalg::symmetrize(&(&p_kalman + &e * &h_inv * e.transpose()));
    Ok(CovarianceUpdate {
        p,
        p_kalman,
        gain,
        innovation_cov: f,
    })
}

pub fn update(
    pred: &Prediction,
    y: &DVector<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<FilterState, FilterError> {
    if y.len() != c.nrows() {
        return Err(FilterError::Dimension(format!(
            "measurement has length {}, C has {} rows",
            y.len(),
            c.nrows()
        )));
    }
    let cov = update_covariance(&pred.p_pred, c, r, b)?;
    let x_hat = &pred.x_pred + &cov.gain * (y - c * &pred.x_pred);
    Ok(FilterState {
        x_hat,
        p: cov.p,
        x_pred: pred.x_pred.clone(),
        p_pred: pred.p_pred.clone(),
        gain: cov.gain,
        innovation_cov: cov.innovation_cov,
    })
}

/// One full step for `sensor` at time `k ≥ 1`: predict with `A_{k-1}`,
/// `Q_{k-1}`, then update with `C_{i,k}`, `R_{i,k}` and `B_{k-1}`.
pub fn step(
    prev: &FilterState,
    model: &SystemModel,
    sensor: usize,
    k: usize,
    y: &DVector<f64>,
) -> Result<FilterState, FilterError> {
    if k == 0 {
        return Err(FilterError::Dimension("filter steps start at k = 1".into()));
    }
    let pred = predict(&prev.x_hat, &prev.p, model.a(k - 1)?, model.q(k - 1)?)?;
    update(
        &pred,
        y,
        model.c(sensor, k)?,
        model.r(sensor, k)?,
        model.b(k - 1)?,
    )
}

/// Covariance-only version of [`step`].
pub fn step_covariance(
    p_prev: &DMatrix<f64>,
    model: &SystemModel,
    sensor: usize,
    k: usize,
) -> Result<(DMatrix<f64>, CovarianceUpdate), FilterError> {
    if k == 0 {
        return Err(FilterError::Dimension("filter steps start at k = 1".into()));
    }
    let a = model.a(k - 1)?;
    let p_pred = linalg::symmetrize(&(a * p_prev * a.transpose() + model.q(k - 1)?));
    let cov = update_covariance(
        &p_pred,
        model.c(sensor, k)?,
        model.r(sensor, k)?,
        model.b(k - 1)?,
    )?;
    Ok((p_pred, cov))
}
