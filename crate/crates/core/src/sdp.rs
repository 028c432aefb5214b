//! Noise-design SDP:
//!
//! ```text
//! minimize    Σ_i tr Σ_i
//! subject to  Σ_i ⪰ 0,  blkdiag(Σ_1, …, Σ_M) + Υ − b I ⪰ 0
//! ```
//!
//! Solved by consensus ADMM. `X` lives in the block-diagonal PSD cone and
//! carries the trace objective; `Z` lives in the shifted cone
//! `{Z : Z + Υ − b I ⪰ 0}`. Both projections are eigenvalue clamps:
//!
//! ```text
//! X ← Π_blockPSD(Z − U − I/ρ)
//! Z ← Π_PSD(X + U + Υ − b I) − Υ + b I
//! U ← U + X − Z
//! ```
//!
//! The data are scaled by `max(b, λmax(Υ))` before iterating so tolerances are
//! relative. The returned blocks come from `X`, shifted up by the remaining
//! constraint violation so the returned point is feasible.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("block dimensions {blocks:?} do not partition a {n}x{n} matrix")]
    Blocks { blocks: Vec<usize>, n: usize },
    #[error("reference covariance is not positive definite (minimum eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpSettings {
    /// Primal residual `‖X − Z‖_F` at exit, in scaled units.
    pub feasibility_tol: f64,
    /// Dual residual `ρ ‖Z − Z_prev‖_F` at exit, in scaled units.
    pub objective_tol: f64,
    pub max_iters: usize,
    pub rho: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            objective_tol: 1e-7,
            max_iters: 50_000,
            rho: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub upsilon: DMatrix<f64>,
    pub b: f64,
    pub block_dims: Vec<usize>,
    pub settings: SdpSettings,
}

impl SdpProblem {
    pub fn new(upsilon: DMatrix<f64>, b: f64, block_dims: Vec<usize>) -> Result<Self, SdpError> {
        let n = upsilon.nrows();
        if upsilon.ncols() != n || block_dims.iter().sum::<usize>() != n || block_dims.contains(&0)
        {
            return Err(SdpError::Blocks {
                blocks: block_dims,
                n,
            });
        }
        Ok(Self {
            upsilon: linalg::symmetrize(&upsilon),
            b,
            block_dims,
            settings: SdpSettings::default(),
        })
    }

    pub fn with_settings(mut self, settings: SdpSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn dim(&self) -> usize {
        self.upsilon.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    InfeasibleInput,
}

/// Iterate carried from one solve to the next. `z` is stored unscaled.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub sigma_blocks: Vec<DMatrix<f64>>,
    pub objective: f64,
    /// `λmin(blkdiag(Σ) + Υ − b I)`.
    pub feasibility_margin: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub warm_start: Option<WarmStart>,
}

impl SdpSolution {
    pub fn sigma(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.sigma_blocks)
    }
}

/// Nearest PSD matrix in Frobenius norm.
pub fn psd_project(x: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::psd_project(x)
}

fn project_blocks(x: &DMatrix<f64>, dims: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    let mut off = 0;
    for &d in dims {
        let block = x.view((off, off), (d, d)).clone_owned();
        out.view_mut((off, off), (d, d))
            .copy_from(&linalg::psd_project(&block));
        off += d;
    }
    out
}

fn extract_blocks(x: &DMatrix<f64>, dims: &[usize]) -> Vec<DMatrix<f64>> {
    let mut off = 0;
    dims.iter()
        .map(|&d| {
            let block = linalg::symmetrize(&x.view((off, off), (d, d)).clone_owned());
            off += d;
            block
        })
        .collect()
}

fn margin(sigma: &DMatrix<f64>, upsilon: &DMatrix<f64>, b: f64) -> f64 {
    let n = sigma.nrows();
    linalg::min_eigenvalue(&(sigma + upsilon - DMatrix::identity(n, n) * b))
}

fn zero_solution(problem: &SdpProblem, status: SolveStatus) -> SdpSolution {
    let sigma_blocks: Vec<_> = problem
        .block_dims
        .iter()
        .map(|&d| DMatrix::zeros(d, d))
        .collect();
    let n = problem.dim();
    let feasibility_margin = if status == SolveStatus::InfeasibleInput {
        f64::NAN
    } else {
        margin(&DMatrix::zeros(n, n), &problem.upsilon, problem.b)
    };
    SdpSolution {
        sigma_blocks,
        objective: 0.0,
        feasibility_margin,
        iterations: 0,
        status,
        warm_start: None,
    }
}

pub fn solve(problem: &SdpProblem) -> SdpSolution {
    solve_warm(problem, None)
}

pub fn solve_warm(problem: &SdpProblem, warm: Option<&WarmStart>) -> SdpSolution {
    let n = problem.dim();
    let settings = problem.settings;
    if !problem.b.is_finite()
        || problem.b < 0.0
        || problem.upsilon.iter().any(|v| !v.is_finite())
    {
        return zero_solution(problem, SolveStatus::InfeasibleInput);
    }
    let top = linalg::max_eigenvalue(&problem.upsilon);
    if linalg::min_eigenvalue(&problem.upsilon) >= problem.b {
        return zero_solution(problem, SolveStatus::Optimal);
    }

    let scale = problem.b.max(top);
    let eye = DMatrix::<f64>::identity(n, n);
    let upsilon = &problem.upsilon / scale;
    let shift = &upsilon - &eye * (problem.b / scale);

    let (mut z, mut u, mut rho) = match warm {
        Some(w) if w.z.shape() == (n, n) && w.u.shape() == (n, n) && w.rho > 0.0 => {
            (&w.z / scale, w.u.clone(), w.rho)
        }
        _ => (
            linalg::psd_project(&(-&shift)),
            DMatrix::zeros(n, n),
            settings.rho,
        ),
    };
    let mut x = project_blocks(&z, &problem.block_dims);

    let mut status = SolveStatus::MaxIters;
    let mut iterations = settings.max_iters;
    for it in 1..=settings.max_iters {
        x = project_blocks(&(&z - &u - &eye / rho), &problem.block_dims);
        let z_prev = z;
        z = linalg::psd_project(&(&x + &u + &shift)) - &shift;
        u += &x - &z;

        let primal = (&x - &z).norm();
        let dual = rho * (&z - &z_prev).norm();
        if primal <= settings.feasibility_tol && dual <= settings.objective_tol {
            status = SolveStatus::Optimal;
            iterations = it;
            break;
        }
        if it % 10 == 0 {
            if primal > 10.0 * dual {
                rho *= 2.0;
                u /= 2.0;
            } else if dual > 10.0 * primal {
                rho /= 2.0;
                u *= 2.0;
            }
        }
    }

    // Close the remaining gap to the shifted cone with a multiple of I.
    let gap = linalg::min_eigenvalue(&(&x + &shift));
    if gap < 0.0 {
        x += &eye * (-gap);
    }
    let sigma = x * scale;
    let sigma_blocks = extract_blocks(&sigma, &problem.block_dims);
    let sigma = linalg::block_diag(&sigma_blocks);
    SdpSolution {
        objective: sigma.trace(),
        feasibility_margin: margin(&sigma, &problem.upsilon, problem.b),
        sigma_blocks,
        iterations,
        status,
        warm_start: Some(WarmStart {
            z: z * scale,
            u,
            rho,
        }),
    }
}

/// Upper bound on the objective lost by replacing the exact privacy
/// constraint with the eigenvalue floor, given the total covariance
/// `S_orig` of any point feasible for the exact constraint:
/// `(max(1, b / λmin(S_orig)) − 1) · tr(S_orig)`.
pub fn gap_bound(b: f64, s_orig: &DMatrix<f64>) -> Result<f64, SdpError> {
    let min_eigenvalue = linalg::min_eigenvalue(s_orig);
    if !(min_eigenvalue > 0.0) {
        return Err(SdpError::NotPositiveDefinite { min_eigenvalue });
    }
    Ok(((b / min_eigenvalue).max(1.0) - 1.0) * s_orig.trace())
}
