//! Privacy calculus for the released local estimates.
//!
//! Changing the input `d_{k-1}` by at most `ε0` in ℓ₂ shifts the stacked
//! released estimates by `μ = M (d − d′)` with `M = 1_M ⊗ B_{k-1}`. With total
//! Gaussian noise covariance `S = Υ + blkdiag(Σ_i)` the release is
//! (ε, δ)-private when
//!
//! ```text
//! Q(ε/m − m/2) ≤ δ,    m = sup ‖μ‖_{S⁻¹} = ε0 √λmax(Mᵀ S⁻¹ M).
//! ```
//!
//! The inequality is equivalent to `m ≤ r` with `r = −Q⁻¹(δ) + √(Q⁻¹(δ)² + 2ε)`,
//! and `m² ≤ ε0² ‖M‖² / λmin(S)`, so `S ⪰ b I` with `b = ε0² ‖M‖² / r²` is
//! sufficient. That lower bound is what the noise-design SDP enforces.

use nalgebra::DMatrix;
use libm::erfc;
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::model::{ModelError, SystemModel};

/// Slack allowed on `δ` when checking a certificate.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrivacyError {
    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("total noise covariance is singular (condition number {condition:.3e})")]
    Singular { condition: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn linalg_error(e: LinalgError) -> PrivacyError {
    match e {
        LinalgError::Singular { condition, .. } => PrivacyError::Singular { condition },
        other => PrivacyError::Dimension(other.to_string()),
    }
}

/// Standard normal upper tail `Q(x) = ½ erfc(x/√2)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn normal_density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`q_function`] on `(0, 0.5)`: bisection down to a narrow
/// bracket, then Newton steps kept inside the bracket.
pub fn q_inverse(p: f64) -> Result<f64, PrivacyError> {
    if !(p > 0.0 && p < 0.5) {
        return Err(PrivacyError::Domain {
            name: "p",
            value: p,
            domain: "(0, 0.5)",
        });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while q_function(hi) > p {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if q_function(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..50 {
        let f = q_function(x) - p;
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x + f / normal_density(x);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * x.abs().max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

/// `(ε, δ, ε0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    epsilon: f64,
    delta: f64,
    eps0: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64, eps0: f64) -> Result<Self, PrivacyError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(PrivacyError::Domain {
                name: "epsilon",
                value: epsilon,
                domain: "(0, ∞)",
            });
        }
        if !(delta > 0.0 && delta < 0.5) {
            return Err(PrivacyError::Domain {
                name: "delta",
                value: delta,
                domain: "(0, 0.5)",
            });
        }
        if !(eps0 > 0.0 && eps0.is_finite()) {
            return Err(PrivacyError::Domain {
                name: "eps0",
                value: eps0,
                domain: "(0, ∞)",
            });
        }
        Ok(Self {
            epsilon,
            delta,
            eps0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    /// Largest admissible worst-case Mahalanobis distance,
    /// `r = −Q⁻¹(δ) + √(Q⁻¹(δ)² + 2ε)`.
    pub fn mahalanobis_radius(&self) -> f64 {
        let z = q_inverse(self.delta).expect("delta validated on construction");
        -z + (z * z + 2.0 * self.epsilon).sqrt()
    }

    /// Sensitivity constant for a query matrix of spectral norm `m_norm`.
    pub fn sensitivity(&self, m_norm: f64, rule: SensitivityRule) -> f64 {
        let r = self.mahalanobis_radius();
        let num = self.eps0 * self.eps0 * m_norm * m_norm;
        match rule {
            SensitivityRule::Certified => num / (r * r),
            SensitivityRule::Unsquared => num / r,
        }
    }
}

/// How the eigenvalue floor `b` is derived from `r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensitivityRule {
    /// `b = ε0² ‖M‖² / r²`; `S ⪰ b I` implies the certificate.
    #[default]
    Certified,
    /// `b = ε0² ‖M‖² / r`. Smaller than the certified floor whenever `r < 1`,
    /// in which case `S ⪰ b I` alone does not imply the certificate.
    Unsquared,
}

impl std::str::FromStr for SensitivityRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "certified" => Ok(SensitivityRule::Certified),
            "unsquared" => Ok(SensitivityRule::Unsquared),
            other => Err(format!("unknown sensitivity rule `{other}` (certified|unsquared)")),
        }
    }
}

/// Query data for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGeometry {
    /// `1_M ⊗ B_{k-1}`.
    pub m: DMatrix<f64>,
    /// `Ḡ C Q_{k-1} Cᵀ Ḡᵀ`, the part of the estimate noise guaranteed to be present.
    pub upsilon: DMatrix<f64>,
    pub b: f64,
    pub m_norm: f64,
    /// State dimension of each sensor block.
    pub block_dims: Vec<usize>,
}

impl QueryGeometry {
    /// `true` when the input does not reach the estimates (`B = 0`) and no
    /// noise is required.
    pub fn is_degenerate(&self) -> bool {
        self.m_norm == 0.0
    }
}

/// `1_copies ⊗ b`.
pub fn stack_copies(b: &DMatrix<f64>, copies: usize) -> DMatrix<f64> {
    let blocks: Vec<&DMatrix<f64>> = std::iter::repeat_n(b, copies).collect();
    linalg::vstack(&blocks)
}

/// Geometry from explicit matrices: `b_prev = B_{k-1}`, `q_prev = Q_{k-1}`,
/// per-sensor gains `G_{i,k}` and observation matrices `C_{i,k}`.
pub fn build_geometry(
    b_prev: &DMatrix<f64>,
    q_prev: &DMatrix<f64>,
    gains: &[DMatrix<f64>],
    cs: &[DMatrix<f64>],
    params: &PrivacyParams,
    rule: SensitivityRule,
) -> Result<QueryGeometry, PrivacyError> {
    if gains.len() != cs.len() || gains.is_empty() {
        return Err(PrivacyError::Dimension(format!(
            "{} gains for {} observation matrices",
            gains.len(),
            cs.len()
        )));
    }
    let n = b_prev.nrows();
    let mut rows = Vec::with_capacity(gains.len());
    for (i, (g, c)) in gains.iter().zip(cs).enumerate() {
        if g.nrows() != n || g.ncols() != c.nrows() || c.ncols() != n {
            return Err(PrivacyError::Dimension(format!(
                "sensor {}: gain {}x{} and C {}x{} do not fit state dimension {n}",
                i + 1,
                g.nrows(),
                g.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        rows.push(g * c);
    }
    let refs: Vec<&DMatrix<f64>> = rows.iter().collect();
    let gc = linalg::vstack(&refs);
    let upsilon = linalg::symmetrize(&(&gc * q_prev * gc.transpose()));
    let m = stack_copies(b_prev, gains.len());
    let m_norm = linalg::spectral_norm(&m);
    let b = params.sensitivity(m_norm, rule);
    Ok(QueryGeometry {
        m,
        upsilon,
        b,
        m_norm,
        block_dims: vec![n; gains.len()],
    })
}

/// Geometry at step `k ≥ 1` of `model` for the gains of that step.
pub fn compute_geometry(
    model: &SystemModel,
    k: usize,
    gains: &[DMatrix<f64>],
    params: &PrivacyParams,
    rule: SensitivityRule,
) -> Result<QueryGeometry, PrivacyError> {
    if k == 0 {
        return Err(PrivacyError::Dimension("geometry is defined for k ≥ 1".into()));
    }
    let cs = (0..model.n_sensors())
        .map(|i| model.c(i, k).cloned())
        .collect::<Result<Vec<_>, _>>()?;
    build_geometry(model.b(k - 1)?, model.q(k - 1)?, gains, &cs, params, rule)
}

/// `ε0 √λmax(Mᵀ S⁻¹ M)`.
pub fn worst_case_mahalanobis(
    m: &DMatrix<f64>,
    s: &DMatrix<f64>,
    eps0: f64,
) -> Result<f64, PrivacyError> {
    if s.nrows() != m.nrows() || s.ncols() != m.nrows() {
        return Err(PrivacyError::Dimension(format!(
            "S is {}x{}, M has {} rows",
            s.nrows(),
            s.ncols(),
            m.nrows()
        )));
    }
    let s_inv = linalg::spd_inverse(s, "S").map_err(linalg_error)?;
    let quad = m.transpose() * s_inv * m;
    Ok(eps0 * linalg::max_eigenvalue(&quad).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub holds: bool,
    pub delta_achieved: f64,
    pub mahalanobis: f64,
}

/// Achieved `δ` for a given worst-case Mahalanobis distance.
pub fn achieved_delta(epsilon: f64, mahalanobis: f64) -> f64 {
    if mahalanobis == 0.0 {
        0.0
    } else {
        q_function(epsilon / mahalanobis - mahalanobis / 2.0)
    }
}

/// Checks the privacy inequality for `S = Υ + blkdiag(Σ_i)`.
pub fn certify(
    params: &PrivacyParams,
    geometry: &QueryGeometry,
    sigma_blocks: &[DMatrix<f64>],
) -> Result<Certificate, PrivacyError> {
    let sigma = linalg::block_diag(sigma_blocks);
    if sigma.shape() != geometry.upsilon.shape() {
        return Err(PrivacyError::Dimension(format!(
            "noise blocks span {}x{}, Υ is {}x{}",
            sigma.nrows(),
            sigma.ncols(),
            geometry.upsilon.nrows(),
            geometry.upsilon.ncols()
        )));
    }
    let s = &geometry.upsilon + sigma;
    let mahalanobis = worst_case_mahalanobis(&geometry.m, &s, params.eps0)?;
    let delta_achieved = achieved_delta(params.epsilon, mahalanobis);
    Ok(Certificate {
        holds: delta_achieved <= params.delta + CERTIFICATE_TOLERANCE,
        delta_achieved,
        mahalanobis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::step_covariance;
    use crate::scenario;
    use nalgebra::DVector;
    use proptest::prelude::*;

    /// Gaussian tail by composite Simpson quadrature of the density on
    /// `[x, x + 15]`.
    fn tail_oracle(x: f64) -> f64 {
        let n = 200_000;
        let h = 15.0 / n as f64;
        let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut sum = phi(x) + phi(x + 15.0);
        for j in 1..n {
            let w = if j % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * phi(x + j as f64 * h);
        }
        sum * h / 3.0
    }

    fn oracle_inverse(p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if tail_oracle(mid) > p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Inverse of `Q` at 1e-3 from the quadrature oracle.
    const Q_INV_1E3: f64 = 3.0902323061678135;

    #[test]
    fn q_function_basics() {
        assert_eq!(q_function(0.0), 0.5);
        for x in [0.5, 1.0, 2.0] {
            assert!((q_function(x) + q_function(-x) - 1.0).abs() < 1e-15);
        }
    }

    /// Tail values evaluated in 40-digit arithmetic.
    const TAIL_TABLE: [(f64, f64); 6] = [
        (0.3, 0.38208857781104736269),
        (1.0, 0.15865525393145705141),
        (1.7, 0.044565462758543039487),
        (2.5, 0.006209665325776135167),
        (3.090232, 0.0010000010308950945722),
        (5.0, 2.8665157187919391167e-7),
    ];

    #[test]
    fn q_function_matches_reference_tails() {
        for (x, expected) in TAIL_TABLE {
            assert!(
                (q_function(x) - expected).abs() <= 1e-14,
                "x = {x}: {} vs {expected}",
                q_function(x)
            );
            let oracle = tail_oracle(x);
            assert!((q_function(x) / oracle - 1.0).abs() < 1e-10, "x = {x}");
        }
        // 3.090232 is Q⁻¹(1e-3) rounded to seven digits; the rounding alone
        // moves Q by about 1.03e-6 relative.
        let q = q_function(3.090232);
        assert!((q / 1e-3 - 1.0).abs() < 1.1e-6);
    }

    #[test]
    fn q_inverse_examples() {
        assert!(q_inverse(0.5 - 1e-15).unwrap().abs() < 1e-6);
        assert!((q_inverse(q_function(1.7)).unwrap() - 1.7).abs() < 1e-9);
        let x = q_inverse(1e-3).unwrap();
        assert!((x - Q_INV_1E3).abs() < 1e-12);
        assert!((x - oracle_inverse(1e-3)).abs() < 1e-5);
    }

    #[test]
    fn q_inverse_domain() {
        for p in [0.0, 0.5, 0.7, -1.0, f64::NAN] {
            assert!(matches!(q_inverse(p), Err(PrivacyError::Domain { .. })));
        }
    }

    #[test]
    fn q_inverse_round_trip_on_log_grid() {
        let (lo, hi) = (1e-9_f64.ln(), 0.49_f64.ln());
        for j in 0..=400 {
            let p = (lo + (hi - lo) * j as f64 / 400.0).exp();
            let x = q_inverse(p).unwrap();
            assert!((q_function(x) - p).abs() <= 1e-12, "p = {p}");
        }
    }

    #[test]
    fn params_validation() {
        assert!(PrivacyParams::new(1e-3, 1e-3, 0.1).is_ok());
        assert!(PrivacyParams::new(0.0, 1e-3, 0.1).is_err());
        assert!(PrivacyParams::new(1.0, 0.5, 0.1).is_err());
        assert!(PrivacyParams::new(1.0, 0.0, 0.1).is_err());
        assert!(PrivacyParams::new(1.0, 0.1, 0.0).is_err());
    }

    fn tracking_geometry(rule: SensitivityRule) -> QueryGeometry {
        let model = scenario::tracking_model();
        let params = PrivacyParams::new(1e-3, 1e-3, 0.1).unwrap();
        let gains: Vec<_> = (0..2)
            .map(|i| step_covariance(model.p0(), &model, i, 1).unwrap().1.gain)
            .collect();
        compute_geometry(&model, 1, &gains, &params, rule).unwrap()
    }

    #[test]
    fn tracking_sensitivity_constants() {
        let z = Q_INV_1E3;
        let r = -z + (z * z + 0.002).sqrt();
        let norm_sq = 2.0; // (√2 σmax(B))², σmax(B) = 1
        let unsquared = tracking_geometry(SensitivityRule::Unsquared);
        assert!((unsquared.m_norm - 2f64.sqrt()).abs() < 1e-12);
        assert!((unsquared.b - 0.01 * norm_sq / r).abs() < 1e-9 * unsquared.b);
        assert!((unsquared.b - 61.807881956613116).abs() < 1e-8);
        let certified = tracking_geometry(SensitivityRule::Certified);
        assert!((certified.b - 0.01 * norm_sq / (r * r)).abs() < 1e-9 * certified.b);
        assert!((certified.b - 191010.713598131).abs() < 1e-4);
    }

    #[test]
    fn single_sensor_geometry() {
        let params = PrivacyParams::new(0.5, 0.01, 1.0).unwrap();
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 0.0]);
        let g = DMatrix::from_row_slice(3, 2, &[0.5, 0.1, 0.2, 0.3, 0.0, 1.0]);
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let geo = build_geometry(&b, &q, &[g.clone()], &[c.clone()], &params, SensitivityRule::Certified)
            .unwrap();
        let expected = &g * &c * &q * c.transpose() * g.transpose();
        assert!((&geo.upsilon - expected).amax() < 1e-14);
        assert!((geo.m_norm - 5f64.sqrt()).abs() < 1e-12);

        let zero = build_geometry(
            &b,
            &DMatrix::zeros(3, 3),
            &[g],
            &[c],
            &params,
            SensitivityRule::Certified,
        )
        .unwrap();
        assert_eq!(zero.upsilon, DMatrix::zeros(3, 3));
    }

    #[test]
    fn zero_input_matrix_is_degenerate() {
        let params = PrivacyParams::new(0.5, 0.01, 1.0).unwrap();
        let geo = build_geometry(
            &DMatrix::zeros(2, 1),
            &DMatrix::identity(2, 2),
            &[DMatrix::identity(2, 2)],
            &[DMatrix::identity(2, 2)],
            &params,
            SensitivityRule::Certified,
        )
        .unwrap();
        assert!(geo.is_degenerate());
        assert_eq!(geo.b, 0.0);
    }

    #[test]
    fn mahalanobis_identities() {
        let i2 = DMatrix::identity(2, 2);
        assert!((worst_case_mahalanobis(&i2, &i2, 0.3).unwrap() - 0.3).abs() < 1e-15);
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 3.0, 0.5]);
        let s = DMatrix::identity(3, 3) * 4.0;
        let expected = 0.3 * linalg::spectral_norm(&m) / 2.0;
        assert!((worst_case_mahalanobis(&m, &s, 0.3).unwrap() - expected).abs() < 1e-14);
        assert!(matches!(
            worst_case_mahalanobis(&m, &DMatrix::zeros(3, 3), 0.3),
            Err(PrivacyError::Singular { .. })
        ));
    }

    #[test]
    fn mahalanobis_matches_direction_grid() {
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 2, &[
             0.8, -1.2,
             0.3,  0.5,
            -1.1,  0.9,
             0.4,  2.0,
        ]);
        let l = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, 0.0, 0.0, 0.4, 1.5, 0.0, 0.0, -0.3, 0.2, 0.7, 0.0, 0.1, -0.6, 0.9, 1.2,
        ]);
        let s = &l * l.transpose() + DMatrix::identity(4, 4) * 0.1;
        let eps0 = 0.7;
        let s_inv = s.clone().try_inverse().unwrap();
        let mut best: f64 = 0.0;
        for j in 0..20_000 {
            let t = std::f64::consts::PI * j as f64 / 20_000.0;
            let u = DVector::from_vec(vec![t.cos(), t.sin()]);
            let mu = &m * u * eps0;
            best = best.max((mu.transpose() * &s_inv * &mu)[(0, 0)].sqrt());
        }
        let got = worst_case_mahalanobis(&m, &s, eps0).unwrap();
        assert!((got - best).abs() <= 1e-3 * best);
    }

    #[test]
    fn certificate_limits() {
        let geo = tracking_geometry(SensitivityRule::Certified);
        let params = PrivacyParams::new(1e-3, 1e-3, 0.1).unwrap();
        let huge = vec![DMatrix::identity(4, 4) * 1e9; 2];
        let cert = certify(&params, &geo, &huge).unwrap();
        assert!(cert.holds);
        assert!(cert.delta_achieved < 1e-100);

        let bare = QueryGeometry {
            upsilon: DMatrix::zeros(8, 8),
            ..geo
        };
        let zero = vec![DMatrix::zeros(4, 4); 2];
        assert!(matches!(
            certify(&params, &bare, &zero),
            Err(PrivacyError::Singular { .. })
        ));
    }

    #[test]
    fn floor_b_is_sufficient() {
        // Any S with λmin(S) = b passes, with M aligned to the weakest direction.
        let params = PrivacyParams::new(0.2, 1e-4, 0.5).unwrap();
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = params.sensitivity(linalg::spectral_norm(&m), SensitivityRule::Certified);
        let geo = QueryGeometry {
            m,
            upsilon: DMatrix::zeros(2, 2),
            b,
            m_norm: 2f64.sqrt(),
            block_dims: vec![1, 1],
        };
        let cert = certify(&params, &geo, &[DMatrix::from_element(1, 1, b), DMatrix::from_element(1, 1, b)])
            .unwrap();
        assert!(cert.holds);
        assert!((cert.delta_achieved - 1e-4).abs() < 1e-12);
    }

    fn spd_from(data: &[f64], n: usize, shift: f64) -> DMatrix<f64> {
        let l = DMatrix::from_iterator(n, n, data.iter().copied().cycle().take(n * n));
        &l * l.transpose() + DMatrix::identity(n, n) * shift
    }

    proptest! {
        #[test]
        fn more_noise_more_privacy(
            a in prop::collection::vec(-1.0f64..1.0, 16),
            d in prop::collection::vec(-1.0f64..1.0, 16),
            mdata in prop::collection::vec(-2.0f64..2.0, 8),
        ) {
            let s1 = spd_from(&a, 4, 0.05);
            let s2 = &s1 + spd_from(&d, 4, 0.0);
            let m = DMatrix::from_row_slice(4, 2, &mdata);
            let params = PrivacyParams::new(0.5, 0.01, 0.3).unwrap();
            let geo = |s: &DMatrix<f64>| QueryGeometry {
                m: m.clone(),
                upsilon: s.clone(),
                b: 0.0,
                m_norm: linalg::spectral_norm(&m),
                block_dims: vec![4],
            };
            let z = vec![DMatrix::zeros(4, 4)];
            let c1 = certify(&params, &geo(&s1), &z).unwrap();
            let c2 = certify(&params, &geo(&s2), &z).unwrap();
            prop_assert!(c2.mahalanobis <= c1.mahalanobis * (1.0 + 1e-9));
            prop_assert!(c2.delta_achieved <= c1.delta_achieved * (1.0 + 1e-6) + 1e-300);
        }

        #[test]
        fn kronecker_norm_identity(
            data in prop::collection::vec(-3.0f64..3.0, 12),
            rows in 1usize..5,
            copies in prop::sample::select(vec![1usize, 2, 5]),
        ) {
            let b = DMatrix::from_iterator(rows, 2, data.iter().copied().cycle().take(rows * 2));
            let sigma = linalg::spectral_norm(&b);
            let stacked = linalg::spectral_norm(&stack_copies(&b, copies));
            prop_assert!((stacked - (copies as f64).sqrt() * sigma).abs() <= 1e-10 * stacked.max(1e-300));
        }

        #[test]
        fn sensitivity_monotone(
            eps in 1e-4f64..1.0,
            delta in 1e-6f64..0.4,
            eps0 in 0.01f64..2.0,
            factor in 1.01f64..3.0,
        ) {
            for rule in [SensitivityRule::Certified, SensitivityRule::Unsquared] {
                let base = PrivacyParams::new(eps, delta, eps0).unwrap().sensitivity(1.3, rule);
                let more_eps0 = PrivacyParams::new(eps, delta, eps0 * factor).unwrap().sensitivity(1.3, rule);
                let more_eps = PrivacyParams::new(eps * factor, delta, eps0).unwrap().sensitivity(1.3, rule);
                let more_delta = PrivacyParams::new(eps, (delta * factor).min(0.49), eps0).unwrap().sensitivity(1.3, rule);
                prop_assert!(more_eps0 > base);
                prop_assert!(more_eps < base);
                prop_assert!(more_delta <= base);
            }
        }

        #[test]
        fn q_round_trip(logp in (1e-9f64).ln()..(0.49f64).ln()) {
            let p = logp.exp();
            prop_assert!((q_function(q_inverse(p).unwrap()) - p).abs() <= 1e-12);
        }
    }
}
