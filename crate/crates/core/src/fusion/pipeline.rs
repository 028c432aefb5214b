//! Per-step orchestration of the private fusion algorithms.
//!
//! Everything on the covariance side (filter gains and covariances, query
//! geometry, the noise design, fused covariances and the feedback decisions)
//! is independent of the measurements. [`FusionPipeline::plan`] computes it
//! once; [`FusionPipeline::run`] then replays the estimates for one Monte
//! Carlo run using the planned noise covariances.

use nalgebra::{DMatrix, DVector};

use super::{
    accuracy_loss, ci_fuse, feedback_update, fused_dominates, inject_noise_with_factor,
    Algorithm, FusionError, FusionResult, FusionWeights, NoisyLocal,
};
use crate::filter::{self, FilterState};
use crate::linalg::{self, LinalgError};
use crate::model::{simulate_run, InputSignal, SystemModel, Trajectory};
use crate::privacy::{self, Certificate, PrivacyParams, QueryGeometry, SensitivityRule};
use crate::sdp::{self, SdpProblem, SdpSettings, SolveStatus, WarmStart};
use crate::streams::{NoiseRole, RunStreams, SeedTree};

/// Growth factor applied to the noise covariance when a design fails its
/// certificate, and the number of times it may be applied.
pub const INFLATION_FACTOR: f64 = 1.5;
pub const MAX_INFLATIONS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub sensitivity: SensitivityRule,
    pub sdp: SdpSettings,
    /// Inflate uncertified designs until the certificate holds (error after
    /// [`MAX_INFLATIONS`]). When off, uncertified designs are used as is.
    pub enforce_certificate: bool,
    /// Compute the accuracy-loss diagnostic each step.
    pub with_delta_p: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            sensitivity: SensitivityRule::Certified,
            sdp: SdpSettings::default(),
            enforce_certificate: true,
            with_delta_p: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    pub feasibility_margin: f64,
    pub inflations: usize,
}

/// Covariance-side quantities of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub k: usize,
    /// `P_{i,k|k}` after the measurement update, before any feedback.
    pub local_p: Vec<DMatrix<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    pub geometry: Option<QueryGeometry>,
    pub sdp: Option<SdpDiagnostics>,
    pub sigma: Vec<DMatrix<f64>>,
    pub noise_factors: Vec<DMatrix<f64>>,
    pub certificate: Option<Certificate>,
    pub p_fused: DMatrix<f64>,
    /// Fusion of the same local covariances without noise.
    pub p_nonprivate: DMatrix<f64>,
    pub delta_p: Option<DMatrix<f64>>,
    /// Feedback decisions per sensor (always `false` outside the feedback algorithm).
    pub adopted: Vec<bool>,
    /// Local covariances carried into the next prediction.
    pub carried_p: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePlan {
    pub algorithm: Algorithm,
    pub steps: Vec<StepPlan>,
}

impl NoisePlan {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn certificates_hold(&self) -> bool {
        self.steps
            .iter()
            .all(|s| s.certificate.is_none_or(|c| c.holds))
    }
}

/// Everything observed at one step of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    /// Local filter states after the update, before feedback.
    pub locals: Vec<FilterState>,
    pub released: Vec<NoisyLocal>,
    pub fused: FusionResult,
    pub certificate: Option<Certificate>,
    pub adopted: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: u64,
    pub trajectory: Trajectory,
    pub steps: Vec<StepRecord>,
}

/// One configured fusion pipeline over a fixed model and input.
#[derive(Debug, Clone)]
pub struct FusionPipeline<'a> {
    pub model: &'a SystemModel,
    pub input: &'a InputSignal,
    pub algorithm: Algorithm,
    /// `None` disables the privacy noise (Σ = 0) for any algorithm.
    pub privacy: Option<PrivacyParams>,
    pub weights: FusionWeights,
    pub options: PipelineOptions,
}

fn cov_only(p: &[DMatrix<f64>], sigma: &[DMatrix<f64>]) -> Vec<NoisyLocal> {
    p.iter()
        .zip(sigma)
        .map(|(p, s)| NoisyLocal {
            x_bar: DVector::zeros(p.nrows()),
            p_bar: p + s,
        })
        .collect()
}

impl<'a> FusionPipeline<'a> {
    pub fn new(
        model: &'a SystemModel,
        input: &'a InputSignal,
        algorithm: Algorithm,
        privacy: Option<PrivacyParams>,
        weights: FusionWeights,
    ) -> Self {
        let privacy = if algorithm.is_private() { privacy } else { None };
        Self {
            model,
            input,
            algorithm,
            privacy,
            weights,
            options: PipelineOptions::default(),
        }
    }

    pub fn with_options(mut self, options: PipelineOptions) -> Self {
        self.options = options;
        self
    }

    fn feedback(&self) -> bool {
        self.algorithm == Algorithm::Alg2
    }

    /// Covariance recursion, noise design and certificates for steps
    /// `1..=horizon`.
    pub fn plan(&self, horizon: usize) -> Result<NoisePlan, FusionError> {
        let model = self.model;
        let m = model.n_sensors();
        if self.weights.len() != m {
            return Err(FusionError::Weights(format!(
                "{} weights for {m} sensors",
                self.weights.len()
            )));
        }
        let report = model.validate(horizon);
        if !report.passed() {
            let msgs: Vec<String> = report.issues.iter().map(|i| i.to_string()).collect();
            return Err(FusionError::InvalidModel(msgs.join("; ")));
        }

        let mut carried: Vec<DMatrix<f64>> = vec![model.p0().clone(); m];
        let mut warm: Option<WarmStart> = None;
        let mut steps = Vec::with_capacity(horizon);
        for k in 1..=horizon {
            let mut local_p = Vec::with_capacity(m);
            let mut gains = Vec::with_capacity(m);
            for (i, prev) in carried.iter().enumerate() {
                let (_, cov) = filter::step_covariance(prev, model, i, k)
                    .map_err(|source| FusionError::Filter { step: k, sensor: i, source })?;
                local_p.push(cov.p);
                gains.push(cov.gain);
            }

            let n = model.dim_x();
            let (geometry, sdp_diag, sigma, certificate) = match &self.privacy {
                None => (None, None, vec![DMatrix::zeros(n, n); m], None),
                Some(params) => {
                    let (geo, diag, sigma, cert) = self.design(k, &gains, params, &mut warm)?;
                    (Some(geo), diag, sigma, Some(cert))
                }
            };
            let noise_factors = sigma
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    linalg::psd_factor(s, "Σ").map_err(|e| match e {
                        LinalgError::NotPsd { min_eigenvalue, .. } => FusionError::NoiseNotPsd {
                            sensor: i,
                            min_eigenvalue,
                        },
                        other => FusionError::Dimension(other.to_string()),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;

            let p_fused = ci_fuse(&cov_only(&local_p, &sigma), &self.weights)?.p_fused;
            let p_nonprivate = ci_fuse(&cov_only(&local_p, &vec![DMatrix::zeros(n, n); m]), &self.weights)?
                .p_fused;
            let delta_p = if self.options.with_delta_p {
                Some(accuracy_loss(&local_p, &sigma, &self.weights, &p_fused, &p_nonprivate)?)
            } else {
                None
            };

            let adopted: Vec<bool> = local_p
                .iter()
                .map(|p| self.feedback() && fused_dominates(&p_fused, p))
                .collect();
            carried = local_p
                .iter()
                .zip(&adopted)
                .map(|(p, &a)| if a { p_fused.clone() } else { p.clone() })
                .collect();

            steps.push(StepPlan {
                k,
                local_p,
                gains,
                geometry,
                sdp: sdp_diag,
                sigma,
                noise_factors,
                certificate,
                p_fused,
                p_nonprivate,
                delta_p,
                adopted,
                carried_p: carried.clone(),
            });
        }
        Ok(NoisePlan {
            algorithm: self.algorithm,
            steps,
        })
    }

    #[allow(clippy::type_complexity)]
    fn design(
        &self,
        k: usize,
        gains: &[DMatrix<f64>],
        params: &PrivacyParams,
        warm: &mut Option<WarmStart>,
    ) -> Result<
        (
            QueryGeometry,
            Option<SdpDiagnostics>,
            Vec<DMatrix<f64>>,
            Certificate,
        ),
        FusionError,
    > {
        let privacy_err = |source| FusionError::Privacy { step: k, source };
        let geometry = privacy::compute_geometry(
            self.model,
            k,
            gains,
            params,
            self.options.sensitivity,
        )
        .map_err(privacy_err)?;
        let dims = geometry.block_dims.clone();

        let (mut sigma, mut diag) = if geometry.is_degenerate() {
            (dims.iter().map(|&d| DMatrix::zeros(d, d)).collect::<Vec<_>>(), None)
        } else {
            let problem = SdpProblem::new(geometry.upsilon.clone(), geometry.b, dims.clone())
                .map_err(|e| FusionError::Dimension(e.to_string()))?
                .with_settings(self.options.sdp);
            let sol = sdp::solve_warm(&problem, warm.as_ref());
            if sol.status == SolveStatus::InfeasibleInput {
                return Err(FusionError::Dimension(format!(
                    "step {k}: noise design received non-finite data"
                )));
            }
            *warm = sol.warm_start.clone();
            let diag = SdpDiagnostics {
                status: sol.status,
                iterations: sol.iterations,
                objective: sol.objective,
                feasibility_margin: sol.feasibility_margin,
                inflations: 0,
            };
            (sol.sigma_blocks, Some(diag))
        };

        let mut certificate = if geometry.is_degenerate() {
            Certificate {
                holds: true,
                delta_achieved: 0.0,
                mahalanobis: 0.0,
            }
        } else {
            privacy::certify(params, &geometry, &sigma).map_err(privacy_err)?
        };
        let solver_ok = diag.is_none_or(|d| d.status == SolveStatus::Optimal);
        if self.options.enforce_certificate && !(certificate.holds && solver_ok) {
            let mut rounds = 0;
            while !certificate.holds {
                if rounds == MAX_INFLATIONS {
                    return Err(FusionError::Uncertified {
                        step: k,
                        delta_achieved: certificate.delta_achieved,
                    });
                }
                for s in sigma.iter_mut() {
                    if s.iter().all(|&v| v == 0.0) {
                        *s = DMatrix::identity(s.nrows(), s.ncols()) * geometry.b;
                    } else {
                        *s *= INFLATION_FACTOR;
                    }
                }
                rounds += 1;
                certificate = privacy::certify(params, &geometry, &sigma).map_err(privacy_err)?;
            }
            if let Some(d) = diag.as_mut() {
                d.inflations = rounds;
                d.objective = sigma.iter().map(|s| s.trace()).sum();
            }
        }
        Ok((geometry, diag, sigma, certificate))
    }

    /// Replays one run: simulate the truth, filter, inject the planned noise,
    /// fuse and, for the feedback algorithm, hand the fused pair back.
    pub fn run(
        &self,
        plan: &NoisePlan,
        streams: &RunStreams,
    ) -> Result<RunRecord, FusionError> {
        let trajectory = simulate_run(self.model, self.input, plan.horizon(), streams)?;
        self.run_on(plan, streams, trajectory)
    }

    /// [`run`](Self::run) on an existing trajectory.
    pub fn run_on(
        &self,
        plan: &NoisePlan,
        streams: &RunStreams,
        trajectory: Trajectory,
    ) -> Result<RunRecord, FusionError> {
        let m = self.model.n_sensors();
        let mut states = vec![FilterState::from_model(self.model); m];
        let mut steps = Vec::with_capacity(plan.horizon());
        for sp in &plan.steps {
            let k = sp.k;
            let mut locals = Vec::with_capacity(m);
            let mut released = Vec::with_capacity(m);
            for (i, prev) in states.iter().enumerate() {
                let y = &trajectory.measurements[i][k];
                let local = filter::step(prev, self.model, i, k, y)
                    .map_err(|source| FusionError::Filter { step: k, sensor: i, source })?;
                let mut rng = streams.stream(NoiseRole::Privacy, i, k);
                released.push(inject_noise_with_factor(
                    &local,
                    &sp.sigma[i],
                    &sp.noise_factors[i],
                    &mut rng,
                )?);
                locals.push(local);
            }
            let mut fused = ci_fuse(&released, &self.weights)?;
            fused.delta_p = sp.delta_p.clone();

            let mut adopted = vec![false; m];
            for (i, local) in locals.iter().enumerate() {
                states[i] = if self.feedback() {
                    let decision = feedback_update(local, &fused);
                    adopted[i] = decision.adopted;
                    decision.state
                } else {
                    local.clone()
                };
            }
            steps.push(StepRecord {
                k,
                locals,
                released,
                fused,
                certificate: sp.certificate,
                adopted,
            });
        }
        Ok(RunRecord {
            run: streams.run_index(),
            trajectory,
            steps,
        })
    }
}

fn run_single(
    algorithm: Algorithm,
    model: &SystemModel,
    input: &InputSignal,
    params: PrivacyParams,
    weights: FusionWeights,
    horizon: usize,
    seed: u64,
) -> Result<RunRecord, FusionError> {
    let pipeline = FusionPipeline::new(model, input, algorithm, Some(params), weights);
    let plan = pipeline.plan(horizon)?;
    pipeline.run(&plan, &SeedTree::new(seed).run(0))
}

/// Private fusion without feedback, run 0 of `seed`.
pub fn run_algorithm_1(
    model: &SystemModel,
    input: &InputSignal,
    params: PrivacyParams,
    weights: FusionWeights,
    horizon: usize,
    seed: u64,
) -> Result<RunRecord, FusionError> {
    run_single(Algorithm::Alg1, model, input, params, weights, horizon, seed)
}

/// Private fusion with feedback, run 0 of `seed`.
pub fn run_algorithm_2(
    model: &SystemModel,
    input: &InputSignal,
    params: PrivacyParams,
    weights: FusionWeights,
    horizon: usize,
    seed: u64,
) -> Result<RunRecord, FusionError> {
    run_single(Algorithm::Alg2, model, input, params, weights, horizon, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario;

    fn tracking_params() -> PrivacyParams {
        PrivacyParams::new(scenario::EPSILON, scenario::DELTA, scenario::EPS0).unwrap()
    }

    #[test]
    fn disabled_privacy_equals_nonprivate() {
        let model = scenario::tracking_model();
        let input = scenario::tracking_input();
        let w = FusionWeights::uniform(2);
        let streams = SeedTree::new(5).run(2);
        let off = FusionPipeline::new(&model, &input, Algorithm::Alg1, None, w.clone());
        let np = FusionPipeline::new(&model, &input, Algorithm::NonPrivate, Some(tracking_params()), w);
        let a = off.run(&off.plan(20).unwrap(), &streams).unwrap();
        let b = np.run(&np.plan(20).unwrap(), &streams).unwrap();
        assert_eq!(a.steps, b.steps);
    }

    #[test]
    fn certificates_hold_on_tracking_model() {
        let model = scenario::tracking_model();
        let input = scenario::tracking_input();
        let record = run_algorithm_1(&model, &input, tracking_params(), FusionWeights::uniform(2), 50, 1)
            .unwrap();
        for step in &record.steps {
            let cert = step.certificate.unwrap();
            assert!(cert.holds, "step {}: {:?}", step.k, cert);
            assert!(cert.delta_achieved <= scenario::DELTA + 1e-12);
        }
    }

    #[test]
    fn one_step_matches_scripted_pipeline() {
        let model = scenario::tracking_model();
        let input = scenario::tracking_input();
        let params = tracking_params();
        let w = FusionWeights::uniform(2);
        let record = run_algorithm_1(&model, &input, params, w.clone(), 1, 77).unwrap();
        let pipeline = FusionPipeline::new(&model, &input, Algorithm::Alg1, Some(params), w);
        let plan = pipeline.plan(1).unwrap();
        let sp = &plan.steps[0];

        // Scripted: filter, perturb, fuse by hand with LU inverses.
        let traj = &record.trajectory;
        let streams = SeedTree::new(77).run(0);
        let mut info = DMatrix::zeros(4, 4);
        let mut info_x = DVector::zeros(4);
        for i in 0..2 {
            let s0 = FilterState::from_model(&model);
            let local = filter::step(&s0, &model, i, 1, &traj.measurements[i][1]).unwrap();
            let z = crate::streams::standard_normal(&mut streams.stream(NoiseRole::Privacy, i, 1), 4);
            let x_bar = &local.x_hat + &sp.noise_factors[i] * z;
            let pbar_inv = (&local.p + &sp.sigma[i]).try_inverse().unwrap();
            info_x += &pbar_inv * x_bar * 0.5;
            info += pbar_inv * 0.5;
        }
        let p_f = info.try_inverse().unwrap();
        let x_f = &p_f * info_x;
        let fused = &record.steps[0].fused;
        assert!((&fused.p_fused - &p_f).norm() <= 1e-9 * p_f.norm());
        assert!((&fused.x_fused - &x_f).norm() <= 1e-9 * (1.0 + x_f.norm()));
    }

    #[test]
    fn feedback_step_one_matches_alg1() {
        let model = scenario::tracking_model();
        let input = scenario::tracking_input();
        let a1 = run_algorithm_1(&model, &input, tracking_params(), FusionWeights::uniform(2), 3, 9).unwrap();
        let a2 = run_algorithm_2(&model, &input, tracking_params(), FusionWeights::uniform(2), 3, 9).unwrap();
        assert_eq!(a1.steps[0].fused.p_fused, a2.steps[0].fused.p_fused);
    }

    #[test]
    fn huge_noise_disables_feedback() {
        // With an enormous noise floor the fused covariance never dominates.
        let model = scenario::tracking_model();
        let input = scenario::tracking_input();
        let params = PrivacyParams::new(1e-6, 1e-6, 1.0).unwrap();
        let w = FusionWeights::uniform(2);
        let p1 = FusionPipeline::new(&model, &input, Algorithm::Alg1, Some(params), w.clone());
        let p2 = FusionPipeline::new(&model, &input, Algorithm::Alg2, Some(params), w);
        let plan2 = p2.plan(10).unwrap();
        assert!(plan2.steps.iter().all(|s| s.adopted.iter().all(|a| !a)));
        let streams = SeedTree::new(3).run(0);
        let r1 = p1.run(&p1.plan(10).unwrap(), &streams).unwrap();
        let r2 = p2.run(&plan2, &streams).unwrap();
        for (a, b) in r1.steps.iter().zip(&r2.steps) {
            assert_eq!(a.fused, b.fused);
            assert_eq!(a.locals, b.locals);
        }
    }

    #[test]
    fn feedback_fires_without_noise() {
        // Without privacy noise the CI fusion of a precise and a coarse sensor
        // dominates the coarse one.
        let model = scenario::tracking_model();
        let input = scenario::tracking_input();
        let p = FusionPipeline::new(&model, &input, Algorithm::Alg2, None, FusionWeights::uniform(2));
        let plan = p.plan(10).unwrap();
        let record = p.run(&plan, &SeedTree::new(1).run(0)).unwrap();
        for (sp, st) in plan.steps.iter().zip(&record.steps) {
            assert_eq!(sp.adopted, st.adopted);
        }
        for (i, sp) in plan.steps.iter().enumerate() {
            for s in 0..2 {
                if sp.adopted[s] {
                    assert!(linalg::psd_le(&sp.carried_p[s], &sp.local_p[s], 1e-9));
                }
                if i > 0 {
                    assert_eq!(sp.carried_p[s], if sp.adopted[s] { sp.p_fused.clone() } else { sp.local_p[s].clone() });
                }
            }
        }
    }

    #[test]
    fn released_fusion_is_post_processing() {
        let model = scenario::tracking_model();
        let input = scenario::tracking_input();
        let record = run_algorithm_2(&model, &input, tracking_params(), FusionWeights::uniform(2), 10, 4).unwrap();
        for step in &record.steps {
            let p_f = &step.fused.p_fused;
            let mut x = DVector::zeros(4);
            for (i, r) in step.released.iter().enumerate() {
                let w = step.fused.weights.as_slice()[i];
                x += p_f * r.p_bar.clone().try_inverse().unwrap() * &r.x_bar * w;
            }
            assert!((x - &step.fused.x_fused).norm() <= 1e-8 * (1.0 + step.fused.x_fused.norm()));
        }
    }

    #[test]
    fn unsquared_rule_without_enforcement_fails_certificate() {
        let model = scenario::tracking_model();
        let input = scenario::tracking_input();
        let options = PipelineOptions {
            sensitivity: SensitivityRule::Unsquared,
            enforce_certificate: false,
            ..PipelineOptions::default()
        };
        let p = FusionPipeline::new(&model, &input, Algorithm::Alg1, Some(tracking_params()), FusionWeights::uniform(2))
            .with_options(options);
        let plan = p.plan(5).unwrap();
        assert!(!plan.certificates_hold());
        let enforced = FusionPipeline::new(&model, &input, Algorithm::Alg1, Some(tracking_params()), FusionWeights::uniform(2))
            .with_options(PipelineOptions { enforce_certificate: true, ..options });
        let plan = enforced.plan(5).unwrap();
        assert!(plan.certificates_hold());
        assert!(plan.steps.iter().all(|s| s.sdp.unwrap().inflations > 0));
    }

    #[test]
    fn accuracy_loss_identity_each_step() {
        let model = scenario::tracking_model();
        let input = scenario::tracking_input();
        let p = FusionPipeline::new(&model, &input, Algorithm::Alg1, Some(tracking_params()), FusionWeights::uniform(2))
            .with_options(PipelineOptions { with_delta_p: true, ..PipelineOptions::default() });
        let plan = p.plan(50).unwrap();
        for sp in &plan.steps {
            let dp = sp.delta_p.as_ref().unwrap();
            assert!((dp - (&sp.p_fused - &sp.p_nonprivate)).norm() <= 1e-8);
            assert!(linalg::min_eigenvalue(dp) >= -1e-8 * dp.norm().max(1.0));
        }
    }
}
