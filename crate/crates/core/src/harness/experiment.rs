use rayon::prelude::*;

use super::{report, ExperimentConfig, HarnessError};
use crate::fusion::{Algorithm, FusionPipeline, FusionWeights, NoisePlan, PipelineOptions};
use crate::privacy::PrivacyParams;
use crate::streams::SeedTree;

/// Squared errors of one run at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub step: usize,
    pub run: u64,
    /// `‖x̄_i − x‖²` for each sensor's released estimate.
    pub local: Vec<f64>,
    /// `‖x̂_fused − x‖²`.
    pub fused: f64,
    pub trace_p: f64,
    pub trace_delta_p: Option<f64>,
    pub delta_achieved: Option<f64>,
}

/// Monte Carlo results. Per-step vectors are indexed by `k − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    pub algorithm: Algorithm,
    pub n_sensors: usize,
    pub horizon: usize,
    pub n_runs: usize,
    /// Step-major, run-minor.
    pub rows: Vec<MseRow>,
    /// `mse_local[i][k-1]`, averaged over runs.
    pub mse_local: Vec<Vec<f64>>,
    pub mse_fused: Vec<f64>,
    pub trace_p_fused: Vec<f64>,
    pub trace_delta_p: Option<Vec<f64>>,
    pub delta_achieved: Vec<Option<f64>>,
    /// Number of (step, sensor) pairs where the fused pair was fed back.
    pub feedback_adoptions: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl MseReport {
    pub fn empty(algorithm: Algorithm, n_sensors: usize) -> Self {
        Self {
            algorithm,
            n_sensors,
            horizon: 0,
            n_runs: 0,
            rows: Vec::new(),
            mse_local: vec![Vec::new(); n_sensors],
            mse_fused: Vec::new(),
            trace_p_fused: Vec::new(),
            trace_delta_p: None,
            delta_achieved: Vec::new(),
            feedback_adoptions: 0,
        }
    }

    /// Fused MSE averaged over runs and steps.
    pub fn avg_fused(&self) -> f64 {
        mean(&self.mse_fused)
    }

    pub fn avg_local(&self, sensor: usize) -> f64 {
        mean(&self.mse_local[sensor])
    }

    pub fn avg_trace_p(&self) -> f64 {
        mean(&self.trace_p_fused)
    }

    pub fn avg_trace_delta_p(&self) -> Option<f64> {
        self.trace_delta_p.as_deref().map(mean)
    }

    /// Largest achieved `δ` over all steps; `None` without privacy.
    pub fn max_delta_achieved(&self) -> Option<f64> {
        self.delta_achieved
            .iter()
            .flatten()
            .copied()
            .reduce(f64::max)
    }
}

fn pipeline_for<'a>(
    config: &'a ExperimentConfig,
    algorithm: Algorithm,
    privacy: PrivacyParams,
    weights: FusionWeights,
) -> FusionPipeline<'a> {
    FusionPipeline::new(&config.model, &config.input, algorithm, Some(privacy), weights).with_options(
        PipelineOptions {
            sensitivity: config.sensitivity,
            sdp: config.sdp,
            enforce_certificate: config.enforce_certificate,
            with_delta_p: config.with_delta_p,
        },
    )
}

fn collect_report(
    config: &ExperimentConfig,
    pipeline: &FusionPipeline,
    plan: &NoisePlan,
) -> Result<MseReport, HarnessError> {
    let tree = SeedTree::new(config.master_seed);
    let m = config.model.n_sensors();
    let per_run: Vec<Vec<MseRow>> = (0..config.n_runs as u64)
        .into_par_iter()
        .map(|run| {
            let record = pipeline
                .run(plan, &tree.run(run))
                .map_err(|source| HarnessError::Run { run, source })?;
            Ok(record
                .steps
                .iter()
                .zip(&plan.steps)
                .map(|(st, sp)| {
                    let x = &record.trajectory.states[st.k];
                    MseRow {
                        step: st.k,
                        run,
                        local: st.released.iter().map(|r| (&r.x_bar - x).norm_squared()).collect(),
                        fused: (&st.fused.x_fused - x).norm_squared(),
                        trace_p: sp.p_fused.trace(),
                        trace_delta_p: sp.delta_p.as_ref().map(|d| d.trace()),
                        delta_achieved: sp.certificate.map(|c| c.delta_achieved),
                    }
                })
                .collect())
        })
        .collect::<Result<_, HarnessError>>()?;

    let horizon = plan.horizon();
    let n = config.n_runs as f64;
    let mut report = MseReport::empty(pipeline.algorithm, m);
    report.horizon = horizon;
    report.n_runs = config.n_runs;
    report.mse_local = vec![vec![0.0; horizon]; m];
    report.mse_fused = vec![0.0; horizon];
    for rows in &per_run {
        for (j, row) in rows.iter().enumerate() {
            for i in 0..m {
                report.mse_local[i][j] += row.local[i] / n;
            }
            report.mse_fused[j] += row.fused / n;
        }
    }
    report.trace_p_fused = plan.steps.iter().map(|s| s.p_fused.trace()).collect();
    report.trace_delta_p = config
        .with_delta_p
        .then(|| plan.steps.iter().map(|s| s.delta_p.as_ref().map_or(0.0, |d| d.trace())).collect());
    report.delta_achieved = plan
        .steps
        .iter()
        .map(|s| s.certificate.map(|c| c.delta_achieved))
        .collect();
    report.feedback_adoptions = plan
        .steps
        .iter()
        .map(|s| s.adopted.iter().filter(|&&a| a).count())
        .sum();
    report.rows = (0..horizon)
        .flat_map(|j| per_run.iter().map(move |rows| rows[j].clone()))
        .collect();
    Ok(report)
}

fn run_variant(
    config: &ExperimentConfig,
    algorithm: Algorithm,
    privacy: PrivacyParams,
    weights: FusionWeights,
) -> Result<MseReport, HarnessError> {
    config.check()?;
    let pipeline = pipeline_for(config, algorithm, privacy, weights);
    let plan = pipeline.plan(config.horizon)?;
    collect_report(config, &pipeline, &plan)
}

/// Runs the configured algorithm over all Monte Carlo runs and writes the CSV
/// when an output path is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MseReport, HarnessError> {
    let report = run_variant(config, config.algorithm, config.privacy, config.weights.clone())?;
    if let Some(path) = &config.output {
        report::emit_csv(&report, path)?;
    }
    Ok(report)
}

/// Time-averaged MSEs for each algorithm and weight vector, with shared seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub algorithms: Vec<Algorithm>,
    pub weights: Vec<FusionWeights>,
    /// `fused[a][w]`.
    pub fused: Vec<Vec<f64>>,
    /// `local[a][w][i]`.
    pub local: Vec<Vec<Vec<f64>>>,
}

impl WeightTable {
    /// Plain-text table, one row per algorithm and one column per weight vector.
    pub fn render(&self) -> String {
        let mut out = format!("{:<12}", "algorithm");
        for w in &self.weights {
            out.push_str(&format!("{:>16}", w.to_string()));
        }
        out.push('\n');
        for (a, alg) in self.algorithms.iter().enumerate() {
            out.push_str(&format!("{:<12}", alg.as_str()));
            for v in &self.fused[a] {
                out.push_str(&format!("{v:>16.6e}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn compare_weights(
    config: &ExperimentConfig,
    weights: &[FusionWeights],
    algorithms: &[Algorithm],
) -> Result<WeightTable, HarnessError> {
    let m = config.model.n_sensors();
    if let Some(bad) = weights.iter().find(|w| w.len() != m) {
        return Err(HarnessError::Config(format!(
            "weight vector {bad} does not have {m} entries"
        )));
    }
    let mut fused = Vec::with_capacity(algorithms.len());
    let mut local = Vec::with_capacity(algorithms.len());
    for &alg in algorithms {
        let mut f_row = Vec::with_capacity(weights.len());
        let mut l_row = Vec::with_capacity(weights.len());
        for w in weights {
            let report = run_variant(config, alg, config.privacy, w.clone())?;
            f_row.push(report.avg_fused());
            l_row.push((0..m).map(|i| report.avg_local(i)).collect());
        }
        fused.push(f_row);
        local.push(l_row);
    }
    Ok(WeightTable {
        algorithms: algorithms.to_vec(),
        weights: weights.to_vec(),
        fused,
        local,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub params: PrivacyParams,
    pub algorithm: Algorithm,
    pub mse_fused: f64,
    pub mse_local: Vec<f64>,
    pub max_delta_achieved: Option<f64>,
}

/// Time-averaged MSEs for each privacy setting, with shared seeds.
pub fn sweep(
    config: &ExperimentConfig,
    variants: &[PrivacyParams],
    algorithms: &[Algorithm],
) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rows = Vec::with_capacity(variants.len() * algorithms.len());
    for &alg in algorithms {
        for &params in variants {
            let report = run_variant(config, alg, params, config.weights.clone())?;
            rows.push(SweepRow {
                params,
                algorithm: alg,
                mse_fused: report.avg_fused(),
                mse_local: (0..report.n_sensors).map(|i| report.avg_local(i)).collect(),
                max_delta_achieved: report.max_delta_achieved(),
            });
        }
    }
    Ok(rows)
}
