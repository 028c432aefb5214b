//! Experiment configuration files (TOML or JSON, chosen by extension).
//!
//! Model keys live at the top level: `A`, `B`, `Q` (one matrix, or a list of
//! per-step matrices), `C` and `R` (one entry per sensor, each a matrix or a
//! per-step list), `x0_mean`, `P0`, and optionally `sensors` and `horizon`.
//! The `[input]` table picks the input family; `[experiment]` holds the run
//! settings and may point at a separate model file with `model = "path"`;
//! `[sdp]` overrides solver settings. Matrices are row-major nested arrays.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use super::HarnessError;
use crate::fusion::{Algorithm, FusionWeights};
use crate::model::{InputSignal, MatrixSequence, SensorModel, SystemModel};
use crate::privacy::{PrivacyParams, SensitivityRule};
use crate::scenario;
use crate::sdp::SdpSettings;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum MatrixSpec {
    Constant(Vec<Vec<f64>>),
    PerStep(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
enum InputSpec {
    Zero {
        dim: Option<usize>,
    },
    Constant {
        value: Vec<f64>,
    },
    Sinusoid {
        amplitude: Vec<f64>,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    Table {
        values: Vec<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrivacySpec {
    epsilon: Option<f64>,
    delta: Option<f64>,
    eps0: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSpec {
    model: Option<PathBuf>,
    algorithm: Option<String>,
    runs: Option<usize>,
    seed: Option<u64>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    eps0: Option<f64>,
    weights: Option<Vec<f64>>,
    output: Option<PathBuf>,
    with_delta_p: Option<bool>,
    sensitivity: Option<String>,
    enforce_certificate: Option<bool>,
    #[serde(default)]
    sweep: Vec<PrivacySpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SdpSpec {
    feasibility_tol: Option<f64>,
    objective_tol: Option<f64>,
    max_iters: Option<usize>,
    rho: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    sensors: Option<usize>,
    horizon: Option<usize>,
    #[serde(rename = "A")]
    a: Option<MatrixSpec>,
    #[serde(rename = "B")]
    b: Option<MatrixSpec>,
    #[serde(rename = "Q")]
    q: Option<MatrixSpec>,
    #[serde(rename = "C")]
    c: Option<Vec<MatrixSpec>>,
    #[serde(rename = "R")]
    r: Option<Vec<MatrixSpec>>,
    x0_mean: Option<Vec<f64>>,
    #[serde(rename = "P0")]
    p0: Option<Vec<Vec<f64>>>,
    input: Option<InputSpec>,
    experiment: Option<ExperimentSpec>,
    sdp: Option<SdpSpec>,
}

/// Fully resolved experiment settings.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: SystemModel,
    pub input: InputSignal,
    /// File the model was read from, if any.
    pub model_source: Option<PathBuf>,
    pub privacy: PrivacyParams,
    pub weights: FusionWeights,
    pub horizon: usize,
    pub n_runs: usize,
    pub algorithm: Algorithm,
    pub master_seed: u64,
    pub sweep: Vec<PrivacyParams>,
    pub output: Option<PathBuf>,
    pub with_delta_p: bool,
    pub sensitivity: SensitivityRule,
    pub enforce_certificate: bool,
    pub sdp: SdpSettings,
}

impl ExperimentConfig {
    /// The two-sensor tracking example with its default settings.
    pub fn tracking() -> Self {
        Self {
            model: scenario::tracking_model(),
            input: scenario::tracking_input(),
            model_source: None,
            privacy: PrivacyParams::new(scenario::EPSILON, scenario::DELTA, scenario::EPS0)
                .expect("example privacy parameters are valid"),
            weights: FusionWeights::uniform(2),
            horizon: scenario::HORIZON,
            n_runs: scenario::RUNS,
            algorithm: Algorithm::Alg1,
            master_seed: 0,
            sweep: Vec::new(),
            output: None,
            with_delta_p: false,
            sensitivity: SensitivityRule::Certified,
            enforce_certificate: true,
            sdp: SdpSettings::default(),
        }
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        if self.n_runs == 0 {
            return Err(HarnessError::Config("runs must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(HarnessError::Config("horizon must be at least 1".into()));
        }
        if self.weights.len() != self.model.n_sensors() {
            return Err(HarnessError::Config(format!(
                "{} weights for {} sensors",
                self.weights.len(),
                self.model.n_sensors()
            )));
        }
        Ok(())
    }
}

fn parse_file(path: &Path) -> Result<ConfigFile, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |message: String| HarnessError::Parse {
        path: path.to_path_buf(),
        message,
    };
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| parse_err(e.to_string())),
        Some("json") => serde_json::from_str(&text).map_err(|e| parse_err(e.to_string())),
        _ => Err(parse_err("expected a .toml or .json file".into())),
    }
}

fn to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>, HarnessError> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(HarnessError::Config(format!("{name}: rows have different lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn to_sequence(spec: &MatrixSpec, name: &str) -> Result<MatrixSequence, HarnessError> {
    match spec {
        MatrixSpec::Constant(rows) => Ok(MatrixSequence::Constant(to_matrix(rows, name)?)),
        MatrixSpec::PerStep(list) => Ok(MatrixSequence::PerStep(
            list.iter()
                .enumerate()
                .map(|(k, rows)| to_matrix(rows, &format!("{name}[{k}]")))
                .collect::<Result<_, _>>()?,
        )),
    }
}

fn required<T>(value: Option<T>, key: &str) -> Result<T, HarnessError> {
    value.ok_or_else(|| HarnessError::Config(format!("missing key `{key}`")))
}

fn build_model(file: &ConfigFile) -> Result<SystemModel, HarnessError> {
    let c = required(file.c.as_ref(), "C")?;
    let r = required(file.r.as_ref(), "R")?;
    if c.len() != r.len() {
        return Err(HarnessError::Config(format!(
            "{} observation matrices but {} noise covariances",
            c.len(),
            r.len()
        )));
    }
    if let Some(m) = file.sensors {
        if m != c.len() {
            return Err(HarnessError::Config(format!(
                "sensors = {m} but {} sensors are described",
                c.len()
            )));
        }
    }
    let sensors = c
        .iter()
        .zip(r)
        .enumerate()
        .map(|(i, (c, r))| {
            Ok(SensorModel {
                c: to_sequence(c, &format!("C[{}]", i + 1))?,
                r: to_sequence(r, &format!("R[{}]", i + 1))?,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(SystemModel::new(
        to_sequence(required(file.a.as_ref(), "A")?, "A")?,
        to_sequence(required(file.b.as_ref(), "B")?, "B")?,
        to_sequence(required(file.q.as_ref(), "Q")?, "Q")?,
        sensors,
        DVector::from_vec(required(file.x0_mean.clone(), "x0_mean")?),
        to_matrix(required(file.p0.as_ref(), "P0")?, "P0")?,
    )?)
}

fn build_input(spec: Option<&InputSpec>, dim_d: usize) -> InputSignal {
    match spec {
        None => InputSignal::Zero { dim: dim_d },
        Some(InputSpec::Zero { dim }) => InputSignal::Zero {
            dim: dim.unwrap_or(dim_d),
        },
        Some(InputSpec::Constant { value }) => InputSignal::Constant(DVector::from_vec(value.clone())),
        Some(InputSpec::Sinusoid {
            amplitude,
            frequency,
            phase,
        }) => InputSignal::Sinusoid {
            amplitude: DVector::from_vec(amplitude.clone()),
            frequency: *frequency,
            phase: *phase,
        },
        Some(InputSpec::Table { values }) => InputSignal::Table(
            values
                .iter()
                .map(|v| DVector::from_vec(v.clone()))
                .collect(),
        ),
    }
}

fn merge_model(into: &mut ConfigFile, from: ConfigFile) {
    macro_rules! fill {
        ($($f:ident),*) => { $( if into.$f.is_none() { into.$f = from.$f; } )* };
    }
    fill!(sensors, horizon, a, b, q, c, r, x0_mean, p0, input);
}

/// Reads and resolves a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let mut file = parse_file(path)?;
    let exp = file.experiment.clone().unwrap_or_default();
    let mut model_source = Some(path.to_path_buf());
    if let Some(model_path) = &exp.model {
        let resolved = match path.parent() {
            Some(dir) if model_path.is_relative() => dir.join(model_path),
            _ => model_path.clone(),
        };
        merge_model(&mut file, parse_file(&resolved)?);
        model_source = Some(resolved);
    }

    let model = build_model(&file)?;
    let input = build_input(file.input.as_ref(), model.dim_d());
    if input.dim() != model.dim_d() {
        return Err(HarnessError::Config(format!(
            "input has dimension {}, B has {} columns",
            input.dim(),
            model.dim_d()
        )));
    }

    let base = ExperimentConfig::tracking();
    let privacy = PrivacyParams::new(
        exp.epsilon.unwrap_or(base.privacy.epsilon()),
        exp.delta.unwrap_or(base.privacy.delta()),
        exp.eps0.unwrap_or(base.privacy.eps0()),
    )?;
    let sweep = exp
        .sweep
        .iter()
        .map(|s| {
            PrivacyParams::new(
                s.epsilon.unwrap_or(privacy.epsilon()),
                s.delta.unwrap_or(privacy.delta()),
                s.eps0.unwrap_or(privacy.eps0()),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let weights = match exp.weights {
        Some(w) => FusionWeights::new(w)?,
        None => FusionWeights::uniform(model.n_sensors()),
    };
    let algorithm = match exp.algorithm.as_deref() {
        Some(s) => s.parse().map_err(HarnessError::Config)?,
        None => base.algorithm,
    };
    let sensitivity = match exp.sensitivity.as_deref() {
        Some(s) => s.parse().map_err(HarnessError::Config)?,
        None => base.sensitivity,
    };
    let sdp_spec = file.sdp.clone().unwrap_or_default();
    let defaults = SdpSettings::default();
    let sdp = SdpSettings {
        feasibility_tol: sdp_spec.feasibility_tol.unwrap_or(defaults.feasibility_tol),
        objective_tol: sdp_spec.objective_tol.unwrap_or(defaults.objective_tol),
        max_iters: sdp_spec.max_iters.unwrap_or(defaults.max_iters),
        rho: sdp_spec.rho.unwrap_or(defaults.rho),
    };

    let config = ExperimentConfig {
        model,
        input,
        model_source,
        privacy,
        weights,
        horizon: file.horizon.unwrap_or(base.horizon),
        n_runs: exp.runs.unwrap_or(base.n_runs),
        algorithm,
        master_seed: exp.seed.unwrap_or(base.master_seed),
        sweep,
        output: exp.output,
        with_delta_p: exp.with_delta_p.unwrap_or(false),
        sensitivity,
        enforce_certificate: exp.enforce_certificate.unwrap_or(true),
        sdp,
    };
    config.check()?;
    Ok(config)
}
