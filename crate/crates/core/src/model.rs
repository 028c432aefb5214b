//! Linear time-varying plant with an exogenous input, observed by several
//! sensors:
//!
//! ```text
//! x_{k+1} = A_k x_k + B_k d_k + w_k,      w_k ~ N(0, Q_k)
//! y_{i,k} = C_{i,k} x_k + v_{i,k},        v_{i,k} ~ N(0, R_{i,k})
//! ```
//!
//! Matrices may be given once (constant over time) or as a per-step list.
//! Covariances are symmetrized when the model is built.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::streams::{gaussian_from_factor, NoiseRole, RunStreams, SeedTree};

/// Relative singular-value threshold used by the rank checks.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Smallest eigenvalue accepted for a covariance after symmetrization.
pub const COVARIANCE_PSD_TOLERANCE: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model needs at least one sensor")]
    NoSensors,
    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: String,
        expected: String,
        found: String,
    },
    #[error("matrix {matrix}{} has no entry for step {step}", sensor_suffix(*sensor))]
    MissingStep {
        matrix: &'static str,
        sensor: Option<usize>,
        step: usize,
    },
    #[error("input signal is not defined at step {step}")]
    InputUndefined { step: usize },
    #[error("input signal has dimension {found}, model expects {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("cannot sample noise: {0}")]
    Sampling(#[from] LinalgError),
}

fn sensor_suffix(sensor: Option<usize>) -> String {
    sensor.map(|i| format!(" (sensor {})", i + 1)).unwrap_or_default()
}

/// A matrix that is either constant over time or given per step.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSequence {
    Constant(DMatrix<f64>),
    PerStep(Vec<DMatrix<f64>>),
}

impl MatrixSequence {
    pub fn at(&self, k: usize) -> Option<&DMatrix<f64>> {
        match self {
            MatrixSequence::Constant(m) => Some(m),
            MatrixSequence::PerStep(list) => list.get(k),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MatrixSequence::Constant(_))
    }

    /// Number of explicitly given steps; `None` for a constant matrix.
    pub fn defined_steps(&self) -> Option<usize> {
        match self {
            MatrixSequence::Constant(_) => None,
            MatrixSequence::PerStep(list) => Some(list.len()),
        }
    }

    pub fn matrices(&self) -> Box<dyn Iterator<Item = (usize, &DMatrix<f64>)> + '_> {
        match self {
            MatrixSequence::Constant(m) => Box::new(std::iter::once((0, m))),
            MatrixSequence::PerStep(list) => Box::new(list.iter().enumerate()),
        }
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        match self {
            MatrixSequence::Constant(m) => MatrixSequence::Constant(f(m)),
            MatrixSequence::PerStep(list) => MatrixSequence::PerStep(list.iter().map(f).collect()),
        }
    }
}

impl From<DMatrix<f64>> for MatrixSequence {
    fn from(m: DMatrix<f64>) -> Self {
        MatrixSequence::Constant(m)
    }
}

/// Per-sensor measurement model.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    pub c: MatrixSequence,
    pub r: MatrixSequence,
}

/// The plant and its sensor network.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    dim_x: usize,
    dim_d: usize,
    dim_y: Vec<usize>,
    a: MatrixSequence,
    b: MatrixSequence,
    q: MatrixSequence,
    sensors: Vec<SensorModel>,
    x0_mean: DVector<f64>,
    p0: DMatrix<f64>,
}

fn shape_error(what: String, expected: (usize, usize), found: (usize, usize)) -> ModelError {
    ModelError::Dimension {
        what,
        expected: format!("{}x{}", expected.0, expected.1),
        found: format!("{}x{}", found.0, found.1),
    }
}

fn check_sequence(
    seq: &MatrixSequence,
    name: &str,
    expected: (usize, usize),
) -> Result<(), ModelError> {
    for (k, m) in seq.matrices() {
        if m.shape() != expected {
            let what = if seq.is_constant() {
                name.to_string()
            } else {
                format!("{name}[{k}]")
            };
            return Err(shape_error(what, expected, m.shape()));
        }
    }
    Ok(())
}

impl SystemModel {
    /// Builds a model, checking every matrix shape. `dim_x` comes from `x0_mean`,
    /// `dim_d` from the column count of `B`, and each `dim_y_i` from the row
    /// count of `C_i`.
    pub fn new(
        a: MatrixSequence,
        b: MatrixSequence,
        q: MatrixSequence,
        sensors: Vec<SensorModel>,
        x0_mean: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        if sensors.is_empty() {
            return Err(ModelError::NoSensors);
        }
        let dim_x = x0_mean.len();
        let dim_d = b
            .matrices()
            .next()
            .map(|(_, m)| m.ncols())
            .ok_or_else(|| ModelError::Dimension {
                what: "B".into(),
                expected: "at least one matrix".into(),
                found: "empty list".into(),
            })?;
        check_sequence(&a, "A", (dim_x, dim_x))?;
        check_sequence(&b, "B", (dim_x, dim_d))?;
        check_sequence(&q, "Q", (dim_x, dim_x))?;
        if p0.shape() != (dim_x, dim_x) {
            return Err(shape_error("P0".into(), (dim_x, dim_x), p0.shape()));
        }
        let mut dim_y = Vec::with_capacity(sensors.len());
        for (i, s) in sensors.iter().enumerate() {
            let rows = s
                .c
                .matrices()
                .next()
                .map(|(_, m)| m.nrows())
                .ok_or_else(|| ModelError::Dimension {
                    what: format!("C[{}]", i + 1),
                    expected: "at least one matrix".into(),
                    found: "empty list".into(),
                })?;
            check_sequence(&s.c, &format!("C[{}]", i + 1), (rows, dim_x))?;
            check_sequence(&s.r, &format!("R[{}]", i + 1), (rows, rows))?;
            dim_y.push(rows);
        }
        let sensors = sensors
            .into_iter()
            .map(|s| SensorModel {
                c: s.c,
                r: s.r.map(linalg::symmetrize),
            })
            .collect();
        Ok(Self {
            dim_x,
            dim_d,
            dim_y,
            a,
            b,
            q: q.map(linalg::symmetrize),
            sensors,
            x0_mean,
            p0: linalg::symmetrize(&p0),
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    pub fn dim_y(&self, sensor: usize) -> usize {
        self.dim_y[sensor]
    }

    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.x0_mean
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }

    pub fn a(&self, k: usize) -> Result<&DMatrix<f64>, ModelError> {
        self.a.at(k).ok_or(ModelError::MissingStep {
            matrix: "A",
            sensor: None,
            step: k,
        })
    }

    pub fn b(&self, k: usize) -> Result<&DMatrix<f64>, ModelError> {
        self.b.at(k).ok_or(ModelError::MissingStep {
            matrix: "B",
            sensor: None,
            step: k,
        })
    }

    pub fn q(&self, k: usize) -> Result<&DMatrix<f64>, ModelError> {
        self.q.at(k).ok_or(ModelError::MissingStep {
            matrix: "Q",
            sensor: None,
            step: k,
        })
    }

    pub fn c(&self, sensor: usize, k: usize) -> Result<&DMatrix<f64>, ModelError> {
        self.sensors[sensor].c.at(k).ok_or(ModelError::MissingStep {
            matrix: "C",
            sensor: Some(sensor),
            step: k,
        })
    }

    pub fn r(&self, sensor: usize, k: usize) -> Result<&DMatrix<f64>, ModelError> {
        self.sensors[sensor].r.at(k).ok_or(ModelError::MissingStep {
            matrix: "R",
            sensor: Some(sensor),
            step: k,
        })
    }

    pub fn sensor(&self, sensor: usize) -> &SensorModel {
        &self.sensors[sensor]
    }

    fn all_constant(&self) -> bool {
        self.a.is_constant()
            && self.b.is_constant()
            && self.q.is_constant()
            && self
                .sensors
                .iter()
                .all(|s| s.c.is_constant() && s.r.is_constant())
    }

    /// Checks the assumptions the filter and the privacy machinery rely on over
    /// steps `1..=horizon`. Never fails; every problem found is listed in the
    /// report.
    pub fn validate(&self, horizon: usize) -> ValidationReport {
        let mut issues = Vec::new();

        if self.dim_x < self.dim_d {
            issues.push(ValidationIssue::DimensionOrder {
                sensor: None,
                dim: self.dim_x,
                dim_d: self.dim_d,
            });
        }
        for (i, &dy) in self.dim_y.iter().enumerate() {
            if dy < self.dim_d {
                issues.push(ValidationIssue::DimensionOrder {
                    sensor: Some(i),
                    dim: dy,
                    dim_d: self.dim_d,
                });
            }
        }

        // Constant models need one representative step.
        let last_step = if self.all_constant() { 1 } else { horizon };
        for k in 1..=last_step {
            let b = match self.b(k - 1) {
                Ok(b) => b,
                Err(_) => {
                    issues.push(ValidationIssue::MissingStep {
                        matrix: "B",
                        sensor: None,
                        step: k - 1,
                    });
                    continue;
                }
            };
            let rank_b = linalg::rank(b, RANK_TOLERANCE);
            if rank_b != self.dim_d {
                issues.push(ValidationIssue::InputRank {
                    step: k,
                    rank_b,
                    dim_d: self.dim_d,
                });
            }
            for i in 0..self.n_sensors() {
                match self.c(i, k) {
                    Ok(c) => {
                        let rank_cb = linalg::rank(&(c * b), RANK_TOLERANCE);
                        if rank_cb != rank_b || rank_cb != self.dim_d {
                            issues.push(ValidationIssue::ObservationRank {
                                sensor: i,
                                step: k,
                                rank_cb,
                                rank_b,
                            });
                        }
                    }
                    Err(_) => issues.push(ValidationIssue::MissingStep {
                        matrix: "C",
                        sensor: Some(i),
                        step: k,
                    }),
                }
            }
        }

        for k in 0..horizon {
            for (matrix, seq) in [("A", &self.a), ("Q", &self.q)] {
                if seq.at(k).is_none() {
                    issues.push(ValidationIssue::MissingStep {
                        matrix,
                        sensor: None,
                        step: k,
                    });
                }
            }
        }
        for i in 0..self.n_sensors() {
            for k in 0..=horizon {
                if self.sensors[i].r.at(k).is_none() {
                    issues.push(ValidationIssue::MissingStep {
                        matrix: "R",
                        sensor: Some(i),
                        step: k,
                    });
                }
            }
        }

        let mut psd = |matrix: &'static str, sensor: Option<usize>, seq: &MatrixSequence| {
            for (k, m) in seq.matrices() {
                let min_eigenvalue = linalg::min_eigenvalue(m);
                if min_eigenvalue < COVARIANCE_PSD_TOLERANCE {
                    issues.push(ValidationIssue::NotPsd {
                        matrix,
                        sensor,
                        step: k,
                        min_eigenvalue,
                    });
                }
            }
        };
        psd("Q", None, &self.q);
        psd("P0", None, &MatrixSequence::Constant(self.p0.clone()));
        for (i, s) in self.sensors.iter().enumerate() {
            psd("R", Some(i), &s.r);
        }

        ValidationReport { issues }
    }
}

/// One failed check from [`SystemModel::validate`]. Sensor indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    /// `rank(B_{k-1}) != dim_d`.
    InputRank {
        step: usize,
        rank_b: usize,
        dim_d: usize,
    },
    /// `rank(C_{i,k} B_{k-1}) != rank(B_{k-1})` (or below `dim_d`).
    ObservationRank {
        sensor: usize,
        step: usize,
        rank_cb: usize,
        rank_b: usize,
    },
    NotPsd {
        matrix: &'static str,
        sensor: Option<usize>,
        step: usize,
        min_eigenvalue: f64,
    },
    MissingStep {
        matrix: &'static str,
        sensor: Option<usize>,
        step: usize,
    },
    /// State or measurement dimension smaller than the input dimension.
    DimensionOrder {
        sensor: Option<usize>,
        dim: usize,
        dim_d: usize,
    },
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValidationIssue::InputRank { step, rank_b, dim_d } => {
                write!(f, "step {step}: rank(B) = {rank_b} < dim_d = {dim_d}")
            }
            ValidationIssue::ObservationRank {
                sensor,
                step,
                rank_cb,
                rank_b,
            } => write!(
                f,
                "sensor {} step {step}: rank(C B) = {rank_cb}, rank(B) = {rank_b}",
                sensor + 1
            ),
            ValidationIssue::NotPsd {
                matrix,
                sensor,
                step,
                min_eigenvalue,
            } => write!(
                f,
                "{matrix}{} step {step} is not PSD (min eigenvalue {min_eigenvalue:.3e})",
                sensor_suffix(*sensor)
            ),
            ValidationIssue::MissingStep {
                matrix,
                sensor,
                step,
            } => write!(f, "{matrix}{} missing step {step}", sensor_suffix(*sensor)),
            ValidationIssue::DimensionOrder { sensor, dim, dim_d } => match sensor {
                Some(i) => write!(f, "sensor {}: dim_y = {dim} < dim_d = {dim_d}", i + 1),
                None => write!(f, "dim_x = {dim} < dim_d = {dim_d}"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }

    /// `true` when the rank condition `rank(C B) = rank(B) = dim_d` holds everywhere.
    pub fn rank_condition_holds(&self) -> bool {
        !self.issues.iter().any(|i| {
            matches!(
                i,
                ValidationIssue::InputRank { .. } | ValidationIssue::ObservationRank { .. }
            )
        })
    }

    /// `(sensor, step)` pairs violating the observation rank condition.
    pub fn rank_offenders(&self) -> Vec<(usize, usize)> {
        self.issues
            .iter()
            .filter_map(|i| match i {
                ValidationIssue::ObservationRank { sensor, step, .. } => Some((*sensor, *step)),
                _ => None,
            })
            .collect()
    }
}

/// Exogenous input `d_k`.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSignal {
    Zero { dim: usize },
    Constant(DVector<f64>),
    /// `d_k[j] = amplitude[j] * cos(frequency * k + phase)`.
    Sinusoid {
        amplitude: DVector<f64>,
        frequency: f64,
        phase: f64,
    },
    /// Tabulated values, one vector per step starting at `k = 0`.
    Table(Vec<DVector<f64>>),
}

impl InputSignal {
    pub fn dim(&self) -> usize {
        match self {
            InputSignal::Zero { dim } => *dim,
            InputSignal::Constant(v) => v.len(),
            InputSignal::Sinusoid { amplitude, .. } => amplitude.len(),
            InputSignal::Table(rows) => rows.first().map_or(0, |r| r.len()),
        }
    }

    pub fn value(&self, k: usize) -> Result<DVector<f64>, ModelError> {
        match self {
            InputSignal::Zero { dim } => Ok(DVector::zeros(*dim)),
            InputSignal::Constant(v) => Ok(v.clone()),
            InputSignal::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => Ok(amplitude * (frequency * k as f64 + phase).cos()),
            InputSignal::Table(rows) => rows
                .get(k)
                .cloned()
                .ok_or(ModelError::InputUndefined { step: k }),
        }
    }
}

/// Ground truth and measurements for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_0 ..= x_horizon`.
    pub states: Vec<DVector<f64>>,
    /// `d_0 .. d_{horizon-1}`.
    pub inputs: Vec<DVector<f64>>,
    /// `measurements[i][k] = y_{i,k}` for `k = 0 ..= horizon`.
    pub measurements: Vec<Vec<DVector<f64>>>,
    pub seed: u64,
    pub run: u64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }
}

/// Lazily computed noise factors, computed once for constant covariances.
struct FactorCache<'a> {
    seq: &'a MatrixSequence,
    name: &'static str,
    cached: Option<DMatrix<f64>>,
}

impl<'a> FactorCache<'a> {
    fn new(seq: &'a MatrixSequence, name: &'static str) -> Self {
        Self {
            seq,
            name,
            cached: None,
        }
    }

    fn factor(&mut self, k: usize, sensor: Option<usize>) -> Result<DMatrix<f64>, ModelError> {
        if let (true, Some(f)) = (self.seq.is_constant(), &self.cached) {
            return Ok(f.clone());
        }
        let m = self.seq.at(k).ok_or(ModelError::MissingStep {
            matrix: self.name,
            sensor,
            step: k,
        })?;
        let f = linalg::psd_factor(m, self.name)?;
        if self.seq.is_constant() {
            self.cached = Some(f.clone());
        }
        Ok(f)
    }
}

/// Simulates one run with the substreams of run 0 under `seed`.
pub fn simulate(
    model: &SystemModel,
    input: &InputSignal,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory, ModelError> {
    simulate_run(model, input, horizon, &SeedTree::new(seed).run(0))
}

/// Simulates `x_0 ..= x_horizon` and every sensor's measurements using the
/// given run's substreams.
pub fn simulate_run(
    model: &SystemModel,
    input: &InputSignal,
    horizon: usize,
    streams: &RunStreams,
) -> Result<Trajectory, ModelError> {
    if input.dim() != model.dim_d() {
        return Err(ModelError::InputDimension {
            expected: model.dim_d(),
            found: input.dim(),
        });
    }
    let p0_factor = linalg::psd_factor(model.p0(), "P0")?;
    let x0 = model.x0_mean()
        + gaussian_from_factor(&p0_factor, &mut streams.stream(NoiseRole::InitialState, 0, 0));

    let mut q_factors = FactorCache::new(&model.q, "Q");
    let mut r_factors: Vec<FactorCache> = model
        .sensors
        .iter()
        .map(|s| FactorCache::new(&s.r, "R"))
        .collect();

    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    states.push(x0);
    for k in 0..horizon {
        let d = input.value(k)?;
        let w = gaussian_from_factor(
            &q_factors.factor(k, None)?,
            &mut streams.stream(NoiseRole::Process, 0, k),
        );
        let next = model.a(k)? * &states[k] + model.b(k)? * &d + w;
        inputs.push(d);
        states.push(next);
    }

    let mut measurements = Vec::with_capacity(model.n_sensors());
    for (i, cache) in r_factors.iter_mut().enumerate() {
        let mut ys = Vec::with_capacity(horizon + 1);
        for (k, x) in states.iter().enumerate() {
            let v = gaussian_from_factor(
                &cache.factor(k, Some(i))?,
                &mut streams.stream(NoiseRole::Measurement, i, k),
            );
            ys.push(model.c(i, k)? * x + v);
        }
        measurements.push(ys);
    }

    Ok(Trajectory {
        states,
        inputs,
        measurements,
        seed: streams.master(),
        run: streams.run_index(),
    })
}
