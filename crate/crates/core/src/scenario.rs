//! The two-sensor target-tracking example: two decoupled position/velocity
//! axes, an input acting on both positions, one precise position sensor and
//! one noisy full-state sensor.

use nalgebra::{DMatrix, DVector};

use crate::model::{InputSignal, SensorModel, SystemModel};

pub const HORIZON: usize = 50;
pub const RUNS: usize = 50;
pub const EPS0: f64 = 0.1;
pub const EPSILON: f64 = 1e-3;
pub const DELTA: f64 = 1e-3;

pub fn a() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, 1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 1.0, //
            0.0, 0.0, 0.0, 1.0,
        ],
    )
}

pub fn b() -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
}

pub fn q() -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.1, 1.0, 0.1]))
}

pub fn c1() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
}

pub fn r1() -> DMatrix<f64> {
    DMatrix::identity(2, 2) * 0.1
}

pub fn c2() -> DMatrix<f64> {
    DMatrix::identity(4, 4)
}

pub fn r2() -> DMatrix<f64> {
    DMatrix::identity(4, 4) * 20.0
}

pub fn x0_mean() -> DVector<f64> {
    DVector::from_vec(vec![0.0, 5.0, 0.0, 5.0])
}

pub fn p0() -> DMatrix<f64> {
    DMatrix::identity(4, 4) * 10.0
}

pub fn tracking_model() -> SystemModel {
    SystemModel::new(
        a().into(),
        b().into(),
        q().into(),
        vec![
            SensorModel {
                c: c1().into(),
                r: r1().into(),
            },
            SensorModel {
                c: c2().into(),
                r: r2().into(),
            },
        ],
        x0_mean(),
        p0(),
    )
    .expect("tracking model matrices are consistent")
}

/// `d_k = [5 cos k; 5 cos k]`.
pub fn tracking_input() -> InputSignal {
    InputSignal::Sinusoid {
        amplitude: DVector::from_vec(vec![5.0, 5.0]),
        frequency: 1.0,
        phase: 0.0,
    }
}
