//! Deterministic random-number substreams.
//!
//! One master seed drives every experiment. Each draw site is identified by
//! `(run, role, sensor, step)`; the tuple is folded into a 64-bit key with the
//! SplitMix64 finalizer, one field at a time, and the key seeds a ChaCha8
//! generator. Two sites with different tuples therefore get independent
//! streams, and the same tuple always reproduces the same numbers regardless of
//! the order in which runs, sensors or steps are visited.
//!
//! Because the privacy noise for `(run, sensor, step)` does not depend on the
//! algorithm or the privacy parameters, comparisons across configurations share
//! their random numbers (common random numbers).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// What a substream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseRole {
    InitialState,
    Process,
    Measurement,
    Privacy,
}

impl NoiseRole {
    fn tag(self) -> u64 {
        match self {
            NoiseRole::InitialState => 0x11,
            NoiseRole::Process => 0x22,
            NoiseRole::Measurement => 0x33,
            NoiseRole::Privacy => 0x44,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of the seed hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn run(&self, run: u64) -> RunStreams {
        RunStreams {
            master: self.master,
            run,
        }
    }
}

/// Substreams belonging to one Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunStreams {
    master: u64,
    run: u64,
}

impl RunStreams {
    pub fn run_index(&self) -> u64 {
        self.run
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn key(&self, role: NoiseRole, sensor: usize, step: usize) -> u64 {
        let mut h = splitmix64(self.master);
        for field in [self.run, role.tag(), sensor as u64, step as u64] {
            h = splitmix64(h ^ field);
        }
        h
    }

    pub fn stream(&self, role: NoiseRole, sensor: usize, step: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key(role, sensor, step))
    }
}

/// `n` independent standard normal draws.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draw from `N(0, L Lᵀ)` given the factor `L`.
pub fn gaussian_from_factor<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    factor * standard_normal(rng, factor.ncols())
}
