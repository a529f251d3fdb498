//! Benchmark plants, experiment schedules and trigger parameters used by
//! the examples, the CLI presets and the acceptance suite.

use nalgebra::{DMatrix, DVector};

use crate::sysmodel::{DelaySamplingBounds, LtiSystem, TriggerConfig};

/// Second-order servo benchmark: double integrator with light damping on
/// the velocity state and a low-gain input channel.
pub fn example1_plant() -> LtiSystem {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -0.1]);
    let b = DMatrix::from_column_slice(2, 1, &[0.0, 0.1]);
    let bw = DMatrix::identity(2, 2);
    LtiSystem::new(a, b, bw).expect("static plant is well formed")
}

/// Stabilizing gain used for the fixed-gain sweeps on the servo benchmark.
pub fn example1_gain() -> DMatrix<f64> {
    DMatrix::from_row_slice(1, 2, &[-3.75, -11.5])
}

/// 100-sample schedule: unit spacing for the first 50 samples, spacing 2
/// afterwards.
pub fn example1_schedule() -> Vec<f64> {
    let mut t = Vec::with_capacity(100);
    let mut cur = 1.0;
    for _ in 0..100 {
        t.push(cur);
        cur += if cur <= 49.0 { 1.0 } else { 2.0 };
    }
    t
}

/// Trigger configuration for the servo benchmark runs (weight matrix is
/// filled in by the co-design step).
pub fn example1_trigger(omega: DMatrix<f64>) -> TriggerConfig {
    TriggerConfig {
        sigma1: 0.4,
        sigma2: 0.1,
        theta: 2.0,
        lambda: 0.5,
        omega,
        h: 0.2,
        d: 0.1,
        eta0: 1.0,
    }
}

pub fn example1_bounds() -> DelaySamplingBounds {
    DelaySamplingBounds::new(0.0, 0.1, 1e-5, 0.2).expect("static bounds")
}

pub fn example1_x0() -> DVector<f64> {
    DVector::from_column_slice(&[3.0, -2.0])
}

/// Linearized inverted pendulum on a cart (bob mass 1, cart mass 10, arm
/// length 3, gravity 10).
pub fn example2_plant() -> LtiSystem {
    let (m1, m2, l, g) = (1.0, 10.0, 3.0, 10.0);
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, -m1 * g / m2, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, g / l, 0.0,
        ],
    );
    let b = DMatrix::from_column_slice(4, 1, &[0.0, 1.0 / m2, 0.0, -1.0 / (m2 * l)]);
    let bw = 0.01 * DMatrix::identity(4, 4);
    LtiSystem::new(a, b, bw).expect("static plant is well formed")
}

/// 50-sample schedule with spacing 0.1.
pub fn example2_schedule() -> Vec<f64> {
    (0..50).map(|i| 0.1 + 0.1 * i as f64).collect()
}

pub fn example2_trigger(omega: DMatrix<f64>) -> TriggerConfig {
    TriggerConfig {
        sigma1: 0.01,
        sigma2: 0.01,
        theta: 2.0,
        lambda: 0.5,
        omega,
        h: 0.1,
        d: 0.01,
        eta0: 1.0,
    }
}

pub fn example2_bounds() -> DelaySamplingBounds {
    DelaySamplingBounds::new(0.0, 0.01, 1e-5, 0.1).expect("static bounds")
}

pub fn example2_x0() -> DVector<f64> {
    DVector::from_column_slice(&[0.98, 0.0, 0.2, 0.0])
}

/// Noise amplitudes of the sweep tables.
pub const TABLE_WBAR: [f64; 6] = [0.005, 0.01, 0.02, 0.03, 0.04, 0.05];

/// Delay upper bounds of the fixed-gain sweep table.
pub const TABLE_DBAR: [f64; 3] = [0.0, 0.1, 0.2];
