#![allow(dead_code)]

use std::sync::OnceLock;

use counterattack::experiment::{setup, ExperimentConfig, Setup};
use counterattack::network::{Layer, MlpModel};

/// The default two-moons setup, built once per test binary.
pub fn moons() -> &'static Setup {
    static SETUP: OnceLock<Setup> = OnceLock::new();
    SETUP.get_or_init(|| setup(&ExperimentConfig::default()).expect("moons setup"))
}

/// `Z1 − Z2 = w·x + b` with a single affine layer.
pub fn linear(w: [f64; 2], b: f64) -> MlpModel {
    MlpModel::new(vec![Layer { w: vec![w.to_vec(), vec![0.0, 0.0]], b: vec![b, 0.0] }]).unwrap()
}
