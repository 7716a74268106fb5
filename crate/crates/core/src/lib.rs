//! Carlini–Wagner attacks on small ReLU networks, counter-attack detection,
//! and exact linear-region analysis for two-input networks.
//!
//! ```
//! use counterattack::{attack, datagen, network};
//!
//! let data = datagen::two_moons(200, 0.1, 0).unwrap();
//! let init = network::MlpModel::init(&[2, 8, 2], 1).unwrap();
//! let cfg = network::TrainConfig { epochs: 20, ..Default::default() };
//! let model = network::train(&init, &data, &cfg).unwrap();
//! let x0 = &data.points()[0];
//! let acfg = attack::AttackConfig { max_iters: 64, ..Default::default() };
//! let trace = attack::cw_attack(&model, x0, &acfg).unwrap();
//! assert!(trace.adversarial_distance() >= 0.0);
//! ```

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod counter;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod network;
pub mod par;
pub mod polytope;

pub use error::{Error, Result};
