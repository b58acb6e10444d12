//! Bounded logit functions for adversarially robust classifiers: activations,
//! losses, free-logit theorem checks, a small network library, attacks,
//! diagnostics and an experiment runner.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activations;
pub mod attacks;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod nn;
pub mod theoremlab;

pub use activations::{ActivationKind, BoundedFn};
pub use attacks::{AccuracyPoint, AttackConfig, AttackKind};
pub use data::Dataset;
pub use error::{Error, Result};
pub use losses::{LossSpec, TargetVector};
pub use nn::{GammaMode, Layer, Model, Tensor, TrainConfig};
