//! Normalized gradient descent for two-layer networks trained with
//! exponentially-tailed losses.
//!
//! The crate provides the objective and its derivatives ([`objective`]),
//! the optimizers ([`optim`]), numerical certificates for the landscape
//! conditions that drive geometric convergence ([`certify`]), and
//! leave-one-out stability experiments ([`stability`]).

pub mod certify;
pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod optim;
pub mod report;
pub mod stability;

pub use data::{generate, Dataset, GenKind, GenSpec};
pub use error::{Error, Result};
pub use model::{Activation, ActivationKind, LinearModel, Model, RandomFeatures, SecondLayer, TwoLayerNet};
pub use numerics::{Mat, Rng};
pub use objective::{linear_margin, Evaluation, LossKind, Objective};
pub use optim::{EtaPolicy, Init, OptimizerConfig, OptimizerKind, RunResult, RunStatus, TraceRecord};
pub use report::KeyValues;
