//! Training-data influence by hyper-gradient tracing, with the classic
//! Hessian-based estimators, brute-force oracles and a rehearsal-based
//! continual-learning harness built around them.

pub mod curriculum;
pub mod datagen;
pub mod digest;
pub mod error;
pub mod influence;
pub mod model;
pub mod selection;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
pub use model::{Activation, Evaluation, Example, ModelSpec, Objective, ParamVector, QuadraticModel};
pub use train::{train, LrSchedule, TrainConfig, TrainEnv, TrainResult};
