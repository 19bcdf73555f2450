//! Deep momentum networks: architectures, objectives, training and
//! walk-forward recalibration.

mod error;

pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod panel;
pub mod trainer;
pub mod walk_forward;

pub use error::{LearnError, Result};
pub use model::{Architecture, Model, ModelSpec, OutputHead};
pub use objectives::{LossKind, Objective};
pub use trainer::{random_search, train_model, FitResult, HyperParams, SearchSpace, TrainConfig};
pub use walk_forward::{walk_forward, WalkForwardConfig, WalkForwardResult};
