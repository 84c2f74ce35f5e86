//! Joint continuous and discrete variational autoencoder.

pub mod autodiff;
pub mod data;
pub mod distributions;
pub mod error;
pub mod eval;
pub mod model;
pub mod objective;
pub mod train;
pub mod util;

pub use data::Dataset;
pub use distributions::{ConcreteParams, GaussianParams};
pub use error::{Error, Result};
pub use model::{Checkpoint, LatentSpec, Model, ModelConfig, PosteriorParams, TrainingState};
pub use objective::{CapacitySchedule, LossReport, ObjectiveMode};
pub use train::{preset, ObjectiveKind, Preset, TrainConfig, TrainLog};
