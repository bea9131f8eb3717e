//! Networks, losses, training and evaluation for stereo egocentric pose.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod layers;
pub mod losses;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{LossWeights, ModelConfig, RunConfig, TrainConfig, Variant};
pub use error::{Error, Result};
pub use eval::{AblationTable, Evaluation};
pub use model::NetBundle;
pub use train::{HeatmapCache, StepRecord, TrainTrace};
