//! Geometry, ground-truth heatmaps, synthetic binocular fisheye data and
//! pose metrics for egocentric 3D pose estimation.
//!
//! Everything in this crate is plain `f64`/`f32` arithmetic with no tensor
//! framework; the network side lives in `ego3dpose-nn`.

pub mod camera;
pub mod dataset;
pub mod egocap;
pub mod error;
pub mod geometry;
pub mod heatmap;
pub mod metrics;
pub mod render;
pub mod sampler;
pub mod skeleton;

pub use camera::{FisheyeCamera, FisheyeStereoRig, Projection, View};
pub use error::{Error, Result};
pub use geometry::{LimbAngle, LimbOrientation, LocalPose, Pose3D};
pub use heatmap::{Heatmap, HeatmapStack, LimbSegment2D};
pub use skeleton::{Limb, Skeleton};
pub use dataset::{Dataset, DatasetConfig, Sample, Split};
pub use metrics::EvalReport;
pub use sampler::PoseSampler;
