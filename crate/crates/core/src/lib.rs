//! Binarized hash-grid radiance fields.
//!
//! A field stores its features as ±1 values in a multi-resolution hash grid
//! (3D levels plus three axis-aligned 2D plane stacks), decodes them with two
//! small MLPs and is rendered by fixed-step volume rendering. Training keeps a
//! real-valued latent per grid entry and uses a straight-through estimator;
//! only the signs are stored in a snapshot.

pub mod binarize;
pub mod data;
pub mod error;
pub mod field;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod render;
pub mod sampler;
pub mod scene;
pub mod snapshot;
pub mod train;

pub use binarize::{BinaryTensor, PackedBits};
pub use data::{Dataset, OracleRig, OracleScene, Split};
pub use error::{Error, FormatError, Result};
pub use field::{FieldConfig, FieldModel, RadianceField};
pub use grid::{GridConfig, GridLevelConfig, HybridGrid, LevelStack};
pub use metrics::{ImageMetrics, MetricReport};
pub use nn::{AdamConfig, LrSchedule, MlpSpec};
pub use raster::Image;
pub use render::{Camera, RenderOptions, SceneTransform};
pub use sampler::{MarchParams, OccupancyConfig, OccupancyGrid, Ray};
pub use scene::{RenderSettings, SceneModel};
pub use snapshot::{SizeReport, SnapshotInfo, WeightPrecision};
pub use train::{LogRecord, LossBreakdown, TrainConfig, TrainOutcome, Trainer};
