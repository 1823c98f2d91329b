//! Implicit radiance field, volume rendering and training.

mod checkpoint;
mod encoding;
mod field;
mod grad;
mod render;
mod train;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoding::{encoded_len, positional_encode, EncodingConfig};
pub use field::{
    field_eval, Architecture, DenseLayer, FieldParameters, RadianceSample, SceneBounds,
};
pub use grad::loss_and_gradient;
pub use render::{
    composite, composite_weights, deltas, render_image, render_ray, render_ray_at, row_rays,
    CompositeWeights, ImageBuffer, RadianceField, RenderConfig, RenderedRay,
};
pub use train::{
    train, train_from, view_rays, Adam, AdamConfig, TrainConfig, TrainOutcome, TrainingView,
};

#[derive(Debug, Error)]
pub enum RadianceError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training needs at least 2 views, got {0}")]
    InsufficientViews(usize),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
