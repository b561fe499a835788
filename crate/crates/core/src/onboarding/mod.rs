//! Object onboarding: models, SO(3) viewpoint sampling, depth templates and
//! coarse retrieval.

mod model;
mod render;
mod sampling;
mod templates;

pub use model::{read_model, write_model, ObjectModel};
pub use render::{
    default_template_camera, render_depth_template, render_template, DEFAULT_DISTANCE_FACTOR, DEFAULT_SPLAT_RADIUS,
    DEFAULT_TEMPLATE_SIZE,
};
pub use sampling::{nearest_neighbor_angles, sample_so3};
pub use templates::{
    build_template_set, retrieve_coarse, OrientationOracle, OrientationQuery, TemplateRetriever, TemplateSet,
    DEFAULT_TEMPLATE_COUNT,
};

use thiserror::Error;

use crate::correspondence::io::GridIoError;
use crate::correspondence::CorrespondenceError;
use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum OnboardingError {
    #[error("model needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid model: {0}")]
    InvalidModel(&'static str),
    #[error("no model point projects into the template")]
    EmptyRender,
    #[error("render distance {0} mm must exceed the model diameter")]
    InvalidDistance(f64),
    #[error("template set is empty")]
    EmptyTemplateSet,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Grid(#[from] GridIoError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Correspondence(#[from] CorrespondenceError),
}
