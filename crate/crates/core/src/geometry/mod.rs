//! Rigid transforms, the pinhole camera model and perspective crops.
//!
//! Conventions: poses map model coordinates (mm) to camera coordinates (mm);
//! pixel `(0, 0)` is the center of the top-left pixel.

mod camera;
mod crop;
mod pose;
mod rotation;

pub use camera::{backproject, project, CameraIntrinsics};
pub use crop::{make_crop_camera, BBox2, CropCamera, DEFAULT_CROP_PAD, DEFAULT_CROP_SIZE};
pub use pose::{compose, inverse, Pose};
pub use rotation::{geodesic_deg, skew, Rotation3, ROTATION_TOLERANCE};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth ({0})")]
    NonPositiveDepth(f64),
    #[error("bounding box has zero area")]
    DegenerateBox,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("crop size must be at least 2 px, got {0}")]
    InvalidCropSize(u32),
    #[error("matrix is not a proper rotation")]
    NotARotation,
}

/// Projects every point and returns the bounding box of the projections that
/// land in front of the camera.
pub fn projected_bbox<'a>(
    points: impl IntoIterator<Item = &'a nalgebra::Vector3<f64>>,
    pose: &Pose,
    cam: &CameraIntrinsics,
) -> Option<BBox2> {
    let pixels: Vec<_> = points.into_iter().filter_map(|x| project(x, pose, cam).ok()).collect();
    BBox2::from_points(pixels.iter())
}
