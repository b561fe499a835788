//! Pose fitting from weighted 2D-3D correspondences.

mod epnp;
mod lm;
mod ransac;

pub use epnp::{is_planar, solve_epnp, PLANAR_RATIO};
pub use lm::{refine_lm, refine_lm_with, reprojection_jacobian, reprojection_residual, weighted_cost, LmConfig, LmReport};
pub use ransac::{inliers_of, pose_quality, ransac_pnp, FitResult, RansacConfig};

use thiserror::Error;

use crate::correspondence::Corr2D3D;
use crate::geometry::{CameraIntrinsics, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("numerical failure: {0}")]
    NumericalFailure(&'static str),
    #[error("no consensus (best hypothesis had {best_inliers} inliers)")]
    NoConsensus { best_inliers: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Pixel distance between the projected model point and the observed pixel;
/// `+inf` when the point lies behind the camera.
pub fn reprojection_error(c: &Corr2D3D, pose: &Pose, cam: &CameraIntrinsics) -> f64 {
    match reprojection_residual(c, pose, cam) {
        Some(r) => r.norm(),
        None => f64::INFINITY,
    }
}
