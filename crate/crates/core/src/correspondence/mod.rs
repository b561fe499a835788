//! Weighted 2D-3D correspondences: construction from template flow and
//! visibility, frame-to-frame propagation and mixing.

mod grid;
pub mod io;

pub use grid::{FlowField, VisibilityMap};

use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, Pose};

/// Default visibility threshold.
pub const DEFAULT_TAU_V: f64 = 0.3;
/// Default cap on the number of correspondences kept per set.
pub const DEFAULT_MAX_CORRESPONDENCES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrespondenceError {
    #[error("grid dimensions mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("value {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("visibility threshold {0} outside [0, 1)")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Rendered depth template of the object under a known pose. Depth is in
/// millimeters with 0 marking background; the silhouette mask is exactly the
/// set of pixels with positive depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub pose: Pose,
    pub camera: CameraIntrinsics,
    depth: Vec<f64>,
}

impl Template {
    pub fn new(pose: Pose, camera: CameraIntrinsics, mut depth: Vec<f64>) -> Result<Self, CorrespondenceError> {
        if depth.len() != camera.pixel_count() {
            return Err(CorrespondenceError::DimensionMismatch {
                expected: (camera.width, camera.height),
                found: (depth.len() as u32, 1),
            });
        }
        for d in depth.iter_mut() {
            if !d.is_finite() || *d < 0.0 {
                *d = 0.0;
            }
        }
        Ok(Self { pose, camera, depth })
    }

    pub fn width(&self) -> u32 {
        self.camera.width
    }

    pub fn height(&self) -> u32 {
        self.camera.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        self.depth[y as usize * self.camera.width as usize + x as usize]
    }

    pub fn in_mask(&self, x: u32, y: u32) -> bool {
        self.depth_at(x, y) > 0.0
    }

    pub fn mask_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }

    /// Model-frame point seen at template pixel `(x, y)`, if on the mask.
    pub fn lift(&self, x: u32, y: u32) -> Option<Vector3<f64>> {
        let d = self.depth_at(x, y);
        if d <= 0.0 {
            return None;
        }
        let p = self.camera.backproject(&Vector2::new(x as f64, y as f64), d).ok()?;
        Some(self.pose.inverse().transform(&p))
    }
}

/// Weighted link between a crop pixel and a model point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corr2D3D {
    pub pixel: Vector2<f64>,
    pub point: Vector3<f64>,
    pub weight: f64,
}

impl Corr2D3D {
    pub fn new(pixel: Vector2<f64>, point: Vector3<f64>, weight: f64) -> Self {
        Self { pixel, point, weight }
    }
}

/// Correspondences built from one template plus bookkeeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BuiltCorrespondences {
    pub correspondences: Vec<Corr2D3D>,
    /// Links whose flowed pixel left the crop.
    pub dropped_outside: usize,
}

fn check_dims(expected: (u32, u32), found: (u32, u32)) -> Result<(), CorrespondenceError> {
    if expected != found {
        return Err(CorrespondenceError::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn crop_contains(dims: (u32, u32), u: &Vector2<f64>) -> bool {
    u.x >= -0.5 && u.y >= -0.5 && u.x < dims.0 as f64 - 0.5 && u.y < dims.1 as f64 - 0.5
}

/// Links every mask pixel whose visibility reaches `tau_v` to its flowed crop
/// pixel and lifts it to the model frame through the template depth. The
/// crop is assumed to share the template resolution.
pub fn build_correspondences(
    flow: &FlowField,
    vis: &VisibilityMap,
    tpl: &Template,
    tau_v: f64,
) -> Result<BuiltCorrespondences, CorrespondenceError> {
    if !(0.0..1.0).contains(&tau_v) {
        return Err(CorrespondenceError::InvalidThreshold(tau_v));
    }
    let dims = (tpl.width(), tpl.height());
    check_dims(dims, flow.dims())?;
    check_dims(dims, vis.dims())?;

    let mut out = BuiltCorrespondences::default();
    let inv = tpl.pose.inverse();
    for y in 0..dims.1 {
        for x in 0..dims.0 {
            let d = tpl.depth_at(x, y);
            if d <= 0.0 {
                continue;
            }
            let w = vis.get(x, y);
            if w < tau_v || w <= 0.0 {
                continue;
            }
            let Some(f) = flow.get(x, y) else { continue };
            let u_t = Vector2::new(x as f64, y as f64);
            let pixel = u_t + f;
            if !crop_contains(dims, &pixel) {
                out.dropped_outside += 1;
                continue;
            }
            let p = tpl.camera.backproject(&u_t, d)?;
            out.correspondences.push(Corr2D3D::new(pixel, inv.transform(&p), w));
        }
    }
    Ok(out)
}

/// Keeps at most `cap` correspondences, chosen uniformly without replacement.
/// Survivors keep their relative order.
pub fn subsample<R: Rng + ?Sized>(corrs: Vec<Corr2D3D>, cap: usize, rng: &mut R) -> Vec<Corr2D3D> {
    if corrs.len() <= cap {
        return corrs;
    }
    let mut idx = sample(rng, corrs.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| corrs[i]).collect()
}

/// Moves each correspondence along the bilinearly interpolated frame flow.
/// Returns the survivors and the number dropped (invalid flow neighbourhood
/// or landing outside the crop). Points and weights are untouched.
pub fn propagate(inliers: &[Corr2D3D], frame_flow: &FlowField) -> (Vec<Corr2D3D>, usize) {
    let dims = frame_flow.dims();
    let mut out = Vec::with_capacity(inliers.len());
    for c in inliers {
        let Some(f) = frame_flow.sample_bilinear(&c.pixel) else { continue };
        let pixel = c.pixel + f;
        if crop_contains(dims, &pixel) {
            out.push(Corr2D3D { pixel, ..*c });
        }
    }
    let dropped = inliers.len() - out.len();
    (out, dropped)
}

/// All of `propagated` followed by a uniform random subset of `fresh` of size
/// `min(|fresh|, floor(r * |propagated|))`.
pub fn mix<R: Rng + ?Sized>(propagated: &[Corr2D3D], fresh: &[Corr2D3D], r: f64, rng: &mut R) -> Vec<Corr2D3D> {
    let r = if r.is_finite() { r.max(0.0) } else { 0.0 };
    let quota = ((r * propagated.len() as f64).floor() as usize).min(fresh.len());
    let mut out = Vec::with_capacity(propagated.len() + quota);
    out.extend_from_slice(propagated);
    if quota > 0 {
        for i in sample(rng, fresh.len(), quota).into_iter() {
            out.push(fresh[i]);
        }
    }
    out
}
