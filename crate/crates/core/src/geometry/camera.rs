use nalgebra::{Vector2, Vector3};

use super::{GeometryError, Pose};

/// Pinhole intrinsics. Pixel `(0, 0)` is the center of the top-left pixel, so
/// the image covers `[-0.5, width - 0.5] x [-0.5, height - 0.5]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("principal point must be finite"));
        }
        if width < 1 || height < 1 {
            return Err(GeometryError::InvalidIntrinsics("image must be at least 1x1"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Projects a camera-frame point.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if !(p.z > 0.0) {
            return Err(GeometryError::NonPositiveDepth(p.z));
        }
        Ok(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Camera-frame point at depth `depth` (mm) along the ray through `u`.
    pub fn backproject(&self, u: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>, GeometryError> {
        if !(depth > 0.0) {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
        Ok(self.ray(u) * depth)
    }

    /// Ray through pixel `u` scaled to unit depth.
    pub fn ray(&self, u: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((u.x - self.cx) / self.fx, (u.y - self.cy) / self.fy, 1.0)
    }

    /// Whether `u` falls on the image, using the pixel-center convention.
    pub fn contains(&self, u: &Vector2<f64>) -> bool {
        u.x >= -0.5 && u.y >= -0.5 && u.x < self.width as f64 - 0.5 && u.y < self.height as f64 - 0.5
    }

    /// Row-major index of the pixel containing `u`, if on the image.
    pub fn pixel_index(&self, u: &Vector2<f64>) -> Option<usize> {
        if !self.contains(u) {
            return None;
        }
        let x = (u.x + 0.5).floor() as usize;
        let y = (u.y + 0.5).floor() as usize;
        Some(y * self.width as usize + x)
    }
}

/// Projects model point `x` through `pose` onto the image of `cam`.
pub fn project(x: &Vector3<f64>, pose: &Pose, cam: &CameraIntrinsics) -> Result<Vector2<f64>, GeometryError> {
    cam.project(&pose.transform(x))
}

pub fn backproject(u: &Vector2<f64>, depth: f64, cam: &CameraIntrinsics) -> Result<Vector3<f64>, GeometryError> {
    cam.backproject(u, depth)
}
