use nalgebra::{Matrix3, Vector2, Vector3};

use super::{CameraIntrinsics, GeometryError, Pose, Rotation3};

/// Default padding factor applied around the 2D box when building a crop.
pub const DEFAULT_CROP_PAD: f64 = 1.2;
/// Default crop (and template) resolution.
pub const DEFAULT_CROP_SIZE: u32 = 280;

/// Axis-aligned 2D box in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox2 {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl BBox2 {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            min: Vector2::new(x_min, y_min),
            max: Vector2::new(x_max, y_max),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector2<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Self {
            min: *first,
            max: *first,
        };
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn center(&self) -> Vector2<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn corners(&self) -> [Vector2<f64>; 4] {
        [
            self.min,
            Vector2::new(self.max.x, self.min.y),
            self.max,
            Vector2::new(self.min.x, self.max.y),
        ]
    }
}

/// Virtual pinhole camera looking through the center of a 2D box in the
/// source image. Shares its optical center with the source camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropCamera {
    pub intrinsics: CameraIntrinsics,
    /// Maps crop-camera rays to source-camera rays.
    pub rotation_to_source: Rotation3,
    /// Source intrinsics the crop was cut from.
    pub source: CameraIntrinsics,
}

impl CropCamera {
    /// Crop-camera pixel of a source pixel, if the ray points forward.
    pub fn source_to_crop(&self, u_src: &Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
        let ray_c = self.rotation_to_source.inverse().apply(&self.source.ray(u_src));
        self.intrinsics.project(&ray_c)
    }

    pub fn crop_to_source(&self, u_crop: &Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
        let ray_s = self.rotation_to_source.apply(&self.intrinsics.ray(u_crop));
        self.source.project(&ray_s)
    }

    /// Source-camera ray (unnormalized) through crop pixel `u`.
    pub fn source_ray(&self, u_crop: &Vector2<f64>) -> Vector3<f64> {
        self.rotation_to_source.apply(&self.intrinsics.ray(u_crop))
    }

    /// Expresses a model-to-source pose in the crop camera frame.
    pub fn pose_to_crop(&self, pose_in_source: &Pose) -> Pose {
        Pose::new(self.rotation_to_source.inverse(), Vector3::zeros()).compose(pose_in_source)
    }

    pub fn pose_from_crop(&self, pose_in_crop: &Pose) -> Pose {
        Pose::new(self.rotation_to_source, Vector3::zeros()).compose(pose_in_crop)
    }
}

/// Builds the crop camera whose optical axis passes through the box center.
/// The focal length is isotropic and chosen so the box, grown by `pad`, just
/// fits the `crop_size x crop_size` image. The principal point sits at
/// `(crop_size / 2, crop_size / 2)`.
pub fn make_crop_camera(
    bbox: &BBox2,
    source: &CameraIntrinsics,
    crop_size: u32,
    pad: f64,
) -> Result<CropCamera, GeometryError> {
    if crop_size < 2 {
        return Err(GeometryError::InvalidCropSize(crop_size));
    }
    let finite = bbox.min.iter().chain(bbox.max.iter()).all(|v| v.is_finite());
    if !finite || !(bbox.width() > 0.0) || !(bbox.height() > 0.0) {
        return Err(GeometryError::DegenerateBox);
    }
    if !(pad > 0.0 && pad.is_finite()) {
        return Err(GeometryError::InvalidIntrinsics("crop padding must be positive"));
    }

    let z = source.ray(&bbox.center()).normalize();
    // x axis orthogonal to the optical axis, as close as possible to the
    // source x axis; identity for a centered box.
    let x = Vector3::y().cross(&z).normalize();
    let y = z.cross(&x);
    let rotation_to_source = Rotation3::from_matrix_orthonormalized(Matrix3::from_columns(&[x, y, z]))?;

    let to_crop = rotation_to_source.inverse();
    let mut extent: f64 = 0.0;
    for c in bbox.corners() {
        let r = to_crop.apply(&source.ray(&c));
        if !(r.z > 0.0) {
            return Err(GeometryError::DegenerateBox);
        }
        extent = extent.max((r.x / r.z).abs()).max((r.y / r.z).abs());
    }
    let half = crop_size as f64 / 2.0;
    let f = half / (pad * extent);
    let intrinsics = CameraIntrinsics::new(f, f, half, half, crop_size, crop_size)?;
    Ok(CropCamera {
        intrinsics,
        rotation_to_source,
        source: *source,
    })
}
