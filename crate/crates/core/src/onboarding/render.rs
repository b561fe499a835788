use nalgebra::Vector3;

use super::{ObjectModel, OnboardingError};
use crate::correspondence::Template;
use crate::geometry::{CameraIntrinsics, Pose, Rotation3};

pub const DEFAULT_SPLAT_RADIUS: f64 = 1.5;
/// Template camera distance as a multiple of the model diameter.
pub const DEFAULT_DISTANCE_FACTOR: f64 = 2.5;
pub const DEFAULT_TEMPLATE_SIZE: u32 = 280;

/// Square template camera whose focal length makes an object at
/// `DEFAULT_DISTANCE_FACTOR` diameters span half the image.
pub fn default_template_camera(size: u32) -> CameraIntrinsics {
    let half = size as f64 / 2.0;
    let f = half * DEFAULT_DISTANCE_FACTOR;
    CameraIntrinsics::new(f, f, half, half, size, size).expect("valid template camera")
}

/// Z-buffered point splat of the model under `pose`. Every point covers the
/// pixels whose centers lie within `splat_radius` of its projection; the
/// nearest depth wins, ties keep the earlier point.
pub fn render_template(
    model: &ObjectModel,
    pose: &Pose,
    cam: &CameraIntrinsics,
    splat_radius: f64,
) -> Result<Template, OnboardingError> {
    if !(splat_radius >= 0.0 && splat_radius.is_finite()) {
        return Err(OnboardingError::InvalidModel("splat radius must be finite and non-negative"));
    }
    let (w, h) = (cam.width as i64, cam.height as i64);
    let mut depth = vec![f64::INFINITY; cam.pixel_count()];
    let r2 = splat_radius * splat_radius;
    let mut any = false;
    for x in model.points() {
        let p: Vector3<f64> = pose.transform(x);
        let Ok(u) = cam.project(&p) else { continue };
        let x0 = ((u.x - splat_radius).ceil() as i64).max(0);
        let x1 = ((u.x + splat_radius).floor() as i64).min(w - 1);
        let y0 = ((u.y - splat_radius).ceil() as i64).max(0);
        let y1 = ((u.y + splat_radius).floor() as i64).min(h - 1);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let (dx, dy) = (px as f64 - u.x, py as f64 - u.y);
                if dx * dx + dy * dy > r2 {
                    continue;
                }
                let d = &mut depth[(py * w + px) as usize];
                if p.z < *d {
                    *d = p.z;
                    any = true;
                }
            }
        }
    }
    if !any {
        return Err(OnboardingError::EmptyRender);
    }
    for d in depth.iter_mut() {
        if !d.is_finite() {
            *d = 0.0;
        }
    }
    Ok(Template::new(*pose, *cam, depth)?)
}

/// Template of the model in `orientation`, centered on the optical axis at
/// `distance` mm.
pub fn render_depth_template(
    model: &ObjectModel,
    orientation: &Rotation3,
    cam: &CameraIntrinsics,
    distance: f64,
) -> Result<Template, OnboardingError> {
    if !(distance > model.diameter()) {
        return Err(OnboardingError::InvalidDistance(distance));
    }
    let pose = Pose::new(*orientation, Vector3::new(0.0, 0.0, distance));
    render_template(model, &pose, cam, DEFAULT_SPLAT_RADIUS)
}
