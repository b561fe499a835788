use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{derive_seed, ModelKind, OccluderShape, OracleError, SceneSpec, Surface};
use crate::geometry::{make_crop_camera, projected_bbox, CameraIntrinsics, CropCamera, Pose, Rotation3};
use crate::onboarding::ObjectModel;

/// Depth tolerance of the visibility test, mm.
pub const VISIBILITY_TOLERANCE_MM: f64 = 2.0;

const MODEL_STREAM: u64 = 0x6d6f64656c;

/// Ground truth for one frame: the pose, the crop centered on the true
/// projection, and a depth buffer of the object over its image bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleFrame {
    pub index: usize,
    pub gt_pose: Pose,
    pub crop: CropCamera,
    occluder: Option<OccluderShape>,
    x0: u32,
    y0: u32,
    w: u32,
    h: u32,
    /// Camera-frame depth of the first surface hit, 0 where the ray misses.
    depth: Vec<f64>,
}

impl OracleFrame {
    /// Object depth at source pixel `(x, y)`, 0 off the object. Occluders
    /// are not part of the buffer.
    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        if x < self.x0 || y < self.y0 || x >= self.x0 + self.w || y >= self.y0 + self.h {
            return 0.0;
        }
        self.depth[((y - self.y0) * self.w + (x - self.x0)) as usize]
    }

    pub fn occluder(&self) -> Option<&OccluderShape> {
        self.occluder.as_ref()
    }

    pub fn occluded(&self, u: &Vector2<f64>) -> bool {
        self.occluder.as_ref().is_some_and(|o| o.covers(u))
    }

    /// Depth-buffer test for a camera-frame point: it must project onto the
    /// image, avoid the occluder and lie within `VISIBILITY_TOLERANCE_MM` of
    /// the buffered depth, read at the nearest pixel or interpolated between
    /// the four surrounding ones when all of them see the object. Limited by
    /// the source resolution; `OracleSequence::is_visible` is exact.
    pub fn buffer_visible(&self, p: &Vector3<f64>, cam: &CameraIntrinsics) -> bool {
        let Ok(u) = cam.project(p) else { return false };
        let Some(idx) = cam.pixel_index(&u) else { return false };
        if self.occluded(&u) {
            return false;
        }
        let near = |d: f64| d > 0.0 && (p.z - d).abs() <= VISIBILITY_TOLERANCE_MM;
        let (x, y) = ((idx % cam.width as usize) as u32, (idx / cam.width as usize) as u32);
        if near(self.depth_at(x, y)) {
            return true;
        }
        let (fx, fy) = (u.x.floor(), u.y.floor());
        if fx < 0.0 || fy < 0.0 {
            return false;
        }
        let (x0, y0) = (fx as u32, fy as u32);
        let d = [self.depth_at(x0, y0), self.depth_at(x0 + 1, y0), self.depth_at(x0, y0 + 1), self.depth_at(x0 + 1, y0 + 1)];
        if d.iter().any(|v| *v <= 0.0) {
            return false;
        }
        let (ax, ay) = (u.x - fx, u.y - fy);
        let top = d[0] * (1.0 - ax) + d[1] * ax;
        let bottom = d[2] * (1.0 - ax) + d[3] * ax;
        near(top * (1.0 - ay) + bottom * ay)
    }

    /// Source pixels where the object is seen, after occlusion.
    pub fn visible_pixel_count(&self) -> usize {
        let mut n = 0;
        for y in 0..self.h {
            for x in 0..self.w {
                let d = self.depth[(y * self.w + x) as usize];
                let u = Vector2::new((self.x0 + x) as f64, (self.y0 + y) as f64);
                if d > 0.0 && !self.occluded(&u) {
                    n += 1;
                }
            }
        }
        n
    }

    /// Source pixels covered by the object, ignoring the occluder.
    pub fn object_pixel_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }
}

/// A generated sequence: the model, its analytic surface, the source
/// camera and one ground-truth frame per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSequence {
    pub spec: SceneSpec,
    pub model: ObjectModel,
    pub surface: Surface,
    pub camera: CameraIntrinsics,
    pub frames: Vec<OracleFrame>,
}

impl OracleSequence {
    pub fn frame(&self, i: usize) -> Result<&OracleFrame, OracleError> {
        self.frames.get(i).ok_or(OracleError::FrameOutOfRange(i))
    }

    pub fn gt_poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.gt_pose).collect()
    }

    /// Visibility of camera-frame point `p` in `frame`: it projects onto the
    /// image outside the occluder, and the first surface hit along its ray
    /// lies within `VISIBILITY_TOLERANCE_MM` of it in depth.
    pub fn is_visible(&self, frame: &OracleFrame, p: &Vector3<f64>) -> bool {
        let Ok(u) = self.camera.project(p) else { return false };
        if !self.camera.contains(&u) || frame.occluded(&u) {
            return false;
        }
        self.cast(frame, &(p / p.z))
            .is_some_and(|(_, hit)| (p.z - hit.z).abs() <= VISIBILITY_TOLERANCE_MM)
    }

    /// First surface hit along camera ray `ray` in `frame`, as model-frame and
    /// camera-frame points.
    pub fn cast(&self, frame: &OracleFrame, ray: &Vector3<f64>) -> Option<(Vector3<f64>, Vector3<f64>)> {
        cast_ray(&self.surface, &frame.gt_pose, ray)
    }
}

/// First hit of camera ray `ray` (camera frame) with the surface under
/// `pose`; returns the model-frame and camera-frame points.
pub(crate) fn cast_ray(surface: &Surface, pose: &Pose, ray: &Vector3<f64>) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let inv = pose.inverse();
    let origin = inv.translation;
    let dir = inv.rotation.apply(ray);
    let t = surface.intersect(&origin, &dir)?;
    Some((origin + dir * t, ray * t))
}

/// Pose at each frame: slerp between keyframe rotations, lerp between
/// translations. Frame count is `sum(steps) + 1`.
pub fn interpolate_trajectory(spec: &SceneSpec) -> Vec<Pose> {
    let keys: Vec<Pose> = spec.keyframes.iter().map(|k| k.pose()).collect();
    let mut out = Vec::with_capacity(spec.frame_count());
    for (k, &n) in spec.steps.iter().enumerate() {
        let (a, b) = (&keys[k], &keys[k + 1]);
        let w = (a.rotation.inverse() * b.rotation).log();
        for j in 0..n {
            let s = j as f64 / n as f64;
            let rotation = a.rotation * Rotation3::exp(&(w * s));
            let translation = a.translation * (1.0 - s) + b.translation * s;
            out.push(Pose::new(rotation, translation));
        }
    }
    out.push(*keys.last().expect("validated spec has a keyframe"));
    out
}

/// Builds the object model for a spec: surface samples plus the shape's
/// symmetries.
pub fn build_model(spec: &SceneSpec) -> Result<(ObjectModel, Surface), OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, MODEL_STREAM]));
    let surface = match spec.model {
        ModelKind::Cube => Surface::Cube { half: spec.size_mm / 2.0 },
        ModelKind::Cylinder => Surface::Cylinder {
            radius: spec.size_mm / 2.0,
            half_height: spec.height_mm / 2.0,
        },
        ModelKind::Blob => Surface::random_blob(spec.size_mm, &mut rng),
    };
    let points = surface.sample(spec.points, &mut rng);
    let model = ObjectModel::new(points, surface.symmetries())?;
    Ok((model, surface))
}

fn render_frame(spec: &SceneSpec, model: &ObjectModel, surface: &Surface, index: usize, pose: Pose) -> Result<OracleFrame, OracleError> {
    let cam = &spec.camera;
    let (lo, hi) = model.bounds();
    let corners: Vec<Vector3<f64>> = (0..8)
        .map(|i| {
            Vector3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
        .collect();
    let all_in_front = corners.iter().all(|c| pose.transform(c).z > 0.0);
    let (mut x0, mut y0, mut x1, mut y1) = (0i64, 0i64, cam.width as i64 - 1, cam.height as i64 - 1);
    if all_in_front {
        if let Some(b) = projected_bbox(corners.iter(), &pose, cam) {
            x0 = x0.max(b.min.x.floor() as i64 - 1);
            y0 = y0.max(b.min.y.floor() as i64 - 1);
            x1 = x1.min(b.max.x.ceil() as i64 + 1);
            y1 = y1.min(b.max.y.ceil() as i64 + 1);
        }
    }
    let (w, h) = if x1 >= x0 && y1 >= y0 { ((x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32) } else { (0, 0) };
    let mut depth = vec![0.0; w as usize * h as usize];
    for y in 0..h {
        for x in 0..w {
            let u = Vector2::new((x0 + x as i64) as f64, (y0 + y as i64) as f64);
            if let Some((_, p)) = cast_ray(surface, &pose, &cam.ray(&u)) {
                depth[(y * w + x) as usize] = p.z;
            }
        }
    }
    let bbox = projected_bbox(model.points().iter(), &pose, cam).ok_or(OracleError::ObjectNotVisible(index))?;
    let crop = make_crop_camera(&bbox, cam, spec.crop_size, spec.crop_pad)?;
    Ok(OracleFrame {
        index,
        gt_pose: pose,
        crop,
        occluder: spec.occluder.and_then(|o| o.at(index)),
        x0: x0.max(0) as u32,
        y0: y0.max(0) as u32,
        w,
        h,
        depth,
    })
}

/// Generates the model and all frames of a spec. Frames are rendered in
/// parallel; the result depends only on the spec.
pub fn generate_sequence(spec: &SceneSpec) -> Result<OracleSequence, OracleError> {
    spec.validate()?;
    let (model, surface) = build_model(spec)?;
    let poses = interpolate_trajectory(spec);
    let frames = poses
        .par_iter()
        .enumerate()
        .map(|(i, p)| render_frame(spec, &model, &surface, i, *p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OracleSequence {
        spec: spec.clone(),
        model,
        surface,
        camera: spec.camera,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::geodesic_deg;
    use crate::oracle::Keyframe;

    fn spec_with(keys: Vec<Keyframe>, steps: Vec<usize>) -> SceneSpec {
        SceneSpec {
            points: 500,
            keyframes: keys,
            steps,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn identical_keyframes_give_constant_poses() {
        let k = Keyframe::new(Vector3::new(10.0, 20.0, 30.0), Vector3::new(5.0, -5.0, 600.0));
        let spec = spec_with(vec![k, k], vec![9]);
        let poses = interpolate_trajectory(&spec);
        assert_eq!(poses.len(), 10);
        for p in &poses {
            let (r, t) = p.distance_to(&poses[0]);
            assert!(r < 1e-9 && t < 1e-9);
        }
    }

    #[test]
    fn slerp_is_linear_about_one_axis() {
        let a = Keyframe::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 600.0));
        let b = Keyframe::new(Vector3::new(0.0, 90.0, 0.0), Vector3::new(0.0, 0.0, 600.0));
        let poses = interpolate_trajectory(&spec_with(vec![a, b], vec![9]));
        for (k, p) in poses.iter().enumerate() {
            let want = Rotation3::rot_y_deg(10.0 * k as f64);
            assert!(geodesic_deg(&p.rotation, &want) < 1e-9, "frame {k}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = Keyframe::new(Vector3::new(5.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 600.0));
        let b = Keyframe::new(Vector3::new(5.0, 30.0, 0.0), Vector3::new(20.0, 0.0, 650.0));
        let mut spec = spec_with(vec![a, b], vec![4]);
        spec.model = ModelKind::Blob;
        spec.seed = 17;
        let s1 = generate_sequence(&spec).unwrap();
        let s2 = generate_sequence(&spec).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.frames.len(), 5);
    }

    #[test]
    fn zbuffer_matches_model_points_on_front_faces() {
        let spec = spec_with(vec![Keyframe::new(Vector3::new(20.0, 30.0, 0.0), Vector3::new(0.0, 0.0, 600.0))], vec![]);
        let seq = generate_sequence(&spec).unwrap();
        let f = &seq.frames[0];
        assert!(f.object_pixel_count() > 1000);
        let cam = &seq.camera;
        let visible = seq
            .model
            .points()
            .iter()
            .filter(|x| seq.is_visible(f, &f.gt_pose.transform(x)))
            .count();
        // The raster buffer agrees with the exact test on nearly every point.
        let agree = seq
            .model
            .points()
            .iter()
            .filter(|x| {
                let p = f.gt_pose.transform(x);
                seq.is_visible(f, &p) == f.buffer_visible(&p, cam)
            })
            .count();
        assert!(agree as f64 > 0.97 * seq.model.points().len() as f64, "{agree}");
        // A convex cube shows roughly half its surface.
        let frac = visible as f64 / seq.model.points().len() as f64;
        assert!((0.3..0.7).contains(&frac), "{frac}");
    }
}
