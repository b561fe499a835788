//! Pose error measures and sequence protocols.

mod kdtree;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{geodesic_deg, CameraIntrinsics, Pose};
use crate::onboarding::ObjectModel;
use kdtree::KdTree;

/// Threshold grid upper end for `auc`, mm.
pub const DEFAULT_AUC_MAX_MM: u32 = 100;
pub const RESET_TRANSLATION_MM: f64 = 50.0;
pub const RESET_ROTATION_DEG: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("{estimates} estimates for {ground_truth} ground-truth poses")]
    LengthMismatch { estimates: usize, ground_truth: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseError {
    pub add_mm: f64,
    pub adds_mm: f64,
    pub mssd_mm: f64,
    pub mspd_px: f64,
    pub rot_deg: f64,
    pub trans_mm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceReport {
    pub per_frame: Vec<PoseError>,
    pub auc_add: f64,
    pub auc_adds: f64,
    /// Percentage of frames within 5 cm and 5 degrees.
    pub cm_deg_rate: f64,
    pub resets: usize,
}

/// Mean distance between corresponding model points under both poses.
pub fn add_error(est: &Pose, gt: &Pose, model: &ObjectModel) -> f64 {
    let pts = model.points();
    let sum: f64 = pts.iter().map(|x| (est.transform(x) - gt.transform(x)).norm()).sum();
    sum / pts.len() as f64
}

/// Mean distance from each model point under `est` to the closest model
/// point under `gt`.
pub fn adds_error(est: &Pose, gt: &Pose, model: &ObjectModel) -> f64 {
    let pts = model.points();
    let tree = KdTree::new(pts.iter().map(|x| gt.transform(x)).collect());
    let sum: f64 = pts.iter().map(|x| tree.nearest_distance(&est.transform(x))).sum();
    sum / pts.len() as f64
}

/// Maximum symmetry-aware surface distance (mm) and projection distance
/// (px): over the model's symmetries `S`, the smallest worst-point distance
/// between `est` and `gt` composed with `S`. A symmetry for which some point
/// lies behind the camera in either pose scores infinite projection
/// distance.
pub fn mssd_mspd(est: &Pose, gt: &Pose, model: &ObjectModel, cam: &CameraIntrinsics) -> (f64, f64) {
    let pts = model.points();
    let est_pts: Vec<_> = pts.iter().map(|x| est.transform(x)).collect();
    let est_px: Option<Vec<_>> = est_pts.iter().map(|p| cam.project(p).ok()).collect();
    let mut mssd = f64::INFINITY;
    let mut mspd = f64::INFINITY;
    for s in model.symmetries() {
        let g = gt.compose(s);
        let mut surface: f64 = 0.0;
        let mut proj: f64 = 0.0;
        for (i, x) in pts.iter().enumerate() {
            let q = g.transform(x);
            surface = surface.max((est_pts[i] - q).norm());
            match (&est_px, cam.project(&q)) {
                (Some(e), Ok(u)) => proj = proj.max((e[i] - u).norm()),
                _ => proj = f64::INFINITY,
            }
        }
        mssd = mssd.min(surface);
        mspd = mspd.min(proj);
    }
    (mssd, mspd)
}

pub fn pose_error(est: &Pose, gt: &Pose, model: &ObjectModel, cam: &CameraIntrinsics) -> PoseError {
    let (mssd_mm, mspd_px) = mssd_mspd(est, gt, model, cam);
    let (rot_deg, trans_mm) = est.distance_to(gt);
    PoseError {
        add_mm: add_error(est, gt, model),
        adds_mm: adds_error(est, gt, model),
        mssd_mm,
        mspd_px,
        rot_deg,
        trans_mm,
    }
}

/// Recall averaged over the thresholds 1, 2, ..., `max_threshold_mm` mm, as
/// a percentage. An error counts at every threshold it does not exceed.
pub fn auc(errors: &[f64], max_threshold_mm: u32) -> Result<f64, MetricsError> {
    if errors.is_empty() || max_threshold_mm == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let mut hits = 0usize;
    for t in 1..=max_threshold_mm {
        hits += errors.iter().filter(|e| **e <= t as f64).count();
    }
    Ok(100.0 * hits as f64 / (errors.len() as f64 * max_threshold_mm as f64))
}

/// Whether a pose is within 5 cm and 5 degrees of the truth.
pub fn within_cm_deg(est: &Pose, gt: &Pose) -> bool {
    let (r, t) = (geodesic_deg(&est.rotation, &gt.rotation), (est.translation - gt.translation).norm());
    r < RESET_ROTATION_DEG && t < RESET_TRANSLATION_MM
}

/// Walks the frames in order. A frame outside 5 cm / 5 degrees counts one
/// reset and, when a next frame exists, calls `hook(next, gt[next], rest)`
/// where `rest` holds the estimates from `next` on; the hook may rewrite
/// them, e.g. by re-running a tracker initialized at the given pose. Errors
/// and rates are taken over the estimates as finally evaluated.
pub fn run_reset_protocol<H>(
    estimates: &[Pose],
    gts: &[Pose],
    model: &ObjectModel,
    cam: &CameraIntrinsics,
    mut hook: H,
) -> Result<SequenceReport, MetricsError>
where
    H: FnMut(usize, &Pose, &mut [Pose]),
{
    if estimates.len() != gts.len() {
        return Err(MetricsError::LengthMismatch {
            estimates: estimates.len(),
            ground_truth: gts.len(),
        });
    }
    if gts.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut est = estimates.to_vec();
    let mut resets = 0;
    let mut good = 0;
    for k in 0..est.len() {
        if within_cm_deg(&est[k], &gts[k]) {
            good += 1;
            continue;
        }
        resets += 1;
        if k + 1 < est.len() {
            hook(k + 1, &gts[k + 1], &mut est[k + 1..]);
        }
    }
    let per_frame: Vec<PoseError> = est
        .par_iter()
        .zip(gts.par_iter())
        .map(|(e, g)| pose_error(e, g, model, cam))
        .collect();
    let add: Vec<f64> = per_frame.iter().map(|e| e.add_mm).collect();
    let adds: Vec<f64> = per_frame.iter().map(|e| e.adds_mm).collect();
    Ok(SequenceReport {
        auc_add: auc(&add, DEFAULT_AUC_MAX_MM)?,
        auc_adds: auc(&adds, DEFAULT_AUC_MAX_MM)?,
        cm_deg_rate: 100.0 * good as f64 / est.len() as f64,
        resets,
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::geometry::Rotation3;

    fn cube_model() -> ObjectModel {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(Vector3::new(
                if i & 1 == 0 { -50.0 } else { 50.0 },
                if i & 2 == 0 { -50.0 } else { 50.0 },
                if i & 4 == 0 { -50.0 } else { 50.0 },
            ));
        }
        let sym = vec![Pose::new(Rotation3::rot_z_deg(90.0), Vector3::zeros())];
        ObjectModel::new(pts, sym).unwrap()
    }

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn gt() -> Pose {
        Pose::new(Rotation3::rot_x_deg(20.0), Vector3::new(0.0, 0.0, 600.0))
    }

    #[test]
    fn add_of_a_shift() {
        let m = cube_model();
        assert_eq!(add_error(&gt(), &gt(), &m), 0.0);
        let moved = Pose::new(gt().rotation, gt().translation + Vector3::new(10.0, 0.0, 0.0));
        assert!((add_error(&moved, &gt(), &m) - 10.0).abs() < 1e-12);
        assert!(adds_error(&moved, &gt(), &m) <= add_error(&moved, &gt(), &m));
    }

    #[test]
    fn symmetry_absorbs_its_rotation() {
        let m = cube_model();
        let est = gt().compose(&m.symmetries()[1]);
        let (s, p) = mssd_mspd(&est, &gt(), &m, &cam());
        assert!(s < 1e-9 && p < 1e-9, "{s} {p}");
        assert!(add_error(&est, &gt(), &m) > 10.0);
    }

    #[test]
    fn behind_camera_scores_infinite_projection() {
        let m = cube_model();
        let behind = Pose::new(gt().rotation, Vector3::new(0.0, 0.0, -600.0));
        let (s, p) = mssd_mspd(&behind, &gt(), &m, &cam());
        assert!(s.is_finite());
        assert_eq!(p, f64::INFINITY);
    }

    #[test]
    fn auc_grid() {
        assert_eq!(auc(&[0.0, 0.0], 100).unwrap(), 100.0);
        assert_eq!(auc(&[100.5, 300.0], 100).unwrap(), 0.0);
        assert_eq!(auc(&[50.0], 100).unwrap(), 51.0);
        assert_eq!(auc(&[], 100), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn reset_protocol_counts() {
        let m = cube_model();
        let gts = vec![gt(); 6];
        let perfect = run_reset_protocol(&gts, &gts, &m, &cam(), |_, _, _| {}).unwrap();
        assert_eq!((perfect.resets, perfect.cm_deg_rate), (0, 100.0));
        let off: Vec<Pose> = gts
            .iter()
            .map(|g| Pose::new(g.rotation, g.translation + Vector3::new(60.0, 0.0, 0.0)))
            .collect();
        let mut calls = Vec::new();
        let r = run_reset_protocol(&off, &gts, &m, &cam(), |k, _, _| calls.push(k)).unwrap();
        assert_eq!((r.resets, r.cm_deg_rate), (6, 0.0));
        assert_eq!(calls, vec![1, 2, 3, 4, 5]);
        assert!(matches!(
            run_reset_protocol(&off[..2], &gts, &m, &cam(), |_, _, _| {}),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }
}
