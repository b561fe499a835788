//! Renders a template near the true pose, asks the synthetic oracle for
//! model-to-frame flow and visibility, and fits a pose to the resulting
//! weighted 2D-3D correspondences.

use flowpose::correspondence::build_correspondences;
use flowpose::geometry::{make_crop_camera, projected_bbox, Pose, Rotation3};
use flowpose::onboarding::{render_template, DEFAULT_SPLAT_RADIUS};
use flowpose::oracle::{generate_sequence, oracle_m2f_flow, NoiseSpec, SceneSpec};
use flowpose::pnp::{ransac_pnp, RansacConfig};
use nalgebra::Vector3;

fn main() {
    let seq = generate_sequence(&SceneSpec {
        points: 2000,
        ..SceneSpec::default()
    })
    .unwrap();
    let frame = &seq.frames[0];
    let gt = frame.gt_pose;
    let guess = Pose::new(
        Rotation3::exp(&Vector3::new(0.0, 0.1, 0.05)) * gt.rotation,
        gt.translation + Vector3::new(8.0, -5.0, 20.0),
    );
    println!("initial error: {:?}", guess.distance_to(&gt));

    let bbox = projected_bbox(seq.model.points(), &guess, &seq.camera).unwrap();
    let crop = make_crop_camera(&bbox, &seq.camera, 280, 1.2).unwrap();
    let tpl = render_template(&seq.model, &crop.pose_to_crop(&guess), &crop.intrinsics, DEFAULT_SPLAT_RADIUS).unwrap();

    let noise = NoiseSpec {
        sigma_px: 0.5,
        outlier_fraction: 0.2,
        ..NoiseSpec::default()
    };
    let (flow, vis) = oracle_m2f_flow(&seq, &tpl, 0, &crop, &noise, 11).unwrap();
    let built = build_correspondences(&flow, &vis, &tpl, 0.3).unwrap();
    println!("{} template pixels, {} correspondences", tpl.mask_count(), built.correspondences.len());

    let fit = ransac_pnp(&built.correspondences, &crop.intrinsics, &RansacConfig::default()).unwrap();
    let pose = crop.pose_from_crop(&fit.pose);
    let (rot, trans) = pose.distance_to(&gt);
    println!("quality {:.3}, {} inliers, rms {:.3} px", fit.quality, fit.inliers.len(), fit.rms_reproj_px);
    println!("fitted error: {rot:.4} deg, {trans:.3} mm");
}
