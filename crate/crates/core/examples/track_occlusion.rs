//! Keyframe tracking through a window where a half-plane hides half of the
//! object. Propagated correspondences fall behind the occluder, the inlier
//! ratio drops and model-to-frame registration takes over.

use flowpose::geometry::geodesic_deg;
use flowpose::oracle::{generate_sequence, Keyframe, NoiseSpec, OccludedFlow, OccluderShape, OccluderSpec, OracleF2f, OracleM2f, SceneSpec};
use flowpose::tracking::{track_sequence, TrackerConfig};
use nalgebra::{Vector2, Vector3};

fn main() {
    let spec = SceneSpec {
        points: 1500,
        keyframes: vec![
            Keyframe::new(Vector3::new(20.0, -30.0, 0.0), Vector3::new(0.0, 0.0, 600.0)),
            Keyframe::new(Vector3::new(20.0, 10.0, 0.0), Vector3::new(0.0, 0.0, 600.0)),
        ],
        steps: vec![79],
        occluder: Some(OccluderSpec {
            shape: OccluderShape::HalfPlane {
                normal: Vector2::new(1.0, 0.0),
                offset: 319.5,
            },
            velocity: Vector2::zeros(),
            start: 25,
            end: 55,
        }),
        ..SceneSpec::default()
    };
    let seq = generate_sequence(&spec).unwrap();
    let noise = NoiseSpec {
        sigma_px: 0.2,
        occluded_flow: OccludedFlow::Drop,
        ..NoiseSpec::default()
    };
    let m2f = OracleM2f { sequence: &seq, noise, seed: 1 };
    let f2f = OracleF2f { sequence: &seq, noise, seed: 2 };
    let gt = seq.gt_poses();
    let result = track_sequence(&seq.model, m2f, f2f, seq.camera, &gt[0], gt.len(), &TrackerConfig::default()).unwrap();

    for d in &result.decisions {
        let err = geodesic_deg(&d.pose.rotation, &gt[d.frame_index].rotation);
        let mark = if d.used_model_registration { "registered" } else { "" };
        println!("frame {:3}  B/C {:.3}  rot err {:.3} deg  {mark}", d.frame_index, d.inlier_ratio_bc, err);
    }
    let registrations = result.decisions.iter().skip(1).filter(|d| d.used_model_registration).count();
    println!("{registrations} registrations after frame 0");
}
