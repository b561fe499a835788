//! Pose error measures and the reset protocol on a hand-made estimate
//! sequence with one planted failure window.

use flowpose::geometry::Pose;
use flowpose::metrics::{auc, pose_error, run_reset_protocol};
use flowpose::oracle::{generate_sequence, Keyframe, ModelKind, SceneSpec};
use nalgebra::Vector3;

fn main() {
    let seq = generate_sequence(&SceneSpec {
        model: ModelKind::Cube,
        points: 800,
        keyframes: vec![
            Keyframe::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 600.0)),
            Keyframe::new(Vector3::new(0.0, 45.0, 0.0), Vector3::new(50.0, 0.0, 650.0)),
        ],
        steps: vec![19],
        ..SceneSpec::default()
    })
    .unwrap();
    let gt = seq.gt_poses();
    let mut est: Vec<Pose> = gt.iter().map(|g| Pose::new(g.rotation, g.translation + Vector3::new(2.0, 0.0, 0.0))).collect();
    for e in &mut est[8..11] {
        e.translation.z += 70.0;
    }

    let e = pose_error(&est[9], &gt[9], &seq.model, &seq.camera);
    println!("frame 9: ADD {:.1} mm, ADD-S {:.1} mm, MSSD {:.1} mm, MSPD {:.1} px", e.add_mm, e.adds_mm, e.mssd_mm, e.mspd_px);

    // A re-initialized tracker would recover at once: repair the rest of the
    // planted window.
    let report = run_reset_protocol(&est, &gt, &seq.model, &seq.camera, |k, _, rest| {
        println!("reset before frame {k}");
        for (p, g) in rest.iter_mut().zip(&gt[k..]) {
            if (p.translation - g.translation).norm() < 50.0 {
                break;
            }
            *p = Pose::new(g.rotation, g.translation + Vector3::new(2.0, 0.0, 0.0));
        }
    })
    .unwrap();
    println!(
        "AUC ADD {:.1}, AUC ADD-S {:.1}, 5cm-5deg {:.1}%, resets {}",
        report.auc_add, report.auc_adds, report.cm_deg_rate, report.resets
    );
    println!("AUC of a single 50 mm error: {}", auc(&[50.0], 100).unwrap());
}
