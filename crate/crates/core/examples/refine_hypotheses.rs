//! Iterative refinement of several coarse hypotheses against oracle flow,
//! ranked by pose quality without any scoring network.

use flowpose::geometry::{Pose, Rotation3};
use flowpose::metrics::add_error;
use flowpose::oracle::{generate_sequence, NoiseSpec, OracleM2f, SceneSpec};
use flowpose::refine::{select_best, RefineConfig, Refiner};
use nalgebra::Vector3;

fn main() {
    let seq = generate_sequence(&SceneSpec {
        points: 1500,
        ..SceneSpec::default()
    })
    .unwrap();
    let gt = seq.frames[0].gt_pose;
    let provider = OracleM2f {
        sequence: &seq,
        noise: NoiseSpec {
            sigma_px: 0.5,
            sigma_per_deg: 0.1,
            outlier_fraction: 0.1,
            ..NoiseSpec::default()
        },
        seed: 1,
    };
    let refiner = Refiner::new(&seq.model, provider, RefineConfig::default());

    // Rotation offsets about the object center, radians, and depth offsets, mm.
    let offsets = [(0.05, 10.0), (0.15, -30.0), (0.25, 40.0), (0.5, 60.0), (1.2, -80.0)];
    let hypotheses: Vec<(Pose, _)> = offsets
        .iter()
        .map(|&(r, z)| {
            let rotation = Rotation3::exp(&Vector3::new(r, -r, 0.5 * r)) * gt.rotation;
            (Pose::new(rotation, gt.translation + Vector3::new(0.1 * z, 0.0, z)), None)
        })
        .collect();
    let results = refiner.refine_hypotheses(&hypotheses, &seq.camera, 0);

    let mut outcomes = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => {
                println!(
                    "hypothesis {i}: quality {:.3}, ADD {:.2} mm after {} iterations",
                    o.quality,
                    add_error(&o.pose, &gt, &seq.model),
                    o.per_iteration.len()
                );
                outcomes.push(o);
            }
            Err(e) => println!("hypothesis {i}: {e}"),
        }
    }
    if let Ok(best) = select_best(&outcomes) {
        println!("selected outcome {best}");
    }
}
