//! Exports a synthetic sequence to flow and visibility files, loads it back
//! and tracks from the recording without the oracle.

use flowpose::oracle::{export_sequence, generate_sequence, load_recording, ExportOptions, Keyframe, SceneSpec};
use flowpose::tracking::{track_sequence, TrackerConfig};
use nalgebra::Vector3;

fn main() {
    let spec = SceneSpec {
        points: 1200,
        keyframes: vec![
            Keyframe::new(Vector3::new(10.0, 0.0, 0.0), Vector3::new(-20.0, 0.0, 620.0)),
            Keyframe::new(Vector3::new(10.0, 25.0, 0.0), Vector3::new(20.0, 0.0, 600.0)),
        ],
        steps: vec![30],
        ..SceneSpec::default()
    };
    let seq = generate_sequence(&spec).unwrap();
    let dir = std::env::temp_dir().join("flowpose-record-and-replay");
    export_sequence(&seq, &dir, &ExportOptions::default()).unwrap();
    println!("wrote {} frames to {}", seq.frames.len(), dir.display());

    let rec = load_recording(&dir).unwrap();
    let result = track_sequence(
        &rec.model,
        rec.m2f,
        rec.f2f,
        rec.spec.camera,
        &rec.gt_poses[0],
        rec.gt_poses.len(),
        &TrackerConfig::default(),
    )
    .unwrap();
    let worst = result
        .decisions
        .iter()
        .map(|d| d.pose.distance_to(&rec.gt_poses[d.frame_index]).0)
        .fold(0.0, f64::max);
    let registrations = result.decisions.iter().filter(|d| d.used_model_registration).count();
    println!("replayed {} frames, {registrations} registrations, worst rotation error {worst:.4} deg", result.decisions.len());
}
