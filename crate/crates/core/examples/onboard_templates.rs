//! Offline onboarding: 800 depth templates at orientations covering SO(3),
//! then coarse retrieval of the nearest one.

use flowpose::geometry::Rotation3;
use flowpose::onboarding::{build_template_set, default_template_camera, nearest_neighbor_angles, sample_so3};
use flowpose::oracle::{build_model, ModelKind, SceneSpec};
use nalgebra::Vector3;

fn main() {
    let rotations = sample_so3(800);
    let nn = nearest_neighbor_angles(&rotations);
    let mean = nn.iter().sum::<f64>() / nn.len() as f64;
    println!("800 orientations, mean nearest-neighbour angle {mean:.2} deg");

    let (model, _) = build_model(&SceneSpec {
        model: ModelKind::Cylinder,
        points: 1200,
        height_mm: 150.0,
        ..SceneSpec::default()
    })
    .unwrap();
    let set = build_template_set(&model, 800, &default_template_camera(280), None).unwrap();
    println!("{} templates, spacing {:.2} deg", set.len(), set.angular_spacing_deg());

    let query = Rotation3::exp(&Vector3::new(0.7, -0.2, 1.9));
    let (idx, angle) = set.nearest(&query);
    let tpl = &set.templates()[idx];
    println!("nearest template {idx} is {angle:.2} deg away and covers {} pixels", tpl.mask_count());
}
