//! Projects a model into a source camera and builds the perspective crop
//! whose optical axis passes through the object's box center.

use flowpose::geometry::{make_crop_camera, projected_bbox, CameraIntrinsics, Pose, Rotation3};
use flowpose::oracle::{build_model, SceneSpec};
use nalgebra::{Vector2, Vector3};

fn main() {
    let source = CameraIntrinsics::new(600.0, 600.0, 319.5, 239.5, 640, 480).unwrap();
    let (model, _) = build_model(&SceneSpec::default()).unwrap();
    let pose = Pose::new(Rotation3::rot_y_deg(30.0), Vector3::new(120.0, -40.0, 700.0));

    let bbox = projected_bbox(model.points(), &pose, &source).unwrap();
    println!("box in source: ({:.1}, {:.1}) to ({:.1}, {:.1})", bbox.min.x, bbox.min.y, bbox.max.x, bbox.max.y);

    let crop = make_crop_camera(&bbox, &source, 280, 1.2).unwrap();
    let in_crop = crop.pose_to_crop(&pose);
    println!("crop focal length {:.2} px", crop.intrinsics.fx);
    println!("object center in crop: {:?}", crop.intrinsics.project(&in_crop.translation).unwrap());

    let corner = Vector2::new(0.0, 0.0);
    let back = crop.crop_to_source(&corner).unwrap();
    println!("crop pixel (0, 0) comes from source pixel ({:.2}, {:.2})", back.x, back.y);
    let (rot, trans) = crop.pose_from_crop(&in_crop).distance_to(&pose);
    println!("crop round trip error: {rot:.2e} deg, {trans:.2e} mm");
}
