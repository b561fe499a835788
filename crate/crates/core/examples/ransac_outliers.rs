//! Robust pose fitting: EPnP inside RANSAC on correspondences with 30%
//! gross outliers and 1 px noise, then Levenberg-Marquardt on the inliers.

use flowpose::correspondence::Corr2D3D;
use flowpose::geometry::{CameraIntrinsics, Pose, Rotation3};
use flowpose::pnp::{ransac_pnp, refine_lm, solve_epnp, weighted_cost, RansacConfig};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() {
    let cam = CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap();
    let gt = Pose::new(Rotation3::exp(&Vector3::new(0.4, -0.3, 0.2)), Vector3::new(30.0, -20.0, 650.0));
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let corrs: Vec<Corr2D3D> = (0..500)
        .map(|i| {
            let x = Vector3::from_fn(|_, _| rng.random_range(-60.0..60.0));
            let u = if i % 10 < 3 {
                Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0))
            } else {
                let n = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
                cam.project(&gt.transform(&x)).unwrap() + n
            };
            Corr2D3D::new(u, x, 1.0)
        })
        .collect();

    let naive = solve_epnp(&corrs, &cam).unwrap();
    println!("EPnP on everything: {:?}", naive.distance_to(&gt));

    let fit = ransac_pnp(&corrs, &cam, &RansacConfig { seed: 5, ..RansacConfig::default() }).unwrap();
    println!(
        "RANSAC: quality {:.3} after {} iterations, error {:?}",
        fit.quality,
        fit.iterations,
        fit.pose.distance_to(&gt)
    );

    let inliers: Vec<Corr2D3D> = fit.inliers.iter().map(|&i| corrs[i]).collect();
    let polished = refine_lm(&fit.pose, &inliers, &cam).unwrap();
    println!(
        "LM: cost {:.2} -> {:.2}, error {:?}",
        weighted_cost(&inliers, &fit.pose, &cam),
        weighted_cost(&inliers, &polished, &cam),
        polished.distance_to(&gt)
    );
}
