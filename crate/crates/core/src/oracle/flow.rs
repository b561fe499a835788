use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::sequence::cast_ray;
use super::{derive_seed, hash_pose, NoiseSpec, OccludedFlow, OracleError, OracleSequence};
use crate::correspondence::{FlowField, Template, VisibilityMap};
use crate::geometry::{geodesic_deg, CameraIntrinsics, CropCamera, Pose};

const M2F_STREAM: u64 = 0x6d3266;
const F2F_STREAM: u64 = 0x663266;

fn hash_crop(crop: &CropCamera) -> u64 {
    let c = &crop.intrinsics;
    derive_seed(&[
        hash_pose(&Pose::new(crop.rotation_to_source, Vector3::zeros())),
        c.fx.to_bits(),
        c.cx.to_bits(),
        c.cy.to_bits(),
        c.width as u64,
        c.height as u64,
    ])
}

fn uniform_target(rng: &mut impl Rng, cam: &CameraIntrinsics) -> Vector2<f64> {
    Vector2::new(
        rng.random_range(-0.5..cam.width as f64 - 0.5),
        rng.random_range(-0.5..cam.height as f64 - 0.5),
    )
}

fn gaussian2(rng: &mut impl Rng, sigma: f64) -> Vector2<f64> {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    Vector2::new(a, b) * sigma
}

/// Unit-variance 2-d Gaussian field over a `w` x `h` grid, correlated over
/// `spacing` px: lattice values bilinearly blended and renormalized so every
/// pixel keeps unit variance per component.
struct LatticeField {
    spacing: f64,
    cols: usize,
    nodes: Vec<Vector2<f64>>,
}

impl LatticeField {
    fn new(rng: &mut impl Rng, w: u32, h: u32, spacing: f64) -> Self {
        let cols = (w as f64 / spacing).floor() as usize + 2;
        let rows = (h as f64 / spacing).floor() as usize + 2;
        let nodes = (0..cols * rows).map(|_| gaussian2(rng, 1.0)).collect();
        Self { spacing, cols, nodes }
    }

    fn at(&self, x: u32, y: u32) -> Vector2<f64> {
        let (fx, fy) = (x as f64 / self.spacing, y as f64 / self.spacing);
        let (i, j) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let w = [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty];
        let n = [
            self.nodes[j * self.cols + i],
            self.nodes[j * self.cols + i + 1],
            self.nodes[(j + 1) * self.cols + i],
            self.nodes[(j + 1) * self.cols + i + 1],
        ];
        let v: Vector2<f64> = w.iter().zip(&n).map(|(w, n)| n * *w).sum();
        v / w.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Pixel bounds in `cam` of the model's bounding box seen under `pose`
/// (camera frame of `cam`), one pixel of margin; the whole image when a
/// corner is behind the camera.
fn object_window(seq: &OracleSequence, pose: &Pose, cam: &CameraIntrinsics) -> (u32, u32, u32, u32) {
    let full = (0, 0, cam.width - 1, cam.height - 1);
    let (lo, hi) = seq.model.bounds();
    let mut min = Vector2::repeat(f64::INFINITY);
    let mut max = Vector2::repeat(f64::NEG_INFINITY);
    for i in 0..8 {
        let c = Vector3::new(
            if i & 1 == 0 { lo.x } else { hi.x },
            if i & 2 == 0 { lo.y } else { hi.y },
            if i & 4 == 0 { lo.z } else { hi.z },
        );
        let Ok(u) = cam.project(&pose.transform(&c)) else { return full };
        min = min.inf(&u);
        max = max.sup(&u);
    }
    let clamp = |v: f64, hi: u32| v.clamp(0.0, hi as f64) as u32;
    if max.x < 0.0 || max.y < 0.0 || min.x > (cam.width - 1) as f64 || min.y > (cam.height - 1) as f64 {
        return (1, 1, 0, 0);
    }
    (
        clamp(min.x.floor() - 1.0, cam.width - 1),
        clamp(min.y.floor() - 1.0, cam.height - 1),
        clamp(max.x.ceil() + 1.0, cam.width - 1),
        clamp(max.y.ceil() + 1.0, cam.height - 1),
    )
}

/// Template-to-crop flow and visibility for frame `frame_id`. Each template
/// mask pixel is lifted through the template depth, moved by the true pose
/// and projected into `crop`. Visible means inside the crop, unoccluded and
/// on the frame's z-buffer. Noise, when configured, is drawn from a stream
/// keyed by `seed`, the frame, the template pose and the crop.
pub fn oracle_m2f_flow(
    seq: &OracleSequence,
    tpl: &Template,
    frame_id: usize,
    crop: &CropCamera,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<(FlowField, VisibilityMap), OracleError> {
    noise.validate()?;
    let frame = seq.frame(frame_id)?;
    let (w, h) = (tpl.width(), tpl.height());
    let n = w as usize * h as usize;
    let mut vectors = vec![Vector2::zeros(); n];
    let mut valid = vec![false; n];
    let mut vis = vec![0.0; n];
    let to_crop = crop.rotation_to_source.inverse();

    for y in 0..h {
        for x in 0..w {
            let Some(x_m) = tpl.lift(x, y) else { continue };
            let u_t = Vector2::new(x as f64, y as f64);
            let p = frame.gt_pose.transform(&x_m);
            let Ok(target) = crop.intrinsics.project(&to_crop.apply(&p)) else { continue };
            let i = (y * w + x) as usize;
            vectors[i] = target - u_t;
            valid[i] = true;
            if crop.intrinsics.contains(&target) && seq.is_visible(frame, &p) {
                vis[i] = 1.0;
            }
        }
    }

    if !noise.is_exact() {
        let gt_in_crop = crop.pose_to_crop(&frame.gt_pose);
        let sigma = noise.sigma_px + noise.sigma_per_deg * geodesic_deg(&tpl.pose.rotation, &gt_in_crop.rotation);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
            seed,
            M2F_STREAM,
            frame_id as u64,
            hash_pose(&tpl.pose),
            hash_crop(crop),
        ]));
        let field = (noise.m2f_correlation_px > 0.0).then(|| LatticeField::new(&mut rng, w, h, noise.m2f_correlation_px));
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                if !tpl.in_mask(x, y) {
                    continue;
                }
                let u_t = Vector2::new(x as f64, y as f64);
                if sigma > 0.0 && valid[i] {
                    vectors[i] += match &field {
                        Some(f) => f.at(x, y) * sigma,
                        None => gaussian2(&mut rng, sigma),
                    };
                }
                if noise.outlier_fraction > 0.0 && rng.random_bool(noise.outlier_fraction) {
                    vectors[i] = uniform_target(&mut rng, &crop.intrinsics) - u_t;
                    valid[i] = true;
                }
                if noise.vis_flip_rate > 0.0 && rng.random_bool(noise.vis_flip_rate) {
                    vis[i] = 1.0 - vis[i];
                }
            }
        }
    }

    for i in 0..n {
        if !valid[i] {
            vectors[i] = Vector2::zeros();
            vis[i] = 0.0;
        }
    }
    let flow = FlowField::new(w, h, vectors, valid)?;
    let vis = VisibilityMap::new(w, h, vis)?;
    Ok((flow, vis))
}

/// Flow from `crop_from` of frame `from` to `crop_to` of frame `to`. Defined
/// at pixels where the object surface is seen in frame `from`; the value is
/// the displacement of that surface point between the two crops. Points
/// hidden in frame `to` keep their geometric flow unless the noise spec asks
/// to drop them.
pub fn oracle_f2f_flow(
    seq: &OracleSequence,
    from: usize,
    to: usize,
    crop_from: &CropCamera,
    crop_to: &CropCamera,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<FlowField, OracleError> {
    noise.validate()?;
    let fi = seq.frame(from)?;
    let fj = seq.frame(to)?;
    let cam_i = &crop_from.intrinsics;
    let (w, h) = (cam_i.width, cam_i.height);
    let n = w as usize * h as usize;
    let mut vectors = vec![Vector2::zeros(); n];
    let mut valid = vec![false; n];
    let to_crop_j = crop_to.rotation_to_source.inverse();

    let (x0, y0, x1, y1) = object_window(seq, &crop_from.pose_to_crop(&fi.gt_pose), cam_i);
    for y in y0..=y1.min(h - 1) {
        for x in x0..=x1.min(w - 1) {
            let u = Vector2::new(x as f64, y as f64);
            let ray = crop_from.source_ray(&u);
            let Some((x_m, p_i)) = cast_ray(&seq.surface, &fi.gt_pose, &ray) else { continue };
            let Ok(s_i) = seq.camera.project(&p_i) else { continue };
            if !seq.camera.contains(&s_i) || fi.occluded(&s_i) {
                continue;
            }
            let p_j = fj.gt_pose.transform(&x_m);
            if noise.occluded_flow == OccludedFlow::Drop && !seq.is_visible(fj, &p_j) {
                continue;
            }
            let Ok(target) = crop_to.intrinsics.project(&to_crop_j.apply(&p_j)) else { continue };
            let i = (y * w + x) as usize;
            vectors[i] = target - u;
            valid[i] = true;
        }
    }

    if noise.sigma_px > 0.0 || noise.outlier_fraction > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
            seed,
            F2F_STREAM,
            from as u64,
            to as u64,
            hash_crop(crop_from),
            hash_crop(crop_to),
        ]));
        for i in 0..n {
            if !valid[i] {
                continue;
            }
            if noise.sigma_px > 0.0 {
                vectors[i] += gaussian2(&mut rng, noise.sigma_px);
            }
            if noise.outlier_fraction > 0.0 && rng.random_bool(noise.outlier_fraction) {
                let u = Vector2::new((i % w as usize) as f64, (i / w as usize) as f64);
                vectors[i] = uniform_target(&mut rng, &crop_to.intrinsics) - u;
            }
        }
    }
    Ok(FlowField::new(w, h, vectors, valid)?)
}
