use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::geometry::{Pose, Rotation3};

/// Axis-aligned ellipsoid in a local frame, placed by `pose` in the model
/// frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub pose: Pose,
    pub radii: Vector3<f64>,
}

impl Ellipsoid {
    fn local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.inverse().transform(p).component_div(&self.radii)
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        self.local(p).norm_squared() < 1.0 - 1e-12
    }

    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let rinv = self.pose.rotation.inverse();
        let o = self.local(origin);
        let d = rinv.apply(dir).component_div(&self.radii);
        smallest_positive_root(d.norm_squared(), 2.0 * o.dot(&d), o.norm_squared() - 1.0)
    }
}

fn smallest_positive_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if a <= 0.0 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Numerically stable pair of roots.
    let q = -0.5 * (b + b.signum() * sq);
    let (mut t0, mut t1) = (q / a, if q != 0.0 { c / q } else { -q / a });
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    if t0 > 0.0 {
        Some(t0)
    } else if t1 > 0.0 {
        Some(t1)
    } else {
        None
    }
}

/// Closed analytic surfaces in the model frame (mm), centered at the origin.
#[derive(Clone, Debug, PartialEq)]
pub enum Surface {
    /// Axis-aligned cube with the given half edge.
    Cube { half: f64 },
    /// Capped cylinder around the z axis.
    Cylinder { radius: f64, half_height: f64 },
    /// Union of ellipsoids.
    Blob { parts: Vec<Ellipsoid> },
}

impl Surface {
    /// Blob of three random ellipsoids within roughly `size` mm.
    pub fn random_blob(size: f64, rng: &mut impl Rng) -> Self {
        let parts = (0..3)
            .map(|_| {
                let center = Vector3::from_fn(|_, _| rng.random_range(-0.2..0.2) * size);
                let w = Vector3::from_fn(|_, _| rng.random_range(-PI..PI));
                let radii = Vector3::from_fn(|_, _| rng.random_range(0.18..0.32) * size);
                Ellipsoid {
                    pose: Pose::new(Rotation3::exp(&w), center),
                    radii,
                }
            })
            .collect();
        Surface::Blob { parts }
    }

    /// Distance along `dir` from `origin` to the first surface crossing,
    /// both in the model frame. `origin` must lie outside the solid.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Surface::Cube { half } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for i in 0..3 {
                    if dir[i] == 0.0 {
                        if origin[i].abs() > *half {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half - origin[i]) / dir[i];
                    let b = (half - origin[i]) / dir[i];
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                (t_near <= t_far && t_near > 0.0).then_some(t_near)
            }
            Surface::Cylinder { radius, half_height } => {
                let mut best = f64::INFINITY;
                let a = dir.x * dir.x + dir.y * dir.y;
                if a > 0.0 {
                    let b = 2.0 * (origin.x * dir.x + origin.y * dir.y);
                    let c = origin.x * origin.x + origin.y * origin.y - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let t = (-b - disc.sqrt()) / (2.0 * a);
                        if t > 0.0 && (origin.z + t * dir.z).abs() <= *half_height {
                            best = t;
                        }
                    }
                }
                if dir.z != 0.0 {
                    for cap in [-half_height, *half_height] {
                        let t = (cap - origin.z) / dir.z;
                        let p = origin + dir * t;
                        if t > 0.0 && p.x * p.x + p.y * p.y <= radius * radius {
                            best = best.min(t);
                        }
                    }
                }
                best.is_finite().then_some(best)
            }
            Surface::Blob { parts } => parts
                .iter()
                .filter_map(|e| e.intersect(origin, dir))
                .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t)))),
        }
    }

    /// `n` points on the surface. Cube and cylinder samples are
    /// area-uniform; blob samples are spread over each visible ellipsoid
    /// patch.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(n);
        match self {
            Surface::Cube { half } => {
                let h = *half;
                while out.len() < n {
                    let axis = rng.random_range(0..3);
                    let mut p = Vector3::new(rng.random_range(-h..=h), rng.random_range(-h..=h), rng.random_range(-h..=h));
                    p[axis] = if rng.random_bool(0.5) { h } else { -h };
                    out.push(p);
                }
            }
            Surface::Cylinder { radius, half_height } => {
                let side = 2.0 * PI * radius * 2.0 * half_height;
                let cap = PI * radius * radius;
                while out.len() < n {
                    let pick = rng.random_range(0.0..side + 2.0 * cap);
                    if pick < side {
                        let a = rng.random_range(0.0..2.0 * PI);
                        out.push(Vector3::new(radius * a.cos(), radius * a.sin(), rng.random_range(-half_height..=*half_height)));
                    } else {
                        let a = rng.random_range(0.0..2.0 * PI);
                        let r = radius * rng.random_range(0.0f64..=1.0).sqrt();
                        let z = if pick < side + cap { *half_height } else { -half_height };
                        out.push(Vector3::new(r * a.cos(), r * a.sin(), z));
                    }
                }
            }
            Surface::Blob { parts } => {
                while out.len() < n {
                    let k = rng.random_range(0..parts.len());
                    let e = &parts[k];
                    let v: Vector3<f64> = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
                    let len = v.norm();
                    if !(len > 1e-6 && len <= 1.0) {
                        continue;
                    }
                    let p = e.pose.transform(&(v / len).component_mul(&e.radii));
                    if parts.iter().enumerate().any(|(j, o)| j != k && o.contains(&p)) {
                        continue;
                    }
                    out.push(p);
                }
            }
        }
        out
    }

    /// Rotational symmetries of the shape, identity excluded. The cylinder's
    /// continuous symmetry is discretized in 10 degree steps.
    pub fn symmetries(&self) -> Vec<Pose> {
        match self {
            Surface::Cube { .. } => cube_rotations()
                .into_iter()
                .filter(|m| *m != Matrix3::identity())
                .map(|m| Pose::new(Rotation3::from_matrix(m).expect("signed permutation"), Vector3::zeros()))
                .collect(),
            Surface::Cylinder { .. } => {
                let mut out = Vec::new();
                for flip in [false, true] {
                    for k in 0..36 {
                        if !flip && k == 0 {
                            continue;
                        }
                        let mut r = Rotation3::rot_z_deg(10.0 * k as f64);
                        if flip {
                            r = r * Rotation3::rot_x_deg(180.0);
                        }
                        out.push(Pose::new(r, Vector3::zeros()));
                    }
                }
                out
            }
            Surface::Blob { .. } => Vec::new(),
        }
    }
}

/// The 24 proper rotations mapping the cube onto itself.
fn cube_rotations() -> Vec<Matrix3<f64>> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs & (1 << row) != 0 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}
