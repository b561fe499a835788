use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;

use crate::geometry::{geodesic_deg, Rotation3};

const PSI: f64 = 1.533_751_168_755_204_3;

/// `n` orientations covering SO(3) by the super-Fibonacci spiral over unit
/// quaternions. Element 0 is the identity. Deterministic for a given `n`.
pub fn sample_so3(n: usize) -> Vec<Rotation3> {
    let nf = n as f64;
    (0..n)
        .map(|i| {
            let s = i as f64;
            let t = s / nf;
            let d = 2.0 * PI * s;
            let r = t.sqrt();
            let big_r = (1.0 - t).sqrt();
            let alpha = d / SQRT_2;
            let beta = d / PSI;
            let (x, y, z, w) = (r * alpha.sin(), r * alpha.cos(), big_r * beta.sin(), big_r * beta.cos());
            Rotation3::from_quaternion(w, x, y, z)
        })
        .collect()
}

/// Geodesic angle from each rotation to its nearest other rotation, degrees.
pub fn nearest_neighbor_angles(rotations: &[Rotation3]) -> Vec<f64> {
    (0..rotations.len())
        .into_par_iter()
        .map(|i| {
            rotations
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| geodesic_deg(&rotations[i], r))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}
