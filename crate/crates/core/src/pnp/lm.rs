//! Levenberg-Marquardt polish of a pose on weighted reprojection error.
//!
//! The update is a left-multiplied increment `(exp(dw), dt)` with the 6-vector
//! ordered `[dw, dt]`.

use nalgebra::{Matrix2x3, Matrix6, SMatrix, Vector2, Vector6};

use super::PnpError;
use crate::correspondence::Corr2D3D;
use crate::geometry::{skew, CameraIntrinsics, Pose};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step changes the cost by less than this fraction.
    pub relative_tolerance: f64,
    pub initial_damping: f64,
    pub max_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            relative_tolerance: 1e-10,
            initial_damping: 1e-3,
            max_damping: 1e12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmReport {
    pub pose: Pose,
    /// Cost before the first step followed by the cost after every accepted step.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

impl LmReport {
    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().unwrap_or(&f64::INFINITY)
    }
}

/// Residual `project(x) - observed` in pixels, `None` behind the camera.
pub fn reprojection_residual(c: &Corr2D3D, pose: &Pose, cam: &CameraIntrinsics) -> Option<Vector2<f64>> {
    cam.project(&pose.transform(&c.point)).ok().map(|u| u - c.pixel)
}

/// Jacobian of the residual with respect to the left increment `[dw, dt]`.
pub fn reprojection_jacobian(point: &nalgebra::Vector3<f64>, pose: &Pose, cam: &CameraIntrinsics) -> Option<SMatrix<f64, 2, 6>> {
    let p = pose.transform(point);
    if !(p.z > 0.0) {
        return None;
    }
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let d_proj = Matrix2x3::new(cam.fx * iz, 0.0, -cam.fx * p.x * iz2, 0.0, cam.fy * iz, -cam.fy * p.y * iz2);
    let mut j = SMatrix::<f64, 2, 6>::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_proj * -skew(&p)));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_proj);
    Some(j)
}

/// Weighted sum of squared reprojection errors; infinite if any point falls
/// behind the camera.
pub fn weighted_cost(corrs: &[Corr2D3D], pose: &Pose, cam: &CameraIntrinsics) -> f64 {
    let mut cost = 0.0;
    for c in corrs {
        match reprojection_residual(c, pose, cam) {
            Some(r) => cost += c.weight * r.norm_squared(),
            None => return f64::INFINITY,
        }
    }
    cost
}

pub fn refine_lm(initial: &Pose, inliers: &[Corr2D3D], cam: &CameraIntrinsics) -> Result<Pose, PnpError> {
    refine_lm_with(initial, inliers, cam, &LmConfig::default()).map(|r| r.pose)
}

pub fn refine_lm_with(initial: &Pose, inliers: &[Corr2D3D], cam: &CameraIntrinsics, cfg: &LmConfig) -> Result<LmReport, PnpError> {
    if inliers.len() < 4 {
        return Err(PnpError::TooFewCorrespondences(inliers.len()));
    }
    let mut pose = *initial;
    let mut cost = weighted_cost(inliers, &pose, cam);
    if !cost.is_finite() {
        return Err(PnpError::NumericalFailure("initial pose puts inliers behind the camera"));
    }
    let mut report = LmReport {
        pose,
        cost_history: vec![cost],
        iterations: 0,
    };
    let mut lambda = cfg.initial_damping;
    // Exact fits have nothing left to improve.
    let floor = 1e-24 * inliers.iter().map(|c| c.weight).sum::<f64>();

    while report.iterations < cfg.max_iterations && cost > floor {
        let mut a = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for c in inliers {
            let (Some(r), Some(j)) = (reprojection_residual(c, &pose, cam), reprojection_jacobian(&c.point, &pose, cam)) else {
                return Err(PnpError::NumericalFailure("inlier behind the camera"));
            };
            a += j.transpose() * j * c.weight;
            g += j.transpose() * r * c.weight;
        }
        let max_diag = (0..6).map(|i| a[(i, i)]).fold(0.0, f64::max);
        if !(max_diag > 0.0) || !max_diag.is_finite() {
            return Err(PnpError::NumericalFailure("degenerate normal equations"));
        }

        let mut accepted = false;
        while report.iterations < cfg.max_iterations {
            report.iterations += 1;
            let mut damped = a;
            for i in 0..6 {
                damped[(i, i)] += lambda * a[(i, i)].max(1e-12 * max_diag);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                if lambda > cfg.max_damping {
                    return Err(PnpError::NumericalFailure("normal equations singular at max damping"));
                }
                continue;
            };
            let step = chol.solve(&(-g));
            let dw = step.fixed_rows::<3>(0).into_owned();
            let dt = step.fixed_rows::<3>(3).into_owned();
            let candidate = pose.perturbed_left(&dw, &dt);
            let new_cost = weighted_cost(inliers, &candidate, cam);
            if new_cost <= cost {
                let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                pose = candidate;
                cost = new_cost;
                report.cost_history.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if rel < cfg.relative_tolerance {
                    report.pose = pose;
                    return Ok(report);
                }
                break;
            }
            lambda *= 10.0;
            if lambda > cfg.max_damping {
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    report.pose = pose;
    Ok(report)
}
