//! EPnP: the pose is expressed through four (or, for planar point sets,
//! three) virtual control points whose camera coordinates span the null
//! space of a linear system built from barycentric coordinates.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use super::PnpError;
use crate::correspondence::Corr2D3D;
use crate::geometry::{CameraIntrinsics, Pose, Rotation3};

/// Smallest/largest covariance eigenvalue ratio below which the point set is
/// treated as planar.
pub const PLANAR_RATIO: f64 = 1e-6;
const COLLINEAR_RATIO: f64 = 1e-12;
const GAUSS_NEWTON_ITERATIONS: usize = 25;

/// Solves for the model-to-camera pose from at least four correspondences.
/// Weights scale the rows of the linear system.
pub fn solve_epnp(corrs: &[Corr2D3D], cam: &CameraIntrinsics) -> Result<Pose, PnpError> {
    if corrs.len() < 4 {
        return Err(PnpError::DegenerateConfiguration);
    }
    if corrs.iter().any(|c| !c.point.iter().all(|v| v.is_finite()) || !c.pixel.iter().all(|v| v.is_finite())) {
        return Err(PnpError::DegenerateConfiguration);
    }
    let n = corrs.len() as f64;
    let centroid = corrs.iter().fold(Vector3::zeros(), |acc, c| acc + c.point) / n;
    let mut cov = Matrix3::zeros();
    for c in corrs {
        let d = c.point - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let lambdas: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let axes: Vec<Vector3<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into()).collect();
    if !(lambdas[0] > 0.0) || lambdas[1] / lambdas[0] < COLLINEAR_RATIO {
        return Err(PnpError::DegenerateConfiguration);
    }
    let planar = lambdas[2] / lambdas[0] < PLANAR_RATIO;
    let k = if planar { 3 } else { 4 };

    // Control points: centroid plus principal axes scaled by their spread.
    let mut control = vec![centroid];
    let mut scaled_axes = Vec::with_capacity(k - 1);
    for j in 0..k - 1 {
        let s = lambdas[j].sqrt();
        control.push(centroid + axes[j] * s);
        scaled_axes.push(axes[j] / s);
    }

    let alphas: Vec<[f64; 4]> = corrs
        .iter()
        .map(|c| {
            let d = c.point - centroid;
            let mut a = [0.0; 4];
            let mut sum = 0.0;
            for j in 0..k - 1 {
                a[j + 1] = scaled_axes[j].dot(&d);
                sum += a[j + 1];
            }
            a[0] = 1.0 - sum;
            a
        })
        .collect();

    // Normal matrix M^T M of the 2n x 3k system, accumulated row pair by row pair.
    let dim = 3 * k;
    let mut mtm = DMatrix::<f64>::zeros(dim, dim);
    let mut row_x = vec![0.0; dim];
    let mut row_y = vec![0.0; dim];
    for (c, a) in corrs.iter().zip(&alphas) {
        let w = c.weight.max(0.0);
        if w == 0.0 {
            continue;
        }
        let sw = w.sqrt();
        let xn = (c.pixel.x - cam.cx) / cam.fx;
        let yn = (c.pixel.y - cam.cy) / cam.fy;
        for j in 0..k {
            row_x[3 * j] = sw * a[j];
            row_x[3 * j + 1] = 0.0;
            row_x[3 * j + 2] = -sw * a[j] * xn;
            row_y[3 * j] = 0.0;
            row_y[3 * j + 1] = sw * a[j];
            row_y[3 * j + 2] = -sw * a[j] * yn;
        }
        for r in 0..dim {
            let (xr, yr) = (row_x[r], row_y[r]);
            if xr == 0.0 && yr == 0.0 {
                continue;
            }
            for s in r..dim {
                mtm[(r, s)] += xr * row_x[s] + yr * row_y[s];
            }
        }
    }
    for r in 0..dim {
        for s in 0..r {
            mtm[(r, s)] = mtm[(s, r)];
        }
    }
    if !mtm.iter().all(|v| v.is_finite()) {
        return Err(PnpError::NumericalFailure("non-finite EPnP system"));
    }
    let eig = SymmetricEigen::new(mtm);
    let mut idx: Vec<usize> = (0..dim).collect();
    idx.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let null_vectors: Vec<DVector<f64>> = idx.iter().take(4).map(|&i| eig.eigenvectors.column(i).into()).collect();
    if null_vectors.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
        return Err(PnpError::NumericalFailure("null space extraction failed"));
    }

    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    let rho: Vec<f64> = pairs.iter().map(|&(a, b)| (control[a] - control[b]).norm_squared()).collect();

    let max_n = if planar { 3 } else { 4 };
    // d[pair][beta] = difference of the beta-th null vector between the pair's control points.
    let d: Vec<Vec<Vector3<f64>>> = pairs
        .iter()
        .map(|&(a, b)| (0..max_n).map(|i| block(&null_vectors[i], a) - block(&null_vectors[i], b)).collect())
        .collect();

    let mut best: Option<(f64, Pose)> = None;
    let mut consider = |betas: Vec<f64>| {
        let betas = gauss_newton(&d, &rho, betas);
        if let Some(pose) = pose_from_betas(&betas, &null_vectors, &alphas, corrs, k) {
            let err = sum_squared_reprojection(corrs, &pose, cam);
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, pose));
            }
        }
    };

    // Weak-perspective guess projected onto the null space; it lands in the
    // right basin when the linearizations below do not.
    if let Some(betas) = weak_perspective_betas(corrs, &alphas, k, cam, &null_vectors[..max_n]) {
        consider(betas);
    }

    // Each null-space dimension gives one linearized initialization; all of
    // them are polished over the full beta space.
    for nb in 1..=max_n {
        let truncated: Vec<Vec<Vector3<f64>>> = d.iter().map(|row| row[..nb].to_vec()).collect();
        let Some(mut init) = initial_betas(&truncated, &rho, nb) else { continue };
        init.resize(max_n, 0.0);
        // The linearization only fixes beta_1 beta_l, so the relative signs
        // of the remaining betas are ambiguous; try each pattern.
        for signs in 0..1u32 << (nb - 1) {
            let mut betas = init.clone();
            for (l, b) in betas.iter_mut().enumerate().take(nb).skip(1) {
                if signs & (1 << (l - 1)) != 0 {
                    *b = -*b;
                }
            }
            consider(betas);
        }
    }
    best.map(|(_, p)| p).ok_or(PnpError::NumericalFailure("no EPnP candidate produced a pose"))
}

fn weak_perspective_betas(
    corrs: &[Corr2D3D],
    alphas: &[[f64; 4]],
    k: usize,
    cam: &CameraIntrinsics,
    null_vectors: &[DVector<f64>],
) -> Option<Vec<f64>> {
    let n = corrs.len() as f64;
    let rays: Vec<Vector3<f64>> = corrs.iter().map(|c| cam.ray(&c.pixel)).collect();
    let ray_mean = rays.iter().fold(Vector3::zeros(), |a, r| a + r) / n;
    let world_mean = corrs.iter().fold(Vector3::zeros(), |a, c| a + c.point) / n;
    let image_spread: f64 = rays.iter().map(|r| (r - ray_mean).xy().norm_squared()).sum::<f64>().sqrt();
    let world_spread: f64 = corrs.iter().map(|c| (c.point - world_mean).norm_squared()).sum::<f64>().sqrt();
    if !(image_spread > 0.0) {
        return None;
    }
    let depth = world_spread / image_spread;

    // Least-squares control points reproducing the guessed camera points.
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut atb = DMatrix::<f64>::zeros(k, 3);
    for (a, r) in alphas.iter().zip(&rays) {
        let p = r * depth;
        for i in 0..k {
            for j in 0..k {
                ata[(i, j)] += a[i] * a[j];
            }
            for c in 0..3 {
                atb[(i, c)] += a[i] * p[c];
            }
        }
    }
    let ctrl = ata.lu().solve(&atb)?;
    let mut x = DVector::<f64>::zeros(3 * k);
    for j in 0..k {
        for c in 0..3 {
            x[3 * j + c] = ctrl[(j, c)];
        }
    }
    Some(null_vectors.iter().map(|v| v.dot(&x)).collect())
}

fn block(v: &DVector<f64>, j: usize) -> Vector3<f64> {
    Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])
}

/// Linearized distance constraints: solve for the products `beta_k beta_l`
/// (all of them when the system is overdetermined, otherwise only
/// `beta_1 beta_l`) and read the betas back.
fn initial_betas(d: &[Vec<Vector3<f64>>], rho: &[f64], nb: usize) -> Option<Vec<f64>> {
    let p = rho.len();
    let full = nb * (nb + 1) / 2 <= p;
    let products: Vec<(usize, usize)> = if full {
        (0..nb).flat_map(|kk| (kk..nb).map(move |l| (kk, l))).collect()
    } else {
        (0..nb).map(|l| (0, l)).collect()
    };
    if products.len() > p {
        return None;
    }
    let mut l_mat = DMatrix::<f64>::zeros(p, products.len());
    for (r, dr) in d.iter().enumerate() {
        for (col, &(kk, l)) in products.iter().enumerate() {
            let f = if kk == l { 1.0 } else { 2.0 };
            l_mat[(r, col)] = f * dr[kk].dot(&dr[l]);
        }
    }
    let rhs = DVector::from_column_slice(rho);
    let sol = l_mat.svd(true, true).solve(&rhs, 1e-14).ok()?;
    let b11 = sol[0];
    let beta1 = b11.abs().sqrt();
    if !(beta1 > 0.0) || !beta1.is_finite() {
        return None;
    }
    let mut betas = vec![0.0; nb];
    betas[0] = beta1;
    for (l, b) in betas.iter_mut().enumerate().skip(1) {
        let col = products.iter().position(|&pr| pr == (0, l))?;
        *b = sol[col] / beta1;
    }
    Some(betas)
}

fn constraint_residuals(d: &[Vec<Vector3<f64>>], rho: &[f64], betas: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let nb = betas.len();
    let mut r = DVector::zeros(rho.len());
    let mut j = DMatrix::zeros(rho.len(), nb);
    for (row, dr) in d.iter().enumerate() {
        let v = dr.iter().zip(betas).fold(Vector3::zeros(), |acc, (dk, b)| acc + dk * *b);
        r[row] = v.norm_squared() - rho[row];
        for kk in 0..nb {
            j[(row, kk)] = 2.0 * v.dot(&dr[kk]);
        }
    }
    (r, j)
}

fn gauss_newton(d: &[Vec<Vector3<f64>>], rho: &[f64], mut betas: Vec<f64>) -> Vec<f64> {
    let (mut r, mut j) = constraint_residuals(d, rho, &betas);
    let mut err = r.norm_squared();
    for _ in 0..GAUSS_NEWTON_ITERATIONS {
        let Ok(step) = j.clone().svd(true, true).solve(&(-&r), 1e-14) else { break };
        // Backtrack until the constraint residual drops.
        let mut scale = 1.0;
        let mut improved = false;
        while scale > 1e-3 {
            let candidate: Vec<f64> = betas.iter().zip(step.iter()).map(|(b, s)| b + s * scale).collect();
            let (r2, j2) = constraint_residuals(d, rho, &candidate);
            let e2 = r2.norm_squared();
            if e2 < err {
                betas = candidate;
                r = r2;
                j = j2;
                err = e2;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    betas
}

fn pose_from_betas(
    betas: &[f64],
    null_vectors: &[DVector<f64>],
    alphas: &[[f64; 4]],
    corrs: &[Corr2D3D],
    k: usize,
) -> Option<Pose> {
    let control_cam: Vec<Vector3<f64>> = (0..k)
        .map(|j| betas.iter().enumerate().fold(Vector3::zeros(), |acc, (i, b)| acc + block(&null_vectors[i], j) * *b))
        .collect();
    let mut cam_points: Vec<Vector3<f64>> = alphas
        .iter()
        .map(|a| (0..k).fold(Vector3::zeros(), |acc, j| acc + control_cam[j] * a[j]))
        .collect();
    let mean_z = cam_points.iter().map(|p| p.z).sum::<f64>() / cam_points.len() as f64;
    if mean_z < 0.0 {
        for p in cam_points.iter_mut() {
            *p = -*p;
        }
    }
    let world: Vec<Vector3<f64>> = corrs.iter().map(|c| c.point).collect();
    absolute_orientation(&world, &cam_points)
}

/// Least-squares rigid transform mapping `src` onto `dst`.
pub(crate) fn absolute_orientation(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Pose> {
    let n = src.len() as f64;
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = Rotation3::from_matrix_orthonormalized(u * fix * v_t).ok()?;
    let t = cd - r.apply(&cs);
    Some(Pose::new(r, t))
}

fn sum_squared_reprojection(corrs: &[Corr2D3D], pose: &Pose, cam: &CameraIntrinsics) -> f64 {
    corrs
        .iter()
        .map(|c| match cam.project(&pose.transform(&c.point)) {
            Ok(u) => (u - c.pixel).norm_squared(),
            Err(_) => f64::INFINITY,
        })
        .sum()
}

/// Whether a point set is planar in the sense used to pick the EPnP branch.
pub fn is_planar(points: &[Vector3<f64>]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let ev = SymmetricEigen::new(cov / n).eigenvalues;
    let max = ev.max();
    max <= 0.0 || ev.min().max(0.0) / max < PLANAR_RATIO
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::{geodesic_deg, project};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 140.0, 140.0, 280, 280).unwrap()
    }

    fn forward(points: &[Vector3<f64>], pose: &Pose) -> Vec<Corr2D3D> {
        points
            .iter()
            .map(|x| Corr2D3D::new(project(x, pose, &cam()).unwrap(), *x, 1.0))
            .collect()
    }

    #[test]
    fn cube_corners_are_recovered() {
        let mut corners = Vec::new();
        for sx in [-50.0, 50.0] {
            for sy in [-50.0, 50.0] {
                for sz in [-50.0, 50.0] {
                    corners.push(Vector3::new(sx, sy, sz));
                }
            }
        }
        let gt = Pose::new(
            Rotation3::exp(&Vector3::new(0.3, -0.5, 0.2)),
            Vector3::new(20.0, -10.0, 600.0),
        );
        let est = solve_epnp(&forward(&corners, &gt), &cam()).unwrap();
        assert!(geodesic_deg(&est.rotation, &gt.rotation) < 1e-6);
        assert!((est.translation - gt.translation).norm() < 1e-4);
    }

    #[test]
    fn four_coplanar_points_use_planar_branch() {
        let pts = vec![
            Vector3::new(-40.0, -30.0, 0.0),
            Vector3::new(45.0, -35.0, 0.0),
            Vector3::new(35.0, 40.0, 0.0),
            Vector3::new(-30.0, 25.0, 0.0),
        ];
        assert!(is_planar(&pts));
        let gt = Pose::new(Rotation3::rot_x_deg(25.0) * Rotation3::rot_y_deg(-15.0), Vector3::new(5.0, 8.0, 500.0));
        let est = solve_epnp(&forward(&pts, &gt), &cam()).unwrap();
        assert!(geodesic_deg(&est.rotation, &gt.rotation) < 1e-4);
        assert!((est.translation - gt.translation).norm() < 1e-2);
    }

    #[test]
    fn too_few_or_collinear_points_are_degenerate() {
        let gt = Pose::from_translation(Vector3::new(0.0, 0.0, 500.0));
        let three = forward(&[Vector3::zeros(), Vector3::x() * 10.0, Vector3::y() * 10.0], &gt);
        assert_eq!(solve_epnp(&three, &cam()), Err(PnpError::DegenerateConfiguration));
        let line: Vec<_> = (0..6).map(|i| Vector3::new(i as f64 * 10.0, 0.0, 0.0)).collect();
        assert_eq!(solve_epnp(&forward(&line, &gt), &cam()), Err(PnpError::DegenerateConfiguration));
    }

    #[test]
    fn minimal_non_planar_sets_are_solved() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut good = 0;
        for _ in 0..100 {
            let pts: Vec<_> = (0..4)
                .map(|_| Vector3::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)))
                .collect();
            let gt = Pose::new(
                Rotation3::exp(&Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))),
                Vector3::new(0.0, 0.0, rng.random_range(400.0..800.0)),
            );
            if let Ok(est) = solve_epnp(&forward(&pts, &gt), &cam()) {
                if geodesic_deg(&est.rotation, &gt.rotation) < 1e-3 {
                    good += 1;
                }
            }
        }
        // Four points admit spurious solutions occasionally; RANSAC copes.
        assert!(good >= 90, "{good}");
    }
}
