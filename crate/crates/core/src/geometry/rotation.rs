use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use super::GeometryError;

/// Tolerance used to accept a matrix as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// A proper rotation stored as an orthonormal 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation3 {
    m: Matrix3<f64>,
}

impl Default for Rotation3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation3 {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    /// Accepts `m` if it is orthonormal with unit determinant (within 1e-9).
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NotARotation);
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if ortho < ROTATION_TOLERANCE && (det - 1.0).abs() < ROTATION_TOLERANCE {
            Ok(Self { m })
        } else {
            Err(GeometryError::NotARotation)
        }
    }

    /// Nearest rotation to `m` in the Frobenius sense (polar decomposition).
    pub fn from_matrix_orthonormalized(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NotARotation);
        }
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(GeometryError::NotARotation),
        };
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Ok(Self { m: u * d * v_t })
    }

    /// Re-projects onto SO(3) only when drift exceeds the rotation tolerance.
    pub fn renormalized(self) -> Self {
        let ortho = (self.m.transpose() * self.m - Matrix3::identity()).norm();
        let det = self.m.determinant();
        if ortho < ROTATION_TOLERANCE && (det - 1.0).abs() < ROTATION_TOLERANCE {
            self
        } else {
            Self::from_matrix_orthonormalized(self.m).unwrap_or(self)
        }
    }

    /// Rodrigues formula: rotation by `|w|` radians about `w / |w|`.
    pub fn exp(w: &Vector3<f64>) -> Self {
        let theta2 = w.norm_squared();
        let k = skew(w);
        let (a, b) = if theta2 < 1e-12 {
            // Taylor expansions of sin(t)/t and (1 - cos(t))/t^2.
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
        } else {
            let theta = theta2.sqrt();
            (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
        };
        let m = Matrix3::identity() + k * a + k * k * b;
        Self { m }
    }

    /// Axis-angle vector (radians); inverse of [`Rotation3::exp`].
    pub fn log(&self) -> Vector3<f64> {
        let m = &self.m;
        let vee = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        let s = vee.norm();
        let c = m.trace() - 1.0;
        let theta = s.atan2(c);
        if theta < 1e-6 {
            return vee * 0.5;
        }
        if std::f64::consts::PI - theta > 1e-4 {
            return vee * (theta / s);
        }
        // Near pi the antisymmetric part vanishes; recover the axis from the
        // symmetric part instead.
        let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * (c * 0.5);
        let mut best = 0;
        for i in 1..3 {
            if sym[(i, i)] > sym[(best, best)] {
                best = i;
            }
        }
        let mut axis: Vector3<f64> = sym.column(best).into();
        axis /= axis.norm();
        if axis.dot(&vee) < 0.0 {
            axis = -axis;
        }
        axis * theta
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle_rad / n)))
    }

    pub fn rot_x_deg(deg: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), deg.to_radians())
    }

    pub fn rot_y_deg(deg: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), deg.to_radians())
    }

    pub fn rot_z_deg(deg: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), deg.to_radians())
    }

    /// Builds a rotation from a unit quaternion `(w, x, y, z)`; the input is
    /// normalized first.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        let m = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        );
        Self { m }.renormalized()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn inverse(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.m * v
    }

    /// Rotation angle of `self` in degrees, in `[0, 180]`.
    pub fn angle_deg(&self) -> f64 {
        rotation_angle(&self.m).to_degrees()
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self, GeometryError> {
        Self::from_matrix(Matrix3::from_row_slice(v))
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3 { m: self.m * rhs.m }.renormalized()
    }
}

impl Mul<Vector3<f64>> for Rotation3 {
    type Output = Vector3<f64>;

    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.m * rhs
    }
}

/// Cross-product matrix `[v]x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    let vee = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    vee.norm().atan2(m.trace() - 1.0)
}

/// Geodesic distance between two rotations, in degrees within `[0, 180]`.
pub fn geodesic_deg(a: &Rotation3, b: &Rotation3) -> f64 {
    rotation_angle(&(a.m.transpose() * b.m)).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Rotation3 {
        Rotation3::from_quaternion(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
    }

    #[test]
    fn geodesic_axis_angle_cases() {
        let i = Rotation3::identity();
        assert_eq!(geodesic_deg(&i, &i), 0.0);
        assert!((geodesic_deg(&i, &Rotation3::rot_z_deg(90.0)) - 90.0).abs() < 1e-12);
        assert!((geodesic_deg(&i, &Rotation3::rot_x_deg(180.0)) - 180.0).abs() < 1e-9);
    }

    #[test]
    fn geodesic_matches_trace_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            let c = ((a.matrix().transpose() * b.matrix()).trace() - 1.0) / 2.0;
            let brute = c.clamp(-1.0, 1.0).acos().to_degrees();
            // acos loses precision near 0 and 180 degrees.
            let tol = if !(1.0..=179.0).contains(&brute) { 1e-4 } else { 1e-6 };
            assert!((geodesic_deg(&a, &b) - brute).abs() < tol);
        }
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let w = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ).normalize()
                * rng.random_range(0.0..3.1);
            let r = Rotation3::exp(&w);
            assert!(Rotation3::from_matrix(*r.matrix()).is_ok());
            assert!((r.log() - w).norm() < 1e-9, "{w:?} vs {:?}", r.log());
        }
        let near_pi = Vector3::new(0.3, -0.4, 0.5).normalize() * (std::f64::consts::PI - 1e-7);
        let back = Rotation3::exp(&near_pi).log();
        assert!((back - near_pi).norm() < 1e-6);
    }

    #[test]
    fn rejects_non_rotations() {
        assert!(Rotation3::from_matrix(Matrix3::identity() * 2.0).is_err());
        let mut reflect = Matrix3::identity();
        reflect[(2, 2)] = -1.0;
        assert!(Rotation3::from_matrix(reflect).is_err());
        let fixed = Rotation3::from_matrix_orthonormalized(Matrix3::identity() * 2.0).unwrap();
        assert_eq!(*fixed.matrix(), Matrix3::identity());
    }
}
