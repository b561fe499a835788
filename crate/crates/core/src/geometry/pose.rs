use std::ops::Mul;

use nalgebra::Vector3;

use super::rotation::{geodesic_deg, Rotation3};

/// Rigid transform from the model frame to the camera frame. Translation is
/// in millimeters.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation3::identity(), t)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            rotation: r_inv,
            translation: -r_inv.apply(&self.translation),
        }
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(x) + self.translation
    }

    /// Left-multiplied increment `(exp(dw), dt) ∘ self`.
    pub fn perturbed_left(&self, dw: &Vector3<f64>, dt: &Vector3<f64>) -> Pose {
        let delta = Pose::new(Rotation3::exp(dw), *dt);
        delta.compose(self)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.matrix().iter().all(|v| v.is_finite())
    }

    /// Rotation (degrees) and translation (mm) distance to `other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        (
            geodesic_deg(&self.rotation, &other.rotation),
            (self.translation - other.translation).norm(),
        )
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn inverse(p: &Pose) -> Pose {
    p.inverse()
}
