use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{refine_lm, reprojection_error, solve_epnp, PnpError};
use crate::correspondence::Corr2D3D;
use crate::geometry::{CameraIntrinsics, Pose};

/// Hypotheses are drawn sequentially and scored in parallel batches of this
/// size; reduction happens in iteration order.
const BATCH: usize = 32;
const COLLINEAR_SINE: f64 = 1e-6;
const MIN_PIXEL_SEPARATION: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier threshold on reprojection error, in pixels.
    pub reproj_threshold_px: f64,
    pub min_inliers: usize,
    pub confidence_early_exit: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 400,
            reproj_threshold_px: 4.0,
            min_inliers: 6,
            confidence_early_exit: 0.999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PnpError> {
        if self.max_iterations < 1 {
            return Err(PnpError::InvalidConfig("max_iterations must be >= 1"));
        }
        if !(self.reproj_threshold_px > 0.0) {
            return Err(PnpError::InvalidConfig("reprojection threshold must be positive"));
        }
        if !(self.confidence_early_exit > 0.0 && self.confidence_early_exit <= 1.0) {
            return Err(PnpError::InvalidConfig("confidence must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub pose: Pose,
    /// Indices into the input correspondences.
    pub inliers: Vec<usize>,
    /// Inlier weight over total weight.
    pub quality: f64,
    pub rms_reproj_px: f64,
    /// RANSAC iterations consumed, degenerate draws included.
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
struct Score {
    weight: f64,
    count: usize,
    rms: f64,
}

impl Score {
    fn beats(&self, other: &Score) -> bool {
        self.weight > other.weight || (self.weight == other.weight && self.rms < other.rms)
    }
}

fn score(corrs: &[Corr2D3D], pose: &Pose, cam: &CameraIntrinsics, tau: f64) -> Score {
    let mut s = Score {
        weight: 0.0,
        count: 0,
        rms: 0.0,
    };
    let mut sq = 0.0;
    for c in corrs {
        let e = reprojection_error(c, pose, cam);
        if e <= tau {
            s.weight += c.weight;
            s.count += 1;
            sq += e * e;
        }
    }
    s.rms = if s.count > 0 { (sq / s.count as f64).sqrt() } else { f64::INFINITY };
    s
}

/// Collects inlier indices together with their weight and RMS error.
pub fn inliers_of(corrs: &[Corr2D3D], pose: &Pose, cam: &CameraIntrinsics, tau: f64) -> (Vec<usize>, f64, f64) {
    let mut idx = Vec::new();
    let mut w = 0.0;
    let mut sq = 0.0;
    for (i, c) in corrs.iter().enumerate() {
        let e = reprojection_error(c, pose, cam);
        if e <= tau {
            idx.push(i);
            w += c.weight;
            sq += e * e;
        }
    }
    let rms = if idx.is_empty() { f64::INFINITY } else { (sq / idx.len() as f64).sqrt() };
    (idx, w, rms)
}

fn degenerate_sample(corrs: &[Corr2D3D], idx: &[usize; 4]) -> bool {
    for a in 0..4 {
        for b in a + 1..4 {
            if (corrs[idx[a]].pixel - corrs[idx[b]].pixel).norm() < MIN_PIXEL_SEPARATION {
                return true;
            }
            for c in b + 1..4 {
                let u = corrs[idx[b]].point - corrs[idx[a]].point;
                let v = corrs[idx[c]].point - corrs[idx[a]].point;
                let denom = u.norm() * v.norm();
                if denom == 0.0 || u.cross(&v).norm() / denom < COLLINEAR_SINE {
                    return true;
                }
            }
        }
    }
    false
}

/// Iterations needed to draw an all-inlier minimal sample with the given
/// confidence when a fraction `inlier_ratio` of the data are inliers.
fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let p_good = inlier_ratio.powi(4);
    if p_good >= 1.0 {
        return 1.0;
    }
    if p_good <= 0.0 || confidence >= 1.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - p_good).ln()
}

/// EPnP inside RANSAC over uniformly drawn minimal sets of four, scored by
/// inlier weight, followed by Levenberg-Marquardt on the winning inliers.
/// Output depends only on the inputs and `cfg.seed`.
pub fn ransac_pnp(corrs: &[Corr2D3D], cam: &CameraIntrinsics, cfg: &RansacConfig) -> Result<FitResult, PnpError> {
    cfg.validate()?;
    if corrs.len() < 4 {
        return Err(PnpError::TooFewCorrespondences(corrs.len()));
    }
    let n = corrs.len();
    let total_weight: f64 = corrs.iter().map(|c| c.weight).sum();
    if !(total_weight > 0.0) {
        return Err(PnpError::NoConsensus { best_inliers: 0 });
    }
    let tau = cfg.reproj_threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best: Option<(Score, Pose)> = None;
    let mut iterations = 0;
    let mut needed = f64::INFINITY;
    'outer: while iterations < cfg.max_iterations {
        let batch = BATCH.min(cfg.max_iterations - iterations);
        let samples: Vec<Option<[usize; 4]>> = (0..batch)
            .map(|_| {
                let v = sample(&mut rng, n, 4);
                let idx = [v.index(0), v.index(1), v.index(2), v.index(3)];
                (!degenerate_sample(corrs, &idx)).then_some(idx)
            })
            .collect();
        let scored: Vec<Option<(Score, Pose)>> = samples
            .par_iter()
            .map(|s| {
                let idx = (*s)?;
                let minimal = [corrs[idx[0]], corrs[idx[1]], corrs[idx[2]], corrs[idx[3]]].map(|c| Corr2D3D { weight: 1.0, ..c });
                let pose = solve_epnp(&minimal, cam).ok()?;
                Some((score(corrs, &pose, cam, tau), pose))
            })
            .collect();
        for hypothesis in scored {
            iterations += 1;
            if let Some((s, pose)) = hypothesis {
                if s.count > 0 && best.as_ref().is_none_or(|(b, _)| s.beats(b)) {
                    needed = required_iterations(s.count as f64 / n as f64, cfg.confidence_early_exit);
                    best = Some((s, pose));
                }
            }
            if iterations as f64 >= needed {
                break 'outer;
            }
        }
    }

    let Some((best_score, hypothesis)) = best else {
        return Err(PnpError::NoConsensus { best_inliers: 0 });
    };
    if best_score.count < cfg.min_inliers.max(4) {
        return Err(PnpError::NoConsensus {
            best_inliers: best_score.count,
        });
    }

    // Polish on the consensus set; re-derive inliers under the polished pose
    // and polish once more if the set moved. The threshold count can drop
    // when a loose hypothesis is pulled onto the true minimum.
    let (mut inliers, mut weight, mut rms) = inliers_of(corrs, &hypothesis, cam, tau);
    let mut pose = hypothesis;
    for _ in 0..2 {
        let subset: Vec<Corr2D3D> = inliers.iter().map(|&i| corrs[i]).collect();
        let Ok(polished) = refine_lm(&pose, &subset, cam) else { break };
        let (idx, w, r) = inliers_of(corrs, &polished, cam, tau);
        if idx.len() < cfg.min_inliers.max(4) {
            break;
        }
        let unchanged = idx == inliers;
        pose = polished;
        inliers = idx;
        weight = w;
        rms = r;
        if unchanged {
            break;
        }
    }

    Ok(FitResult {
        pose,
        inliers,
        quality: (weight / total_weight).clamp(0.0, 1.0),
        rms_reproj_px: rms,
        iterations,
    })
}

/// Quality of `pose` on `corrs`: inlier weight over total weight.
pub fn pose_quality(corrs: &[Corr2D3D], pose: &Pose, cam: &CameraIntrinsics, tau: f64) -> f64 {
    let total: f64 = corrs.iter().map(|c| c.weight).sum();
    if !(total > 0.0) {
        return 0.0;
    }
    let (_, w, _) = inliers_of(corrs, pose, cam, tau);
    (w / total).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use nalgebra::{Vector2, Vector3};
    use rand::Rng;

    use super::*;
    use crate::geometry::{geodesic_deg, project, Rotation3};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 140.0, 140.0, 280, 280).unwrap()
    }

    fn gt() -> Pose {
        Pose::new(Rotation3::exp(&Vector3::new(0.4, -0.2, 0.3)), Vector3::new(5.0, -8.0, 700.0))
    }

    fn exact(rng: &mut impl Rng, n: usize) -> Vec<Corr2D3D> {
        (0..n)
            .map(|_| {
                let x = Vector3::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
                Corr2D3D::new(project(&x, &gt(), &cam()).unwrap(), x, 1.0)
            })
            .collect()
    }

    #[test]
    fn outlier_free_gives_full_quality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corrs = exact(&mut rng, 200);
        let fit = ransac_pnp(&corrs, &cam(), &RansacConfig::default()).unwrap();
        assert_eq!(fit.quality, 1.0);
        assert_eq!(fit.inliers.len(), 200);
        assert!(geodesic_deg(&fit.pose.rotation, &gt().rotation) < 1e-6);
        // Early exit kicks in right away without outliers.
        assert!(fit.iterations < 5);
    }

    #[test]
    fn quality_tracks_planted_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut corrs = exact(&mut rng, 200);
        for c in corrs.iter_mut().take(60) {
            c.pixel = Vector2::new(rng.random_range(0.0..280.0), rng.random_range(0.0..280.0));
        }
        let fit = ransac_pnp(&corrs, &cam(), &RansacConfig::default()).unwrap();
        assert!(geodesic_deg(&fit.pose.rotation, &gt().rotation) < 0.1);
        assert!((fit.pose.translation - gt().translation).norm() < 1.0);
        assert!((0.65..=0.75).contains(&fit.quality), "{}", fit.quality);
    }

    #[test]
    fn weighted_quality_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut corrs = exact(&mut rng, 200);
        for c in corrs.iter_mut().take(100) {
            c.pixel = Vector2::new(rng.random_range(0.0..280.0), rng.random_range(0.0..280.0));
            c.weight = 0.1;
        }
        let fit = ransac_pnp(&corrs, &cam(), &RansacConfig::default()).unwrap();
        assert!((fit.quality - 1.0 / 1.1).abs() < 0.02, "{}", fit.quality);
    }

    #[test]
    fn errors_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let corrs = exact(&mut rng, 3);
        assert_eq!(ransac_pnp(&corrs, &cam(), &RansacConfig::default()), Err(PnpError::TooFewCorrespondences(3)));

        let noise: Vec<_> = (0..50)
            .map(|_| {
                Corr2D3D::new(
                    Vector2::new(rng.random_range(0.0..280.0), rng.random_range(0.0..280.0)),
                    Vector3::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)),
                    1.0,
                )
            })
            .collect();
        let cfg = RansacConfig {
            min_inliers: 20,
            ..RansacConfig::default()
        };
        assert!(matches!(ransac_pnp(&noise, &cam(), &cfg), Err(PnpError::NoConsensus { .. })));

        let mut corrs = exact(&mut rng, 150);
        for c in corrs.iter_mut().take(50) {
            c.pixel = Vector2::new(rng.random_range(0.0..280.0), rng.random_range(0.0..280.0));
        }
        let a = ransac_pnp(&corrs, &cam(), &RansacConfig::default()).unwrap();
        let b = ransac_pnp(&corrs, &cam(), &RansacConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn early_exit_bound() {
        assert_eq!(required_iterations(1.0, 0.999), 1.0);
        let k = required_iterations(0.5, 0.99);
        assert!((k - (0.01f64.ln() / (1.0 - 0.0625f64).ln())).abs() < 1e-12);
        assert!(required_iterations(0.0, 0.99).is_infinite());
    }
}
