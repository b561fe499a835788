//! Iterative pose refinement: render or retrieve a template at the current
//! estimate, query a flow provider, fit a pose to the resulting weighted
//! correspondences, repeat.

mod provider;

pub use provider::{FlowProvider, ProviderCapabilities, ProviderError};
pub(crate) use provider::check_output;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::correspondence::{build_correspondences, subsample, Corr2D3D, CorrespondenceError, Template, DEFAULT_MAX_CORRESPONDENCES, DEFAULT_TAU_V};
use crate::geometry::{make_crop_camera, projected_bbox, BBox2, CameraIntrinsics, CropCamera, GeometryError, Pose, DEFAULT_CROP_PAD, DEFAULT_CROP_SIZE};
use crate::onboarding::{render_template, ObjectModel, OnboardingError, TemplateSet, DEFAULT_SPLAT_RADIUS};
use crate::pnp::{ransac_pnp, PnpError, RansacConfig};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("initial pose puts the model behind the camera")]
    InitializationBehindCamera,
    #[error("first refinement iteration failed: {0}")]
    AllIterationsFailed(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("template is {template:?} px, crop is {crop:?} px")]
    TemplateSizeMismatch { template: (u32, u32), crop: (u32, u32) },
    #[error("no hypotheses")]
    EmptyInput,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Correspondence(#[from] CorrespondenceError),
}

/// Threshold overrides for one iteration; `None` keeps the base value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IterationOverride {
    pub tau_v: Option<f64>,
    pub reproj_threshold_px: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub iterations: usize,
    pub tau_v: f64,
    pub ransac: RansacConfig,
    /// Render the template at the current estimate; otherwise use the
    /// nearest pre-rendered template.
    pub online_rendering: bool,
    pub crop_size: u32,
    pub crop_pad: f64,
    pub max_correspondences: usize,
    pub splat_radius: f64,
    /// Seeds correspondence subsampling and, mixed with the iteration
    /// index, RANSAC.
    pub seed: u64,
    /// Entry `i` applies to iteration `i`.
    pub per_iteration: Vec<IterationOverride>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            tau_v: DEFAULT_TAU_V,
            ransac: RansacConfig::default(),
            online_rendering: true,
            crop_size: DEFAULT_CROP_SIZE,
            crop_pad: DEFAULT_CROP_PAD,
            max_correspondences: DEFAULT_MAX_CORRESPONDENCES,
            splat_radius: DEFAULT_SPLAT_RADIUS,
            seed: 0,
            per_iteration: Vec::new(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if self.iterations < 1 {
            return Err(RefineError::InvalidConfig("iterations must be >= 1"));
        }
        if self.max_correspondences < 4 {
            return Err(RefineError::InvalidConfig("max_correspondences must be >= 4"));
        }
        self.ransac.validate().map_err(|_| RefineError::InvalidConfig("invalid RANSAC settings"))?;
        Ok(())
    }

    fn tau_v_at(&self, i: usize) -> f64 {
        self.per_iteration.get(i).and_then(|o| o.tau_v).unwrap_or(self.tau_v)
    }

    fn ransac_at(&self, i: usize) -> RansacConfig {
        let mut r = self.ransac;
        if let Some(t) = self.per_iteration.get(i).and_then(|o| o.reproj_threshold_px) {
            r.reproj_threshold_px = t;
        }
        r.seed = crate::oracle::derive_seed(&[self.seed, self.ransac.seed, i as u64]);
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub pose: Pose,
    pub quality: f64,
    pub inlier_count: usize,
    pub correspondence_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineOutcome {
    pub pose: Pose,
    pub quality: f64,
    pub rms_reproj_px: f64,
    /// One record per successful iteration.
    pub per_iteration: Vec<IterationRecord>,
    /// Inliers of the last successful fit, in crop pixels of `final_crop`.
    pub final_inliers: Vec<Corr2D3D>,
    pub final_crop: CropCamera,
}

/// Why a single iteration produced no pose; fatal only on the first one.
enum StepFailure {
    Pnp(PnpError),
    Render(OnboardingError),
    Crop(GeometryError),
    NotVisible,
}

impl std::fmt::Display for StepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepFailure::Pnp(e) => write!(f, "{e}"),
            StepFailure::Render(e) => write!(f, "{e}"),
            StepFailure::Crop(e) => write!(f, "{e}"),
            StepFailure::NotVisible => write!(f, "model projects outside the image"),
        }
    }
}

/// Result of one registration step in the crop of the current estimate.
#[derive(Clone, Debug)]
pub struct Registration {
    pub pose: Pose,
    pub quality: f64,
    pub rms_reproj_px: f64,
    /// All correspondences the fit saw, in crop pixels.
    pub correspondences: Vec<Corr2D3D>,
    pub inliers: Vec<Corr2D3D>,
    pub crop: CropCamera,
}

/// Refines poses of one model against one flow provider.
pub struct Refiner<'a, P: FlowProvider> {
    pub model: &'a ObjectModel,
    pub provider: P,
    /// Required when `cfg.online_rendering` is false.
    pub templates: Option<&'a TemplateSet>,
    pub cfg: RefineConfig,
}

impl<'a, P: FlowProvider> Refiner<'a, P> {
    pub fn new(model: &'a ObjectModel, provider: P, cfg: RefineConfig) -> Self {
        Self {
            model,
            provider,
            templates: None,
            cfg,
        }
    }

    pub fn with_templates(mut self, templates: &'a TemplateSet) -> Self {
        self.templates = Some(templates);
        self
    }

    fn in_front(&self, pose: &Pose) -> bool {
        let (lo, hi) = self.model.bounds();
        pose.is_finite() && pose.transform(&((lo + hi) / 2.0)).z > 0.0
    }

    fn crop_for(&self, pose: &Pose, bbox: Option<&BBox2>, source: &CameraIntrinsics) -> Result<CropCamera, StepFailure> {
        let derived;
        let b = match bbox {
            Some(b) => b,
            None => {
                derived = projected_bbox(self.model.points().iter(), pose, source).ok_or(StepFailure::NotVisible)?;
                &derived
            }
        };
        make_crop_camera(b, source, self.cfg.crop_size, self.cfg.crop_pad).map_err(StepFailure::Crop)
    }

    fn template_for(&self, pose_in_crop: &Pose, crop: &CropCamera) -> Result<Result<Template, StepFailure>, RefineError> {
        if self.cfg.online_rendering {
            return match render_template(self.model, pose_in_crop, &crop.intrinsics, self.cfg.splat_radius) {
                Ok(t) => Ok(Ok(t)),
                Err(OnboardingError::EmptyRender) => Ok(Err(StepFailure::Render(OnboardingError::EmptyRender))),
                Err(_) => Err(RefineError::InvalidConfig("splat radius must be finite and non-negative")),
            };
        }
        let set = self.templates.ok_or(RefineError::InvalidConfig("offline rendering needs a template set"))?;
        let (i, _) = set.nearest(&pose_in_crop.rotation);
        Ok(Ok(set.templates()[i].clone()))
    }

    /// One iteration: crop (given box or the projected model), template,
    /// flow, correspondences, RANSAC. `Ok(Err(_))` is a recoverable failure.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        pose: &Pose,
        bbox: Option<&BBox2>,
        fixed_crop: Option<&CropCamera>,
        source: &CameraIntrinsics,
        frame_id: usize,
        iteration: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Result<Registration, StepFailure>, RefineError> {
        let (crop, tpl) = match self.provider.recorded_view(frame_id) {
            Some(v) => v,
            None => {
                let crop = match fixed_crop {
                    Some(c) => *c,
                    None => match self.crop_for(pose, bbox, source) {
                        Ok(c) => c,
                        Err(f) => return Ok(Err(f)),
                    },
                };
                let tpl = match self.template_for(&crop.pose_to_crop(pose), &crop)? {
                    Ok(t) => t,
                    Err(f) => return Ok(Err(f)),
                };
                (crop, tpl)
            }
        };
        let dims = (tpl.width(), tpl.height());
        let crop_dims = (crop.intrinsics.width, crop.intrinsics.height);
        if dims != crop_dims {
            return Err(RefineError::TemplateSizeMismatch { template: dims, crop: crop_dims });
        }
        let (flow, vis) = self.provider.estimate(&tpl, &crop, frame_id)?;
        check_output(&tpl, &flow, &vis)?;
        let built = build_correspondences(&flow, &vis, &tpl, self.cfg.tau_v_at(iteration))?;
        let corrs = subsample(built.correspondences, self.cfg.max_correspondences, rng);
        match ransac_pnp(&corrs, &crop.intrinsics, &self.cfg.ransac_at(iteration)) {
            Ok(fit) => {
                let inliers = fit.inliers.iter().map(|&i| corrs[i]).collect();
                Ok(Ok(Registration {
                    pose: crop.pose_from_crop(&fit.pose),
                    quality: fit.quality,
                    rms_reproj_px: fit.rms_reproj_px,
                    correspondences: corrs,
                    inliers,
                    crop,
                }))
            }
            Err(e) => Ok(Err(StepFailure::Pnp(e))),
        }
    }

    /// A single registration at `pose` for `frame_id`. The crop is `crop`
    /// when given, else taken around the projected model; a recording
    /// overrides both.
    pub fn register(&self, pose: &Pose, crop: Option<&CropCamera>, source: &CameraIntrinsics, frame_id: usize) -> Result<Registration, RefineError> {
        self.cfg.validate()?;
        if !self.in_front(pose) {
            return Err(RefineError::InitializationBehindCamera);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::oracle::derive_seed(&[self.cfg.seed, frame_id as u64]));
        self.step(pose, None, crop, source, frame_id, 0, &mut rng)?
            .map_err(|f| RefineError::AllIterationsFailed(f.to_string()))
    }

    /// Crop around the model projected under `pose`.
    pub fn crop_around(&self, pose: &Pose, source: &CameraIntrinsics) -> Option<CropCamera> {
        self.crop_for(pose, None, source).ok()
    }

    /// Runs up to `cfg.iterations` iterations from `initial`. `bbox`, when
    /// given, crops the first iteration; later ones crop around the projected
    /// model. Stops early, keeping the last good estimate, when an iteration
    /// fails after the first.
    pub fn refine(&self, initial: &Pose, bbox: Option<&BBox2>, source: &CameraIntrinsics, frame_id: usize) -> Result<RefineOutcome, RefineError> {
        self.cfg.validate()?;
        if !self.in_front(initial) {
            return Err(RefineError::InitializationBehindCamera);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::oracle::derive_seed(&[self.cfg.seed, frame_id as u64]));
        let mut pose = *initial;
        let mut last: Option<Registration> = None;
        let mut per_iteration = Vec::with_capacity(self.cfg.iterations);
        for it in 0..self.cfg.iterations {
            let b = if it == 0 { bbox } else { None };
            let reg = match self.step(&pose, b, None, source, frame_id, it, &mut rng)? {
                Ok(r) => r,
                Err(f) if it == 0 => return Err(RefineError::AllIterationsFailed(f.to_string())),
                Err(_) => break,
            };
            if !self.in_front(&reg.pose) {
                if it == 0 {
                    return Err(RefineError::AllIterationsFailed("fit placed the model behind the camera".into()));
                }
                break;
            }
            pose = reg.pose;
            per_iteration.push(IterationRecord {
                pose,
                quality: reg.quality,
                inlier_count: reg.inliers.len(),
                correspondence_count: reg.correspondences.len(),
            });
            last = Some(reg);
        }
        let reg = last.expect("first iteration succeeded");
        Ok(RefineOutcome {
            pose: reg.pose,
            quality: reg.quality,
            rms_reproj_px: reg.rms_reproj_px,
            per_iteration,
            final_inliers: reg.inliers,
            final_crop: reg.crop,
        })
    }

    /// Refines every hypothesis; in parallel when the provider allows it.
    /// Results keep the input order.
    pub fn refine_hypotheses(
        &self,
        initials: &[(Pose, Option<BBox2>)],
        source: &CameraIntrinsics,
        frame_id: usize,
    ) -> Vec<Result<RefineOutcome, RefineError>> {
        let run = |(p, b): &(Pose, Option<BBox2>)| self.refine(p, b.as_ref(), source, frame_id);
        if self.provider.capabilities().concurrent {
            initials.par_iter().map(run).collect()
        } else {
            initials.iter().map(run).collect()
        }
    }
}

/// Refines `initial` with a fresh `Refiner` using online rendering or no
/// template set.
pub fn refine_pose<P: FlowProvider>(
    initial: &Pose,
    bbox: Option<&BBox2>,
    source: &CameraIntrinsics,
    model: &ObjectModel,
    provider: P,
    cfg: &RefineConfig,
    frame_id: usize,
) -> Result<RefineOutcome, RefineError> {
    Refiner::new(model, provider, cfg.clone()).refine(initial, bbox, source, frame_id)
}

/// Index of the outcome with the highest quality; ties go to the lower final
/// RMS reprojection error, then to the lower index.
pub fn select_best(outcomes: &[RefineOutcome]) -> Result<usize, RefineError> {
    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let c = &outcomes[b];
                o.quality > c.quality || (o.quality == c.quality && o.rms_reproj_px < c.rms_reproj_px)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best.ok_or(RefineError::EmptyInput)
}

#[cfg(test)]
mod tests {
    use nalgebra::Vector3;

    use super::*;
    use crate::geometry::{geodesic_deg, Rotation3};
    use crate::oracle::{generate_sequence, Keyframe, NoiseSpec, OracleM2f, OracleSequence, SceneSpec};

    fn scene() -> OracleSequence {
        generate_sequence(&SceneSpec {
            points: 1500,
            keyframes: vec![Keyframe::new(Vector3::new(20.0, -30.0, 15.0), Vector3::new(15.0, -10.0, 600.0))],
            steps: vec![],
            ..SceneSpec::default()
        })
        .unwrap()
    }

    fn errors(a: &Pose, b: &Pose) -> (f64, f64) {
        (geodesic_deg(&a.rotation, &b.rotation), (a.translation - b.translation).norm())
    }

    fn perturbed(gt: &Pose) -> Pose {
        let r = Rotation3::from_axis_angle(&Vector3::new(1.0, 2.0, -1.0).normalize(), 15f64.to_radians()) * gt.rotation;
        Pose::new(r, gt.translation * 1.1)
    }

    fn outcome(q: f64, rms: f64) -> RefineOutcome {
        let crop = make_crop_camera(&BBox2::new(0.0, 0.0, 10.0, 10.0), &crate::oracle::default_source_camera(), 32, 1.2).unwrap();
        RefineOutcome {
            pose: Pose::identity(),
            quality: q,
            rms_reproj_px: rms,
            per_iteration: Vec::new(),
            final_inliers: Vec::new(),
            final_crop: crop,
        }
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let seq = scene();
        let gt = seq.frames[0].gt_pose;
        let out = refine_pose(&gt, None, &seq.camera, &seq.model, OracleM2f::exact(&seq), &RefineConfig::default(), 0).unwrap();
        let (r, t) = errors(&out.pose, &gt);
        assert!(r < 1e-6 && t < 1e-3, "{r} {t}");
        assert_eq!(out.quality, 1.0);
        assert_eq!(out.per_iteration.len(), 5);
    }

    #[test]
    fn converges_from_a_perturbed_start() {
        let seq = scene();
        let gt = seq.frames[0].gt_pose;
        let out = refine_pose(&perturbed(&gt), None, &seq.camera, &seq.model, OracleM2f::exact(&seq), &RefineConfig::default(), 0).unwrap();
        let (r, t) = errors(&out.pose, &gt);
        assert!(r < 0.05 && t < 0.5, "{r} {t}");
    }

    #[test]
    fn degraded_flow_lowers_quality() {
        let seq = scene();
        let gt = seq.frames[0].gt_pose;
        let init = perturbed(&gt);
        let cfg = RefineConfig::default();
        let clean = refine_pose(&init, None, &seq.camera, &seq.model, OracleM2f::exact(&seq), &cfg, 0).unwrap();
        let noisy_provider = OracleM2f {
            sequence: &seq,
            noise: NoiseSpec {
                sigma_px: 1.0,
                outlier_fraction: 0.2,
                ..NoiseSpec::default()
            },
            seed: 5,
        };
        let noisy = refine_pose(&init, None, &seq.camera, &seq.model, noisy_provider, &cfg, 0).unwrap();
        assert!(noisy.quality < clean.quality);
        let (r, t) = errors(&noisy.pose, &gt);
        assert!(r < 1.0 && t < 5.0, "{r} {t}");
    }

    #[test]
    fn offline_templates_also_converge() {
        let seq = scene();
        let gt = seq.frames[0].gt_pose;
        let cam = crate::onboarding::default_template_camera(DEFAULT_CROP_SIZE);
        let set = crate::onboarding::build_template_set(&seq.model, 200, &cam, None).unwrap();
        let cfg = RefineConfig {
            online_rendering: false,
            ..RefineConfig::default()
        };
        let refiner = Refiner::new(&seq.model, OracleM2f::exact(&seq), cfg).with_templates(&set);
        let out = refiner.refine(&perturbed(&gt), None, &seq.camera, 0).unwrap();
        let (r, t) = errors(&out.pose, &gt);
        assert!(r < 0.05 && t < 0.5, "{r} {t}");
    }

    #[test]
    fn behind_camera_and_config_errors() {
        let seq = scene();
        let behind = Pose::new(Rotation3::identity(), Vector3::new(0.0, 0.0, -600.0));
        let r = refine_pose(&behind, None, &seq.camera, &seq.model, OracleM2f::exact(&seq), &RefineConfig::default(), 0);
        assert!(matches!(r, Err(RefineError::InitializationBehindCamera)));
        let cfg = RefineConfig {
            iterations: 0,
            ..RefineConfig::default()
        };
        let r = refine_pose(&seq.frames[0].gt_pose, None, &seq.camera, &seq.model, OracleM2f::exact(&seq), &cfg, 0);
        assert!(matches!(r, Err(RefineError::InvalidConfig(_))));
    }

    #[test]
    fn blank_flow_fails_the_first_iteration() {
        let seq = scene();
        let p = crate::oracle::FaultWindow::new(OracleM2f::exact(&seq), 0..1);
        let r = refine_pose(&seq.frames[0].gt_pose, None, &seq.camera, &seq.model, p, &RefineConfig::default(), 0);
        assert!(matches!(r, Err(RefineError::AllIterationsFailed(_))));
    }

    #[test]
    fn selection_rules() {
        assert!(matches!(select_best(&[]), Err(RefineError::EmptyInput)));
        assert_eq!(select_best(&[outcome(0.2, 1.0)]).unwrap(), 0);
        assert_eq!(select_best(&[outcome(0.4, 1.0), outcome(0.9, 1.0), outcome(0.7, 1.0)]).unwrap(), 1);
        assert_eq!(select_best(&[outcome(0.9, 2.0), outcome(0.9, 1.0)]).unwrap(), 1);
        assert_eq!(select_best(&[outcome(0.9, 1.0), outcome(0.9, 1.0)]).unwrap(), 0);
    }
}
