//! Keyframe tracking: correspondences from the last model-to-frame
//! registration are carried from frame to frame by optical flow; a fresh
//! registration is triggered when too few of them still agree with a pose.

mod provider;

pub use provider::FrameFlowProvider;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::correspondence::{mix, propagate, subsample, Corr2D3D, DEFAULT_MAX_CORRESPONDENCES};
use crate::geometry::{CameraIntrinsics, CropCamera, Pose};
use crate::pnp::{inliers_of, refine_lm, solve_epnp, RansacConfig};
use crate::refine::{FlowProvider, ProviderError, RefineConfig, RefineError, Refiner, Registration};

pub const DEFAULT_TAU_I: f64 = 0.8;
pub const DEFAULT_MIX_RATIO: f64 = 2.0;
pub const DEFAULT_REACQUIRE_HORIZON: usize = 30;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("tracker initialization failed: {0}")]
    InitializationFailed(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("empty sequence")]
    EmptySequence,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Refine(RefineError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    /// Minimum ratio of agreeing propagated correspondences to the keyframe
    /// inlier count for the propagated pose to be accepted.
    pub tau_i: f64,
    /// Fresh correspondences mixed in per propagated one on re-registration.
    pub mix_ratio: f64,
    pub max_correspondences: usize,
    /// Its reprojection threshold is the inlier threshold of both paths.
    pub ransac: RansacConfig,
    /// Settings of the single-iteration model-to-frame registration.
    pub refine: RefineConfig,
    /// With `false` every frame is registered against the model and nothing
    /// is propagated.
    pub propagation: bool,
    /// Consecutive lost frames after which re-acquisition stops.
    pub reacquire_horizon: usize,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            tau_i: DEFAULT_TAU_I,
            mix_ratio: DEFAULT_MIX_RATIO,
            max_correspondences: DEFAULT_MAX_CORRESPONDENCES,
            ransac: RansacConfig::default(),
            refine: RefineConfig {
                iterations: 1,
                ..RefineConfig::default()
            },
            propagation: true,
            reacquire_horizon: DEFAULT_REACQUIRE_HORIZON,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        if !(self.tau_i > 0.0 && self.tau_i <= 1.0) {
            return Err(TrackingError::InvalidConfig("tau_i must lie in (0, 1]"));
        }
        if !(self.mix_ratio >= 0.0 && self.mix_ratio.is_finite()) {
            return Err(TrackingError::InvalidConfig("mix ratio must be finite and >= 0"));
        }
        if self.max_correspondences < 4 {
            return Err(TrackingError::InvalidConfig("max_correspondences must be >= 4"));
        }
        self.ransac.validate().map_err(|_| TrackingError::InvalidConfig("invalid RANSAC settings"))?;
        self.refine.validate().map_err(|_| TrackingError::InvalidConfig("invalid registration settings"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackerState {
    pub pose: Pose,
    /// Inlier count at the last model-to-frame registration.
    pub keyframe_inlier_count: usize,
    /// Correspondences carried to the next frame, in pixels of `crop`.
    pub live_inliers: Vec<Corr2D3D>,
    pub frame_index: usize,
    pub lost: bool,
    pub crop: CropCamera,
    /// Consecutive frames spent lost.
    pub lost_frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameDecision {
    pub frame_index: usize,
    pub used_model_registration: bool,
    /// Agreeing propagated correspondences over the keyframe inlier count.
    pub inlier_ratio_bc: f64,
    /// Last known pose while lost.
    pub pose: Pose,
    pub quality: f64,
    pub dropped_in_propagation: usize,
    pub lost: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub decisions: Vec<FrameDecision>,
    /// First frame after which re-acquisition was abandoned.
    pub terminal_loss_at: Option<usize>,
}

/// A pose fitted by EPnP on all correspondences, polished by LM on its
/// inliers, with inliers recounted.
struct PlainFit {
    pose: Pose,
    inliers: Vec<Corr2D3D>,
    quality: f64,
}

fn plain_fit(corrs: &[Corr2D3D], cam: &CameraIntrinsics, tau: f64) -> Option<(Pose, Vec<usize>)> {
    if corrs.len() < 4 {
        return None;
    }
    let pose = solve_epnp(corrs, cam).ok()?;
    let (idx, _, _) = inliers_of(corrs, &pose, cam, tau);
    Some((pose, idx))
}

fn polish(corrs: &[Corr2D3D], pose: &Pose, idx: &[usize], cam: &CameraIntrinsics, tau: f64) -> Option<PlainFit> {
    if idx.len() < 4 {
        return None;
    }
    let subset: Vec<Corr2D3D> = idx.iter().map(|&i| corrs[i]).collect();
    let polished = refine_lm(pose, &subset, cam).unwrap_or(*pose);
    let (polished_idx, _, _) = inliers_of(corrs, &polished, cam, tau);
    let pose = if polished_idx.len() >= idx.len() { polished } else { *pose };
    let (idx, weight, _) = inliers_of(corrs, &pose, cam, tau);
    if idx.len() < 4 {
        return None;
    }
    let total: f64 = corrs.iter().map(|c| c.weight).sum();
    Some(PlainFit {
        pose,
        inliers: idx.iter().map(|&i| corrs[i]).collect(),
        quality: if total > 0.0 { (weight / total).clamp(0.0, 1.0) } else { 0.0 },
    })
}

/// Tracks one object through a sequence.
pub struct Tracker<'a, M: FlowProvider, F: FrameFlowProvider> {
    refiner: Refiner<'a, M>,
    f2f: F,
    source: CameraIntrinsics,
    cfg: TrackerConfig,
}

impl<'a, M: FlowProvider, F: FrameFlowProvider> Tracker<'a, M, F> {
    pub fn new(
        model: &'a crate::onboarding::ObjectModel,
        m2f: M,
        f2f: F,
        source: CameraIntrinsics,
        cfg: TrackerConfig,
    ) -> Result<Self, TrackingError> {
        cfg.validate()?;
        let mut refine = cfg.refine.clone();
        refine.seed = crate::oracle::derive_seed(&[cfg.seed, refine.seed]);
        Ok(Self {
            refiner: Refiner::new(model, m2f, refine),
            f2f,
            source,
            cfg,
        })
    }

    fn tau_r(&self) -> f64 {
        self.cfg.ransac.reproj_threshold_px
    }

    fn cap(&self, corrs: Vec<Corr2D3D>, rng: &mut impl Rng) -> Vec<Corr2D3D> {
        subsample(corrs, self.cfg.max_correspondences, rng)
    }

    fn recorded_crop(&self, frame: usize) -> Option<CropCamera> {
        self.f2f
            .recorded_crop(frame)
            .or_else(|| self.refiner.provider.recorded_view(frame).map(|(c, _)| c))
    }

    fn registered_state(&self, reg: Registration, frame: usize, rng: &mut impl Rng) -> (TrackerState, FrameDecision) {
        let inliers = self.cap(reg.inliers, rng);
        let state = TrackerState {
            pose: reg.pose,
            keyframe_inlier_count: inliers.len(),
            live_inliers: inliers,
            frame_index: frame,
            lost: false,
            crop: reg.crop,
            lost_frames: 0,
        };
        let decision = FrameDecision {
            frame_index: frame,
            used_model_registration: true,
            inlier_ratio_bc: 1.0,
            pose: reg.pose,
            quality: reg.quality,
            dropped_in_propagation: 0,
            lost: false,
        };
        (state, decision)
    }

    fn try_register(&self, pose: &Pose, crop: Option<&CropCamera>, frame: usize) -> Result<Option<Registration>, TrackingError> {
        match self.refiner.register(pose, crop, &self.source, frame) {
            Ok(r) => Ok(Some(r)),
            Err(RefineError::AllIterationsFailed(_)) | Err(RefineError::InitializationBehindCamera) => Ok(None),
            Err(RefineError::Provider(e)) => Err(TrackingError::Provider(e)),
            Err(e) => Err(TrackingError::Refine(e)),
        }
    }

    /// Registers the model at `initial` on `frame`; the inliers become the
    /// first keyframe.
    pub fn init(&self, initial: &Pose, frame: usize, rng: &mut impl Rng) -> Result<(TrackerState, FrameDecision), TrackingError> {
        let crop = self.recorded_crop(frame);
        match self.refiner.register(initial, crop.as_ref(), &self.source, frame) {
            Ok(reg) => Ok(self.registered_state(reg, frame, rng)),
            Err(RefineError::Provider(e)) => Err(TrackingError::Provider(e)),
            Err(e) => Err(TrackingError::InitializationFailed(e.to_string())),
        }
    }

    /// Advances a live state to `frame`.
    pub fn track_frame(&self, state: &TrackerState, frame: usize, rng: &mut impl Rng) -> Result<(TrackerState, FrameDecision), TrackingError> {
        let tau = self.tau_r();
        let crop = match self.recorded_crop(frame).or_else(|| self.refiner.crop_around(&state.pose, &self.source)) {
            Some(c) => c,
            None => return Ok(self.lost(state, frame, 0)),
        };
        let cam = crop.intrinsics;

        let (propagated, dropped) = if self.cfg.propagation {
            let flow = self.f2f.estimate_frame_flow(state.frame_index, &state.crop, frame, &crop)?;
            let (p, d) = propagate(&state.live_inliers, &flow);
            (self.cap(p, rng), d)
        } else {
            (Vec::new(), 0)
        };
        let fast = plain_fit(&propagated, &cam, tau);
        let b = fast.as_ref().map_or(0, |(_, idx)| idx.len());
        let ratio = if state.keyframe_inlier_count > 0 { b as f64 / state.keyframe_inlier_count as f64 } else { 0.0 };

        let fast_fit = fast.as_ref().and_then(|(p, idx)| polish(&propagated, p, idx, &cam, tau));
        if ratio >= self.cfg.tau_i {
            if let Some(fit) = fast_fit {
                let pose = crop.pose_from_crop(&fit.pose);
                let next = TrackerState {
                    pose,
                    keyframe_inlier_count: state.keyframe_inlier_count,
                    live_inliers: fit.inliers,
                    frame_index: frame,
                    lost: false,
                    crop,
                    lost_frames: 0,
                };
                let decision = FrameDecision {
                    frame_index: frame,
                    used_model_registration: false,
                    inlier_ratio_bc: ratio,
                    pose,
                    quality: fit.quality,
                    dropped_in_propagation: dropped,
                    lost: false,
                };
                return Ok((next, decision));
            }
        }

        // Register at the propagated fit when there is one.
        let seed_pose = fast
            .as_ref()
            .map(|(p, _)| crop.pose_from_crop(p))
            .filter(|p| p.is_finite() && p.translation.z > 0.0)
            .unwrap_or(state.pose);
        let Some(reg) = self.try_register(&seed_pose, Some(&crop), frame)? else {
            // Model path failed; fall back to the propagated fit if any.
            return Ok(match fast_fit {
                Some(fit) => {
                    let pose = crop.pose_from_crop(&fit.pose);
                    let decision = FrameDecision {
                        frame_index: frame,
                        used_model_registration: false,
                        inlier_ratio_bc: ratio,
                        pose,
                        quality: fit.quality,
                        dropped_in_propagation: dropped,
                        lost: false,
                    };
                    let next = TrackerState {
                        pose,
                        keyframe_inlier_count: state.keyframe_inlier_count,
                        live_inliers: fit.inliers,
                        frame_index: frame,
                        lost: false,
                        crop,
                        lost_frames: 0,
                    };
                    (next, decision)
                }
                None => self.lost(state, frame, dropped),
            });
        };

        let reg_crop = reg.crop;
        let prop_inliers: Vec<Corr2D3D> = match &fast {
            Some((_, idx)) if reg_crop == crop => idx.iter().map(|&i| propagated[i]).collect(),
            _ => Vec::new(),
        };
        let fresh = reg.inliers.clone();
        let mixture = if prop_inliers.is_empty() { fresh.clone() } else { mix(&prop_inliers, &fresh, self.cfg.mix_ratio, rng) };
        let mixture = self.cap(mixture, rng);
        let mixed_fit = plain_fit(&mixture, &reg_crop.intrinsics, tau).and_then(|(p, idx)| polish(&mixture, &p, &idx, &reg_crop.intrinsics, tau));
        let (pose_c, inliers, quality) = match mixed_fit {
            Some(f) => (f.pose, f.inliers, f.quality),
            None => (reg_crop.pose_to_crop(&reg.pose), fresh, reg.quality),
        };
        let pose = reg_crop.pose_from_crop(&pose_c);
        let next = TrackerState {
            pose,
            keyframe_inlier_count: inliers.len(),
            live_inliers: inliers,
            frame_index: frame,
            lost: false,
            crop: reg_crop,
            lost_frames: 0,
        };
        let decision = FrameDecision {
            frame_index: frame,
            used_model_registration: true,
            inlier_ratio_bc: ratio,
            pose,
            quality,
            dropped_in_propagation: dropped,
            lost: false,
        };
        Ok((next, decision))
    }

    fn lost(&self, state: &TrackerState, frame: usize, dropped: usize) -> (TrackerState, FrameDecision) {
        let next = TrackerState {
            live_inliers: Vec::new(),
            frame_index: frame,
            lost: true,
            lost_frames: state.lost_frames + 1,
            ..state.clone()
        };
        let decision = FrameDecision {
            frame_index: frame,
            used_model_registration: true,
            inlier_ratio_bc: 0.0,
            pose: state.pose,
            quality: 0.0,
            dropped_in_propagation: dropped,
            lost: true,
        };
        (next, decision)
    }

    /// One registration at the last known pose; the state stays lost when it
    /// fails.
    pub fn reacquire(&self, state: &TrackerState, frame: usize, rng: &mut impl Rng) -> Result<(TrackerState, FrameDecision), TrackingError> {
        let crop = self.recorded_crop(frame);
        Ok(match self.try_register(&state.pose, crop.as_ref(), frame)? {
            Some(reg) => self.registered_state(reg, frame, rng),
            None => self.lost(state, frame, 0),
        })
    }

    /// Initializes on frame 0 and tracks frames `1..frame_count`. Lost
    /// frames are re-acquired from the last pose until the horizon is
    /// exceeded; after that every frame is reported lost.
    pub fn track_sequence(&self, initial: &Pose, frame_count: usize) -> Result<TrackResult, TrackingError> {
        self.track_range(initial, 0, frame_count)
    }

    /// As `track_sequence`, initializing on frame `start` and tracking up to
    /// `end` exclusive. Decisions cover `start..end`.
    pub fn track_range(&self, initial: &Pose, start: usize, end: usize) -> Result<TrackResult, TrackingError> {
        if start >= end {
            return Err(TrackingError::EmptySequence);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(crate::oracle::derive_seed(&[self.cfg.seed, start as u64]));
        let (mut state, first) = self.init(initial, start, &mut rng)?;
        let mut decisions = vec![first];
        let mut terminal_loss_at = None;
        for frame in start + 1..end {
            let (next, decision) = if terminal_loss_at.is_some() {
                self.lost(&state, frame, 0)
            } else if state.lost {
                self.reacquire(&state, frame, &mut rng)?
            } else {
                self.track_frame(&state, frame, &mut rng)?
            };
            if next.lost && next.lost_frames > self.cfg.reacquire_horizon && terminal_loss_at.is_none() {
                terminal_loss_at = Some(frame);
            }
            state = next;
            decisions.push(decision);
        }
        Ok(TrackResult { decisions, terminal_loss_at })
    }
}

/// Convenience wrapper around `Tracker::track_sequence`.
pub fn track_sequence<M: FlowProvider, F: FrameFlowProvider>(
    model: &crate::onboarding::ObjectModel,
    m2f: M,
    f2f: F,
    source: CameraIntrinsics,
    initial: &Pose,
    frame_count: usize,
    cfg: &TrackerConfig,
) -> Result<TrackResult, TrackingError> {
    Tracker::new(model, m2f, f2f, source, cfg.clone())?.track_sequence(initial, frame_count)
}
