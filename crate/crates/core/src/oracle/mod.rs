//! Synthetic scenes with exact ground truth: analytic object surfaces, smooth
//! trajectories, z-buffered visibility, exact and degraded flow, and the
//! refiner training loss.

mod flow;
mod loss;
mod providers;
mod recording;
mod scene;
mod sequence;
mod surface;

pub use flow::{oracle_f2f_flow, oracle_m2f_flow};
pub use loss::{refiner_loss, LossTerms, BCE_EPS};
pub use providers::{FaultWindow, OracleF2f, OracleM2f};
pub use recording::{export_sequence, load_recording, ExportOptions, RecordedF2f, RecordedM2f, Recording};
pub use scene::{default_source_camera, Keyframe, ModelKind, NoiseSpec, OccludedFlow, OccluderShape, OccluderSpec, SceneSpec};
pub use sequence::{build_model, generate_sequence, interpolate_trajectory, OracleFrame, OracleSequence, VISIBILITY_TOLERANCE_MM};
pub use surface::{Ellipsoid, Surface};

use thiserror::Error;

use crate::correspondence::io::GridIoError;
use crate::correspondence::CorrespondenceError;
use crate::geometry::{GeometryError, Pose};
use crate::onboarding::OnboardingError;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid scene: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("frame {0} is outside the sequence")]
    FrameOutOfRange(usize),
    #[error("object not visible in frame {0}")]
    ObjectNotVisible(usize),
    #[error("grid dimensions mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("loss mask selects no pixel")]
    EmptyMask,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Grid(#[from] GridIoError),
    #[error(transparent)]
    Onboarding(#[from] OnboardingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Correspondence(#[from] CorrespondenceError),
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a list of words into one seed. Order matters.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |h, &p| splitmix64(h ^ p))
}

/// Seed word from the exact bits of a pose.
pub(crate) fn hash_pose(p: &Pose) -> u64 {
    let mut words: Vec<u64> = p.rotation.to_row_major().iter().map(|v| v.to_bits()).collect();
    words.extend(p.translation.iter().map(|v| v.to_bits()));
    derive_seed(&words)
}
