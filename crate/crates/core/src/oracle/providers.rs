use std::ops::Range;

use super::{oracle_f2f_flow, oracle_m2f_flow, NoiseSpec, OracleError, OracleSequence};
use crate::correspondence::{FlowField, Template, VisibilityMap};
use crate::geometry::CropCamera;
use crate::refine::{FlowProvider, ProviderCapabilities, ProviderError};
use crate::tracking::FrameFlowProvider;

fn provider_error(e: OracleError) -> ProviderError {
    match e {
        OracleError::FrameOutOfRange(i) => ProviderError::MissingFrame(i),
        other => ProviderError::Failed(other.to_string()),
    }
}

/// Model-to-frame flow computed from the ground truth of a sequence.
#[derive(Clone, Copy, Debug)]
pub struct OracleM2f<'a> {
    pub sequence: &'a OracleSequence,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl<'a> OracleM2f<'a> {
    pub fn exact(sequence: &'a OracleSequence) -> Self {
        Self {
            sequence,
            noise: NoiseSpec::exact(),
            seed: 0,
        }
    }
}

impl FlowProvider for OracleM2f<'_> {
    fn estimate(&self, tpl: &Template, crop: &CropCamera, frame_id: usize) -> Result<(FlowField, VisibilityMap), ProviderError> {
        oracle_m2f_flow(self.sequence, tpl, frame_id, crop, &self.noise, self.seed).map_err(provider_error)
    }
}

/// Frame-to-frame flow computed from the ground truth of a sequence.
#[derive(Clone, Copy, Debug)]
pub struct OracleF2f<'a> {
    pub sequence: &'a OracleSequence,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl<'a> OracleF2f<'a> {
    pub fn exact(sequence: &'a OracleSequence) -> Self {
        Self {
            sequence,
            noise: NoiseSpec::exact(),
            seed: 0,
        }
    }
}

impl FrameFlowProvider for OracleF2f<'_> {
    fn estimate_frame_flow(
        &self,
        from: usize,
        crop_from: &CropCamera,
        to: usize,
        crop_to: &CropCamera,
    ) -> Result<FlowField, ProviderError> {
        oracle_f2f_flow(self.sequence, from, to, crop_from, crop_to, &self.noise, self.seed).map_err(provider_error)
    }
}

/// Wraps a provider and returns blank output (no valid flow, zero
/// visibility) for target frames inside `frames`.
#[derive(Clone, Debug)]
pub struct FaultWindow<P> {
    pub inner: P,
    pub frames: Range<usize>,
}

impl<P> FaultWindow<P> {
    pub fn new(inner: P, frames: Range<usize>) -> Self {
        Self { inner, frames }
    }
}

impl<P: FlowProvider> FlowProvider for FaultWindow<P> {
    fn capabilities(&self) -> ProviderCapabilities {
        self.inner.capabilities()
    }

    fn recorded_view(&self, frame_id: usize) -> Option<(CropCamera, Template)> {
        self.inner.recorded_view(frame_id)
    }

    fn estimate(&self, tpl: &Template, crop: &CropCamera, frame_id: usize) -> Result<(FlowField, VisibilityMap), ProviderError> {
        if self.frames.contains(&frame_id) {
            let (w, h) = (tpl.width(), tpl.height());
            return Ok((FlowField::invalid(w, h), VisibilityMap::filled(w, h, 0.0)));
        }
        self.inner.estimate(tpl, crop, frame_id)
    }
}

impl<P: FrameFlowProvider> FrameFlowProvider for FaultWindow<P> {
    fn capabilities(&self) -> ProviderCapabilities {
        self.inner.capabilities()
    }

    fn recorded_crop(&self, frame_id: usize) -> Option<CropCamera> {
        self.inner.recorded_crop(frame_id)
    }

    fn estimate_frame_flow(
        &self,
        from: usize,
        crop_from: &CropCamera,
        to: usize,
        crop_to: &CropCamera,
    ) -> Result<FlowField, ProviderError> {
        if self.frames.contains(&to) {
            return Ok(FlowField::invalid(crop_from.intrinsics.width, crop_from.intrinsics.height));
        }
        self.inner.estimate_frame_flow(from, crop_from, to, crop_to)
    }
}
