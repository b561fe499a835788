use crate::correspondence::FlowField;
use crate::geometry::CropCamera;
use crate::refine::{ProviderCapabilities, ProviderError};

/// Frame-to-frame flow between the crops of two frames.
pub trait FrameFlowProvider: Send + Sync {
    fn capabilities(&self) -> ProviderCapabilities {
        ProviderCapabilities::default()
    }

    /// Crop a recording was made with, for replaying providers.
    fn recorded_crop(&self, _frame_id: usize) -> Option<CropCamera> {
        None
    }

    /// Flow from the pixels of `crop_from` (frame `from`) to `crop_to` (frame
    /// `to`), with the dimensions of `crop_from`. Pixels without an estimate
    /// are invalid.
    fn estimate_frame_flow(
        &self,
        from: usize,
        crop_from: &CropCamera,
        to: usize,
        crop_to: &CropCamera,
    ) -> Result<FlowField, ProviderError>;
}

impl<P: FrameFlowProvider + ?Sized> FrameFlowProvider for &P {
    fn capabilities(&self) -> ProviderCapabilities {
        (**self).capabilities()
    }

    fn recorded_crop(&self, frame_id: usize) -> Option<CropCamera> {
        (**self).recorded_crop(frame_id)
    }

    fn estimate_frame_flow(
        &self,
        from: usize,
        crop_from: &CropCamera,
        to: usize,
        crop_to: &CropCamera,
    ) -> Result<FlowField, ProviderError> {
        (**self).estimate_frame_flow(from, crop_from, to, crop_to)
    }
}
