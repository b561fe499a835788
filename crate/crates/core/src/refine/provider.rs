use thiserror::Error;

use crate::correspondence::{FlowField, Template, VisibilityMap};
use crate::geometry::CropCamera;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProviderCapabilities {
    /// Whether `estimate` may be called from several threads at once. Runners
    /// serialize calls otherwise.
    pub concurrent: bool,
    /// Whether the provider replays recorded flows, in which case it dictates
    /// the crop (and, for model-to-frame flow, the template).
    pub recorded: bool,
}

impl Default for ProviderCapabilities {
    fn default() -> Self {
        Self {
            concurrent: true,
            recorded: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no flow available for frame {0}")]
    MissingFrame(usize),
    #[error("flow output is {found:?}, template is {expected:?}")]
    DimensionMismatch { expected: (u32, u32), found: (u32, u32) },
    #[error("flow provider failed: {0}")]
    Failed(String),
}

/// Model-to-frame flow: dense template-to-crop flow plus per-template-pixel
/// visibility.
pub trait FlowProvider: Send + Sync {
    fn capabilities(&self) -> ProviderCapabilities {
        ProviderCapabilities::default()
    }

    /// Crop and template a recording was made with, for replaying providers.
    fn recorded_view(&self, _frame_id: usize) -> Option<(CropCamera, Template)> {
        None
    }

    /// Flow from template pixels into the crop of frame `frame_id`, and the
    /// likelihood that each template pixel is visible there. Both grids have
    /// the template's dimensions.
    fn estimate(&self, tpl: &Template, crop: &CropCamera, frame_id: usize) -> Result<(FlowField, VisibilityMap), ProviderError>;
}

impl<P: FlowProvider + ?Sized> FlowProvider for &P {
    fn capabilities(&self) -> ProviderCapabilities {
        (**self).capabilities()
    }

    fn recorded_view(&self, frame_id: usize) -> Option<(CropCamera, Template)> {
        (**self).recorded_view(frame_id)
    }

    fn estimate(&self, tpl: &Template, crop: &CropCamera, frame_id: usize) -> Result<(FlowField, VisibilityMap), ProviderError> {
        (**self).estimate(tpl, crop, frame_id)
    }
}

/// Checks provider output against the template size.
pub(crate) fn check_output(tpl: &Template, flow: &FlowField, vis: &VisibilityMap) -> Result<(), ProviderError> {
    let expected = (tpl.width(), tpl.height());
    for found in [flow.dims(), vis.dims()] {
        if found != expected {
            return Err(ProviderError::DimensionMismatch { expected, found });
        }
    }
    Ok(())
}
