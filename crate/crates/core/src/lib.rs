//! Flow-based 6DoF object pose refinement and tracking.

// Guards are written `!(x > 0.0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod correspondence;
pub mod geometry;
pub mod metrics;
pub mod onboarding;
pub mod oracle;
pub mod pnp;
pub mod refine;
pub mod tracking;
