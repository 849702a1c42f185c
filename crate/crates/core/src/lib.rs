//! Cross-patch transformer segmentation toolkit.
//!
//! * [`tensor`]: dense f64 tensors and reverse-mode differentiation.
//! * [`attention`]: layer norm, multi-head attention and the intra-/inter-patch
//!   transformer blocks.
//! * [`cptm`]: tri-patch cropping, the cross-patch model, its single-patch
//!   baseline, training and sliding-window inference.
//! * [`labels`]: the 34-entry universal anatomy taxonomy, partial-label
//!   remapping and pseudo-label fusion.
//! * [`metrics`]: Dice, Hausdorff/HD95, connected components, centroid
//!   landmarks, identification rate and report aggregation.
//! * [`io`]: NIfTI-1 reading/writing and the synthetic spine phantom.

pub mod attention;
pub mod cptm;
pub mod error;
pub mod io;
pub mod labels;
pub mod metrics;
pub mod tensor;
pub mod volume;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::{Graph, ParamStore, Tensor, Var};
pub use volume::{LabelVolume, ScalarVolume};
