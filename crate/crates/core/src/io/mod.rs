//! Volume files and synthetic data.

mod nifti;
mod phantom;

pub use nifti::*;
pub use phantom::{generate_phantom, Phantom, PhantomSpec, MAX_SEGMENTS, TISSUE_LEVEL};
