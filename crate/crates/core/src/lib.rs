//! Differentiable inverse warping, photometric losses and direct per-scene
//! optimisation of stereo/temporal depth and pose.

pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod optim;
pub mod par;
pub mod sampler;

pub use error::{Error, Result};
pub use geometry::{Intrinsics, Pose6};
pub use image::Image;
