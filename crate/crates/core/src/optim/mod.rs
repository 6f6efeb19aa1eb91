//! Parameterisation, Adam, the learning-rate schedule and the coarse-to-fine
//! per-scene optimisation loop.

mod adam;
mod gradcheck;
mod optimize;
mod params;
mod schedule;

pub use adam::{adam_step, AdamConfig, AdamMoments};
pub use gradcheck::{gradcheck, gradcheck_suite, random_state, BlockError, GradcheckReport};
pub use optimize::{optimize_scene, OptimizeConfig, SceneState, TraceRow};
pub use params::{
    depth_to_disparity, disparity_to_depth, DisparityField, SceneParams, View, DEFAULT_DMAX,
    LOGIT_LIMIT,
};
pub use schedule::{lr_schedule, Schedule};
