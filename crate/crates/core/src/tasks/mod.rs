//! Uses of a trained prior: sampling, latent interpolation, infilling, and
//! the evaluation metrics.

mod generate;
mod infill;
pub mod metrics;

pub use generate::{interpolate, lerp_latent, sample, sample_latents};
pub use infill::{
    centered_gap, infill, linear_interpolation_baseline, masked_mpjpe, InfillOptimizer, InfillProblem,
    InfillResult, DEFAULT_ITERATIONS, DEFAULT_STEP, DIVERGENCE_RUN,
};
pub use metrics::{accel_error, constant_pose_mpjpe, mean_pose, mpjpe, mpjpe_per_frame, pa_mpjpe, pa_mpjpe_per_frame, procrustes_align, MetricsReport};
