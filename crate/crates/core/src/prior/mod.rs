//! Frequency-guided variational motion prior.

mod config;
mod gradcheck;
mod input;
mod loss;
mod model;
mod train;

pub use config::{SkeletonSpec, TrainConfig};
pub use gradcheck::model_gradcheck;
pub use input::{
    assemble_input, guidance_spectra, target_joints, EncoderSample, InputBlock, InputLayout,
    ACCELERATION_SCALE, VELOCITY_SCALE,
};
pub use loss::{kl_divergence, loss_graph, LossBreakdown, LossWeights};
pub use model::{DecodedMotion, DecoderVars, EncoderVars, PriorModel};
pub use train::{
    checkpoint_meta, encoder_samples, epoch_rng, load_model, parse_checkpoint_meta, reconstruct,
    reconstruction_mpjpe, train_loop, train_step, EpochMetrics, TrainData, TrainOutcome, CHECKPOINT_FILE,
    METRICS_FILE, METRICS_HEADER,
};
