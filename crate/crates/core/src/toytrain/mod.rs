//! A patchwise linear autoencoder trained with the regularization protocol,
//! and the probes that read structure out of its latents.

mod model;
mod probes;
mod train;

pub use model::{init_model, InitMode, LinearAutoencoder};
pub use probes::{
    median_r_squared, norm_probe, synthetic_corpus, trajectory_fit, unmask_curve, ChannelFit, NormReport,
};
pub(crate) use train::center_blocks;
pub use train::{
    log_to_csv, reconstruction_mse, recon_objective, reg_objective, train, train_from, Branch, Gradients,
    SsmParams, StepMetrics, TrainConfig, TrainOutcome, TrainState,
};

#[cfg(test)]
mod tests;
