//! Cross-patch model: three overlapping patches along the cranio-caudal
//! axis, a shared strided encoder, per-patch self-attention (T1), fusion of
//! the middle patch with its neighbours' overlapping halves (T2) and a
//! decoder for the middle patch.

mod config;
mod crop;
mod experiment;
mod infer;
mod layout;
mod model;
mod train;

pub use config::CptmConfig;
pub use crop::{min_value, pad_to, stitch, tri_crop, window_starts, Padding, PatchTriple};
pub use experiment::{
    evaluate_phantoms, run_phantom_experiment, train_phantom_model, PhantomExperimentConfig,
    PhantomRunReport,
};
pub use infer::{argmax_labels, sliding_infer, sliding_logits, tile_starts};
pub use layout::{stage_factors, PatchLayout, N_STAGES};
pub use model::{baseline_forward, cptm_forward, model_forward, CptmModel, ModelInput, ModelKind};
pub use train::{batch_loss, fit, train_step, LogEntry, TrainConfig, TrainSample};

#[cfg(test)]
mod tests;
