//! Losses, multi-head loss aggregation, AdamW, synthetic data and the
//! training loop.

mod checkpoint;
mod config;
mod loss;
mod optim;
mod synth;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, MANIFEST};
pub use config::{entries, TrainConfig};
pub use loss::{
    bce_loss, boundary_weights, ce_loss, combined_loss, combined_loss_on_tape, dice_loss,
    head_subsets, iou_loss, mutation_loss, one_hot, probabilities, LossConfig, LossKind, LossTerm,
};
pub use optim::{AdamW, AdamWConfig};
pub use synth::{
    class_intensity, make_synth_dataset, make_synth_range, sample_rng, synth_sample, Augment,
    SynthSample, NOISE_STD,
};
pub use trainer::{
    stack, synth_splits, train, write_log_csv, EpochLog, Splits, TrainOutcome, Trained,
};
