//! Desk-scale stand-in for dual-encoder contrastive fine-tuning: synthetic
//! paired data, two small encoders with manual backprop, Adam, and the
//! training loop that ties the losses and the curriculum together.

mod adam;
mod encoder;
mod synth;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use encoder::{Encoder, EncoderGrads, ForwardCache};
pub use synth::{synth_dataset, synth_pairs, PairedData, SynthConfig, SynthDataset};
pub use train::{
    batch_loss_and_grad, flatten_params, run, steps_per_epoch, train, train_constant_alpha,
    AlphaSchedule, EpochRecord, RunHistory, TrainConfig, TrainOutcome,
};
