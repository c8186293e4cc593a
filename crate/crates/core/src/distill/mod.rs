//! Distillation of region-level target features into the field: decoder,
//! granularity-weighted losses, mask fusion and the training loop.

mod adam;
mod decoder;
mod loss;
mod train;

pub use adam::{Adam, AdamParams};
pub use decoder::{gather, DecodedMap, Decoder, DecoderGrads, Forward, DEFAULT_HIDDEN, NUM_LEVELS};
pub use loss::{
    consistency_loss, distill_loss, entropy_loss, fuse_masks, granularity_weights, loss_pixels, region_factor, view_loss,
    DistillMode, FusedMask, FusedRegion, LossTerms, LossWeights, ViewLoss,
};
pub use train::{evaluate, train, view_gradients, write_jsonl, IterLog, StepGrads, TrainConfig, Trained, ViewData};
