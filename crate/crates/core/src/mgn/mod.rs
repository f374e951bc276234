//! Mask generator network: a single pre-norm ViT block plus one scoring
//! attention layer whose cls-query logits feed an `[N → N]` linear head.

mod config;
mod model;
mod train;
mod weights;

pub use config::{count_params, estimate_flops, MgnConfig};
pub use model::{
    bce_loss, forward, loss, loss_and_grad, patchify, scaled_dot_logits, trace, trace_patches,
    unpatchify, ForwardTrace, MgnImage, ScoreGrid, BCE_CLAMP, LN_EPS,
};
pub use train::{train, Adam, TrainConfig, TrainSample};
pub use weights::{
    init_weights, perturb, EncoderBlock, LayerNormParams, MgnWeights, QkvProjection,
    ScoringAttention,
};
