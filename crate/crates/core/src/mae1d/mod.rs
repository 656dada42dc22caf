//! 1-D masked autoencoder: patchify, sine-cosine positions, seeded random
//! masking, transformer encoder with a class token, lightweight transformer
//! decoder with mask tokens, per-patch signal prediction.

mod config;
mod mask;
mod model;
mod model_io;
mod signal;

pub use config::ModelConfig;
pub use mask::{random_mask, MaskPlan};
pub use model::{
    bind, bind_from_ids, cross_decode, cross_reconstruct, decode, encode, AttnParams,
    BlockParams, BoundModel, EncoderOutput, LinearParams, Mae1dModel, MaeParams, NormParams,
    LN_EPS,
};
pub use model_io::{
    read_container, read_model, write_container, write_model, CheckpointError, CONTAINER_MAGIC,
    FORMAT_VERSION,
};
pub use signal::{patchify, sincos_positions, unpatchify};
