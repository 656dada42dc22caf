//! Channel-agnostic representation learning for multi-channel periodic
//! biosignals.
//!
//! One masked autoencoder is trained per signal channel; the per-channel
//! latent embeddings (the encoder's class token) are pulled into a shared
//! space by a triplet alignment objective whose weight grows over training
//! under a sinusoidal curriculum, while the reconstruction weight shrinks.
//!
//! The crate is organized around six subsystems:
//!
//! - [`numcore`]: a minimal reverse-mode autodiff tensor engine (binary64),
//!   AdamW, and the cosine learning-rate schedule.
//! - [`mae1d`]: the 1-D masked autoencoder (patchify, sine-cosine positions,
//!   seeded random masking, transformer encoder/decoder, checkpoint format).
//! - [`objectives`]: reconstruction MSE, triplet alignment, and the
//!   sinusoidal curriculum that combines them.
//! - [`datapipe`]: record storage, preprocessing (resample, crop, mean
//!   normalization), batching, and a synthetic latent-heart generator.
//! - [`disttrain`]: a single-process reference trainer and the distributed
//!   coordinator/worker protocol that exchanges embeddings and alignment
//!   gradients over a framed byte stream.
//! - [`evalkit`]: similarity matrices, cross-channel reconstruction error,
//!   logistic-regression and 1-NN cross-validation, embedding export.

pub mod datapipe;
pub mod disttrain;
pub mod evalkit;
pub mod mae1d;
pub mod numcore;
pub mod objectives;
pub mod rng;
