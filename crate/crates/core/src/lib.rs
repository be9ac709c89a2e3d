//! Robust image watermarking.
//!
//! A cross-attention embedder hides a small binary watermark in a cover
//! image. An encoder maps marked images into a latent "invariant domain"
//! that is trained to be insensitive to common image processing, and a
//! decoder plus convolutional extractor recover the bits from it.
//!
//! Everything is implemented on top of `ndarray` with hand-written
//! backpropagation; models are generic over `f32` (training) and `f64`
//! (gradient checking).

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod config;
pub mod data;
pub mod embedder;
pub mod error;
pub mod extractor;
pub mod imageops;
pub mod network;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod run_config;
pub mod tensor;
pub mod train;
pub mod watermark;

pub use augment::{apply_noise, attack_sweep_levels, compound_augment, CompoundAugmentConfig, NoiseKind, NoiseRole, NoiseSpec};
pub use codec::{Decoder, Encoder, InvariantDomain};
pub use config::ModelConfig;
pub use embedder::{ClampGrad, ConvEmbedder, Embedder, WatermarkEmbedder};
pub use error::{Error, Result};
pub use extractor::Extractor;
pub use network::Network;
pub use objectives::{brr, psnr, triplet_loss, MetricReport, NoiseRow, TrainingLossConfig};
pub use tensor::{patchify, unpatchify, ImageTensor, PatchGrid, Real, TokenSequence};
pub use watermark::WatermarkBits;
