//! Masked-autoencoder completion of architectural floorplans.
//!
//! The crate covers the whole pipeline: rasters and patch geometry
//! ([`image`]), the five masking strategies ([`masking`]), an asymmetric
//! ViT masked autoencoder with hand-derived backward passes ([`model`],
//! [`nn`]), the masked-MSE objective and AdamW training loop
//! ([`training`]), a procedural floorplan corpus ([`dataset`]), PSNR/SSIM
//! evaluation ([`metrics`]) and a binary checkpoint container
//! ([`checkpoint`]).

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod image;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod training;

pub use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use crate::error::{Error, Result};
pub use crate::image::{patchify, pos_embed, unpatchify, Mode, PatchGrid, PatchSequence, Raster};
pub use crate::masking::{Anchor, MaskPlan, MaskSpec, Side, Strategy};
pub use crate::metrics::{psnr, ssim, EvalReport, MetricPair};
pub use crate::model::{Mae, ModelConfig, ModelParams};
pub use crate::training::{fit, masked_mse, LossReport, OptState, TrainConfig};
