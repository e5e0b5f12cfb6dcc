//! SAR-to-optical image translation with a cloud-filtered pix2pix pipeline.
//!
//! The crate covers the whole path from raw tiles to scored predictions: tile and manifest
//! I/O, radiometric preprocessing, cloud-based curation, the U-Net generator and patch
//! discriminator, the adversarial training loop, multi-candidate inference and the
//! PSNR/SSIM/min-error metrics.

pub mod cloud_filter;
pub mod config;
pub mod error;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod par;
pub mod params;
pub mod pipeline;
pub mod pix2pix_net;
pub mod preprocess;
pub mod quality_metrics;
pub mod synthetic;
pub mod tensor;
pub mod tile_store;
pub mod trainer;
pub mod translator;

pub use error::{Error, Result};
