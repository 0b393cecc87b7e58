//! Masked style editing with a content/style swapping autoencoder.
//!
//! An encoder maps an image to a spatial feature map, from which a content
//! head extracts a spatial content code and a style head a flat style code.
//! A style-modulated generator recombines arbitrary `(content, style)` pairs.
//! Two self-supervised objectives sharpen the split: code consistency
//! (re-encoding a swapped image recovers its source codes) and content
//! alignment (a feature-space composite under a mask reproduces the swap
//! inside the mask and the original outside it).

pub mod config;
pub mod edit;
pub mod error;
pub mod imageio;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod service;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use mask::{MaskParams, RegionMask};
pub use objectives::{LossReport, LossWeights};
pub use model::{Encoded, NetKind, NetworkConfig, Networks};
pub use tensor::{ContentCode, FeatureMap, ImageTensor, StyleCode};
