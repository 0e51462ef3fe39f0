//! Gaze object detection and segmentation at desk scale.
//!
//! The crate covers the whole pipeline: synthetic scenes and mask
//! supervision ([`scene`], [`mask_oracle`]), a small query-based
//! detector/segmenter with a head decoder ([`detect`]), the gaze regression
//! stack ([`gaze`], [`interaction`]), metrics ([`metrics`]) and training /
//! evaluation orchestration ([`harness`]).

pub mod autograd;
pub mod backbone;
pub mod detect;
pub mod error;
pub mod gaze;
pub mod harness;
pub mod geometry;
pub mod interaction;
pub mod layers;
pub mod model;
pub mod mask_oracle;
pub mod metrics;
pub mod rng;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
