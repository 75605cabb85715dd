//! Semi-supervised keypoint estimation with composed hard augmentations and
//! multi-path consistency training.
//!
//! * [`geometry`]: affine maps, image/heatmap warps, Gaussian heatmaps.
//! * [`augment`]: Cutout, CutMix, MixUp, joint-centred variants, composed
//!   pipelines and the combination validator.
//! * [`model`]: a small convolutional pose network with analytic gradients,
//!   Adam, and the tensor container used for checkpoints and feature dumps.
//! * [`ssltrain`]: losses and the single/dual-network training loops.
//! * [`metrics`]: OKS, average precision and PCK.
//! * [`analysis`]: singular-value spectra and their entropy.
//! * [`data`]: COCO keypoint annotations, synthetic stick figures, splits.

pub mod analysis;
pub mod augment;
pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod ssltrain;

pub use error::{Error, Result};
pub use geometry::{AffineMap, Heatmap, Image, Joint, JointState, KeypointSet};
pub use rng::RandomStream;
