//! Core algorithms for finding label errors in semantic-segmentation datasets.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. It covers:
//!
//! - [`raster`]: class-index masks, probability tensors, depth maps.
//! - [`pixels`] and [`component`]: run-encoded pixel sets and 8-connected
//!   component extraction.
//! - [`matching`]: component matching between ground truth and prediction
//!   (adjusted IoU, component precision, TP/FN/FP assignment) and mIoU.
//! - [`features`] and [`meta`]: per-component features and the logistic meta
//!   classifier estimating the probability that a predicted component is a
//!   true positive.
//! - [`perturb`]: benchmark construction by dropping ground-truth components.
//! - [`detect`]: label-error candidates, thresholding and the two
//!   review-everything baselines.
//! - [`evaluate`]: detection scoring against a registry of known errors.

#![no_std]

extern crate alloc;

pub mod component;
pub mod detect;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod matching;
pub mod meta;
pub mod perturb;
pub mod pixels;
pub mod raster;

pub use component::{extract_components, intersect_size, Component, ComponentMap, Origin};
pub use error::{Error, Result};
pub use pixels::{BBox, PixelSet, Run};
pub use raster::{argmax_mask, DepthMap, ProbMap, SegMask, VOID};
