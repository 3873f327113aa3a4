//! Unsupervised defect detection for patterned fabrics.
//!
//! A filter bank is learned from one defect-free reference image in a single
//! pass, without gradients: patches the size of the fabric's repeat period
//! either join the most similar stored filter (updating its running mean) or
//! become a new filter. Test images are scored patch by patch against the
//! bank, turned into a Gaussian-weighted defect probability map, and
//! binarized by maximum two-dimensional entropy.
//!
//! Module map:
//! - [`imaging`]: image type, I/O, preprocessing, correlation primitives
//! - [`periodicity`]: repeat-period estimation and filter size
//! - [`patching`]: patch extraction, variance trimming, seeded shuffle
//! - [`feature_bank`]: filter discovery, layer stacking, model files
//! - [`anomaly`]: distances, threshold calibration, probability maps
//! - [`segmentation`]: 2D entropy thresholding and opening
//! - [`evaluation`]: confusion counts, metrics, sweeps, synthetic fabrics
//! - [`harness`]: configuration, datasets and the end-to-end pipeline

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anomaly;
pub mod error;
pub mod evaluation;
pub mod feature_bank;
pub mod harness;
pub mod imaging;
pub mod patching;
pub mod periodicity;
pub mod segmentation;

pub use error::{Error, Result};
pub use imaging::GrayImage;
