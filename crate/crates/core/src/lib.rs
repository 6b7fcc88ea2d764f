//! Radar and camera fusion object detection at desk scale.
//!
//! The crate covers the whole pipeline:
//!
//! - [`geometry`]: polar radar returns → world → camera → pixel.
//! - [`radar_imaging`]: radar frames rendered as RGB images encoding range and
//!   radial velocity; time alignment of radar frames to camera timestamps.
//! - [`scene_sim`]: a deterministic intersection simulator producing paired
//!   camera images, radar frames and ground-truth boxes.
//! - [`model`]: the fusion detector (two preprocessing branches, fusion,
//!   residual backbone stages, path aggregation, anchor-free head).
//! - [`train`]: target assignment, focal/GIoU/centerness losses, SGD training.
//! - [`evaluation`]: COCO-convention AP/AR.
//! - [`formats`], [`dataset`]: on-disk schemas and dataset loading.
//! - [`harness`]: fusion ablation and gradient suites.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod formats;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod model;
pub mod radar_imaging;
pub mod scene_sim;
pub mod threads;
pub mod train;

pub use error::{CoreError, Result};
