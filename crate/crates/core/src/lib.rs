//! Tiled high-resolution anomaly detection.
//!
//! Images are cut into patches, each patch is routed to one detector of a
//! pool, and the per-patch score maps are stitched back together. A second
//! detector scores a downsampled copy of the whole image and the two maps are
//! combined by a pointwise maximum.

pub mod assignment;
pub mod data;
pub mod detectors;
pub mod error;
pub mod features;
pub mod fusion;
pub mod imagery;
pub mod metrics;
pub mod parallel;
pub mod pipeline;
pub mod store;
pub mod tiling;

pub use error::{HiadError, Result};
