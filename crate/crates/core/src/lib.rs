//! Retail shelf product detection and planogram compliance scoring.
//!
//! The pipeline runs in two halves. Detection matches binary local features from
//! one model image per product against the shelf image, lets every match vote for
//! an object centre, and turns vote peaks into boxes. Compliance sorts and groups
//! the detections into a detected planogram and aligns it against the reference
//! planogram with a quantity-weighted Needleman-Wunsch aligner. The [`search`]
//! driver repeats detection with relaxed thresholds on the regions that are not
//! yet correctly matched.

pub mod alignment;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod imaging;
pub mod detection;
pub mod ism;
pub mod matching;
pub mod planogram;
pub mod search;

pub use error::{Error, Result};
pub use geometry::BoundingBox;
