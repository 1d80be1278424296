//! Detection and compliance metrics, and a synthetic shelf generator for
//! end-to-end evaluation.

mod metrics;
mod synth;

use std::path::Path;

pub use metrics::*;
pub use synth::*;

use crate::error::{Error, Result};

/// Read a ground-truth JSON file.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
