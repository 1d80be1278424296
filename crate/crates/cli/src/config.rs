use std::path::Path;

use serde::{Deserialize, Serialize};
use shelfalign::evaluation::DEFAULT_IOU;
use shelfalign::search::SearchConfig;

use crate::CliError;

/// Settings read from the config file, overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub search: SearchConfig,
    /// IoU a detection must exceed to match a ground-truth box in `eval`.
    pub eval_iou: f64,
    pub seed: u64,
    pub overlay: bool,
    pub dump_votes: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            search: SearchConfig::default(),
            eval_iou: DEFAULT_IOU,
            seed: 0,
            overlay: true,
            dump_votes: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))
    }
}

/// Parse a ratio strictly between 0 and 1.
pub fn open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is out of range: must lie in (0, 1)"))
    }
}

pub fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} is out of range: must be positive"))
    }
}
