//! Implicit-shape-model voting: every matched shelf feature casts a Gaussian
//! vote for the object centre implied by its model keypoint.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::imaging::GrayImage;
use crate::matching::{validate_alpha, FeatureMatch};

/// Gaussian votes are accumulated over a square window of this many standard deviations.
pub const TRUNCATION_SIGMAS: f64 = 3.0;

/// Model-to-shelf scale: shelf height over model height.
pub fn shelf_scale(shelf_height: u32, model_height: u32) -> f64 {
    shelf_height as f64 / model_height as f64
}

/// Object centre implied by a shelf keypoint matched to a model keypoint.
///
/// The displacement from the model keypoint to the model centre is scaled by
/// `beta` and added to the shelf keypoint.
pub fn displaced_center(
    shelf_xy: (f64, f64),
    model_xy: (f64, f64),
    model_dims: (u32, u32),
    beta: f64,
) -> (f64, f64) {
    let (w, h) = (model_dims.0 as f64, model_dims.1 as f64);
    (
        shelf_xy.0 + beta * (w / 2.0 - model_xy.0),
        shelf_xy.1 + beta * (h / 2.0 - model_xy.1),
    )
}

/// Vote target of one match.
pub fn vote_target(m: &FeatureMatch, shelf: &FeatureSet, model: &FeatureSet, beta: f64) -> (f64, f64) {
    let s = shelf.entries()[m.shelf_index].keypoint;
    let k = model.entries()[m.model_index].keypoint;
    displaced_center(
        (s.x as f64, s.y as f64),
        (k.x as f64, k.y as f64),
        (model.source_width(), model.source_height()),
        beta,
    )
}

/// Per-match vote weights `1 - d'` where `d'` is the min-max normalised distance
/// over this match list. Equal distances (including a single match) weigh 1.
pub fn vote_weights(matches: &[FeatureMatch]) -> Vec<f64> {
    let (lo, hi) = matches.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
        (lo.min(m.distance), hi.max(m.distance))
    });
    matches
        .iter()
        .map(|m| {
            if hi > lo {
                1.0 - (m.distance - lo) / (hi - lo)
            } else {
                1.0
            }
        })
        .collect()
}

/// Accumulated centre votes for one object type, same size as the shelf image.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteMatrix {
    object_id: String,
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl VoteMatrix {
    pub fn zeros(object_id: impl Into<String>, width: u32, height: u32) -> Self {
        VoteMatrix {
            object_id: object_id.into(),
            width,
            height,
            values: vec![0.0; width as usize * height as usize],
        }
    }

    /// Wrap precomputed values; negative or non-finite values are rejected.
    pub fn from_values(
        object_id: impl Into<String>,
        width: u32,
        height: u32,
        values: Vec<f32>,
    ) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "vote matrix holds {} values, expected {}",
                values.len(),
                width as usize * height as usize
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("votes must be finite and non-negative".into()));
        }
        Ok(VoteMatrix {
            object_id: object_id.into(),
            width,
            height,
            values,
        })
    }

    pub fn object_id(&self) -> &str {
        &self.object_id
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    /// Add `weight * exp(-r^2 / 2 sigma^2)` around `(cx, cy)`.
    pub fn add_vote(&mut self, cx: f64, cy: f64, weight: f64, sigma: f64) {
        let reach = TRUNCATION_SIGMAS * sigma;
        let x0 = (cx - reach).ceil().max(0.0);
        let x1 = (cx + reach).floor().min(self.width as f64 - 1.0);
        let y0 = (cy - reach).ceil().max(0.0);
        let y1 = (cy + reach).floor().min(self.height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return;
        }
        let inv = 1.0 / (2.0 * sigma * sigma);
        let (x0, x1, y0, y1) = (x0 as usize, x1 as usize, y0 as usize, y1 as usize);
        // separable kernel
        let gx: Vec<f64> = (x0..=x1).map(|x| (-(x as f64 - cx).powi(2) * inv).exp()).collect();
        let w = self.width as usize;
        for y in y0..=y1 {
            let gy = weight * (-(y as f64 - cy).powi(2) * inv).exp();
            let row = &mut self.values[y * w + x0..=y * w + x1];
            for (v, g) in row.iter_mut().zip(&gx) {
                *v += (gy * g) as f32;
            }
        }
    }

    /// Write the matrix as a min-max scaled 8-bit PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        let pixels = self
            .values
            .iter()
            .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
            .collect();
        GrayImage::new(self.width, self.height, pixels)?.save_png(path)
    }
}

/// Build the vote matrix of one object type from its match list.
pub fn build_vote_matrix(
    object_id: &str,
    matches: &[FeatureMatch],
    shelf: &FeatureSet,
    model: &FeatureSet,
    beta: f64,
    sigma: f64,
) -> Result<VoteMatrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("kernel sigma must be positive, got {sigma}")));
    }
    let mut v = VoteMatrix::zeros(object_id, shelf.source_width(), shelf.source_height());
    for (m, gamma) in matches.iter().zip(vote_weights(matches)) {
        let (x, y) = vote_target(m, shelf, model, beta);
        v.add_vote(x, y, gamma, sigma);
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCenter {
    pub object_id: String,
    pub x: f64,
    pub y: f64,
    pub vote: f64,
}

/// Centres whose vote exceeds `alpha / 2 * max(V)`.
///
/// Local maxima above the threshold are taken in descending vote order; each
/// accepted peak suppresses every later peak closer than `suppression_radius`.
pub fn extract_centers(v: &VoteMatrix, alpha: f64, suppression_radius: f64) -> Result<Vec<CandidateCenter>> {
    validate_alpha(alpha)?;
    let max = v.max() as f64;
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    let tau = alpha / 2.0 * max;
    let (w, h) = (v.width as i64, v.height as i64);
    let mut peaks = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let val = v.get(x as u32, y as u32);
            if (val as f64) <= tau {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    if v.get(nx as u32, ny as u32) > val {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                peaks.push((val, y, x));
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let r2 = suppression_radius * suppression_radius;
    let mut centers: Vec<CandidateCenter> = Vec::new();
    for (val, y, x) in peaks {
        let (x, y) = (x as f64, y as f64);
        if centers.iter().all(|c| (c.x - x).powi(2) + (c.y - y).powi(2) >= r2) {
            centers.push(CandidateCenter {
                object_id: v.object_id.clone(),
                x,
                y,
                vote: val as f64,
            });
        }
    }
    Ok(centers)
}
