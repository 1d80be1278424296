//! Bounding boxes from vote peaks, non-maximum suppression across object types,
//! and labelling of empty and unidentified shelf regions.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::imaging::{image_error, GrayImage};
use crate::ism::CandidateCenter;

pub const EMPTY_ID: &str = "__empty__";
pub const UNKNOWN_ID: &str = "__unknown__";

/// What occupies a shelf region: a known product, empty space, or something unidentified.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum ObjectKind {
    Product(String),
    Empty,
    Unknown,
}

impl ObjectKind {
    pub fn product(id: impl Into<String>) -> Self {
        ObjectKind::Product(id.into())
    }

    pub fn is_product(&self) -> bool {
        matches!(self, ObjectKind::Product(_))
    }

    pub fn as_str(&self) -> &str {
        match self {
            ObjectKind::Product(id) => id,
            ObjectKind::Empty => EMPTY_ID,
            ObjectKind::Unknown => UNKNOWN_ID,
        }
    }

    /// Short form used in text tables: product id, `E` or `U`.
    pub fn short(&self) -> &str {
        match self {
            ObjectKind::Product(id) => id,
            ObjectKind::Empty => "E",
            ObjectKind::Unknown => "U",
        }
    }
}

impl From<String> for ObjectKind {
    fn from(s: String) -> Self {
        match s.as_str() {
            EMPTY_ID => ObjectKind::Empty,
            UNKNOWN_ID => ObjectKind::Unknown,
            _ => ObjectKind::Product(s),
        }
    }
}

impl From<&str> for ObjectKind {
    fn from(s: &str) -> Self {
        ObjectKind::from(s.to_string())
    }
}

impl From<ObjectKind> for String {
    fn from(k: ObjectKind) -> Self {
        k.as_str().to_string()
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    #[serde(rename = "id")]
    pub kind: ObjectKind,
    pub center: (f64, f64),
    pub bbox: BoundingBox,
    /// Vote value of the centre; zero for empty and unknown regions.
    pub vote: f64,
}

impl DetectedObject {
    pub fn region(kind: ObjectKind, bbox: BoundingBox) -> Self {
        DetectedObject {
            kind,
            center: bbox.center(),
            bbox,
            vote: 0.0,
        }
    }
}

/// Box of the scaled model size centred on the candidate, clamped to the shelf.
pub fn fit_box(center: &CandidateCenter, model_dims: (u32, u32), beta: f64, shelf_dims: (u32, u32)) -> BoundingBox {
    BoundingBox::centered(
        center.x,
        center.y,
        beta * model_dims.0 as f64,
        beta * model_dims.1 as f64,
    )
    .clamp_to(shelf_dims.0 as f64, shelf_dims.1 as f64)
}

/// Intersection over union; zero for disjoint or degenerate boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn candidate_order(a: &(CandidateCenter, BoundingBox), b: &(CandidateCenter, BoundingBox)) -> Ordering {
    b.0.vote
        .total_cmp(&a.0.vote)
        .then_with(|| a.0.object_id.cmp(&b.0.object_id))
        .then(a.0.x.total_cmp(&b.0.x))
        .then(a.0.y.total_cmp(&b.0.y))
}

fn into_detection((c, bbox): (CandidateCenter, BoundingBox)) -> DetectedObject {
    DetectedObject {
        kind: ObjectKind::Product(c.object_id),
        center: (c.x, c.y),
        bbox,
        vote: c.vote,
    }
}

/// Greedy non-maximum suppression by descending vote: a candidate survives when
/// its IoU with every survivor so far is at most `overlap_thresh`.
pub fn suppress(candidates: Vec<(CandidateCenter, BoundingBox)>, overlap_thresh: f64) -> Vec<DetectedObject> {
    suppress_against(&[], candidates, overlap_thresh)
}

/// Non-maximum suppression where `kept` detections always win: returns only the
/// new candidates that survive against `kept` and against each other.
pub fn suppress_against(
    kept: &[DetectedObject],
    mut candidates: Vec<(CandidateCenter, BoundingBox)>,
    overlap_thresh: f64,
) -> Vec<DetectedObject> {
    candidates.sort_by(candidate_order);
    let mut survivors: Vec<DetectedObject> = Vec::new();
    for cand in candidates {
        let clear = kept
            .iter()
            .chain(survivors.iter())
            .all(|d| iou(&d.bbox, &cand.1) <= overlap_thresh);
        if clear {
            survivors.push(into_detection(cand));
        }
    }
    survivors
}

/// Settings of the empty-space search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmptySpaceParams {
    /// Windows with mean intensity below this (0-255) count as empty shelf.
    pub dark_threshold: f64,
    /// Window width as a fraction of the average detected width.
    pub window_fraction: f64,
    /// Window stride as a fraction of the average detected width.
    pub stride_fraction: f64,
    /// Relative slack on the "at least one average width" tests.
    pub width_tolerance: f64,
}

impl Default for EmptySpaceParams {
    fn default() -> Self {
        EmptySpaceParams {
            dark_threshold: 60.0,
            window_fraction: 0.25,
            stride_fraction: 0.125,
            width_tolerance: 0.2,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Merge overlapping or touching intervals.
fn merge_intervals(mut spans: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in spans {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Parts of `[lo, hi)` not covered by `covered` (which must be merged and sorted).
fn complement(lo: f64, hi: f64, covered: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut cursor = lo;
    for &(a, b) in covered {
        if a > cursor {
            out.push((cursor, a.min(hi)));
        }
        cursor = cursor.max(b);
        if cursor >= hi {
            break;
        }
    }
    if cursor < hi {
        out.push((cursor, hi));
    }
    out.retain(|(a, b)| b > a);
    out
}

/// Label undetected horizontal spans of the shelf as empty space (dark and at
/// least one average product wide) or unknown (anything else that wide).
///
/// With no product detections the whole image is one unknown region.
pub fn find_empty_and_unknown(
    img: &GrayImage,
    detections: &[DetectedObject],
    params: &EmptySpaceParams,
) -> Vec<DetectedObject> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let real: Vec<&DetectedObject> = detections.iter().filter(|d| d.kind.is_product()).collect();
    if real.is_empty() {
        return vec![DetectedObject::region(
            ObjectKind::Unknown,
            BoundingBox::new(0.0, 0.0, w, h),
        )];
    }
    let mean_width = real.iter().map(|d| d.bbox.width()).sum::<f64>() / real.len() as f64;
    if mean_width <= 0.0 {
        return Vec::new();
    }
    let top = median(&mut real.iter().map(|d| d.bbox.y0).collect::<Vec<_>>());
    let bottom = median(&mut real.iter().map(|d| d.bbox.y1).collect::<Vec<_>>());
    let min_width = (1.0 - params.width_tolerance) * mean_width;
    let window = (params.window_fraction * mean_width).max(1.0);
    let stride = (params.stride_fraction * mean_width).max(1.0);

    let covered = merge_intervals(real.iter().map(|d| (d.bbox.x0, d.bbox.x1)).collect());
    let mut out = Vec::new();
    for (s0, s1) in complement(0.0, w, &covered) {
        if s1 - s0 < min_width {
            continue;
        }
        let mut starts = Vec::new();
        let mut x = s0;
        while x + window <= s1 + 1e-9 {
            starts.push(x);
            x += stride;
        }
        if starts.last().is_none_or(|&last| last + window < s1 - 1e-9) && s1 - s0 >= window {
            starts.push(s1 - window);
        }
        let dark: Vec<(f64, f64)> = starts
            .into_iter()
            .filter(|&x| {
                img.mean_in(&BoundingBox::new(x, top, x + window, bottom))
                    .is_some_and(|m| m < params.dark_threshold)
            })
            .map(|x| (x, x + window))
            .collect();
        let empty: Vec<(f64, f64)> = merge_intervals(dark)
            .into_iter()
            .filter(|(a, b)| b - a >= min_width)
            .collect();
        for &(a, b) in &empty {
            out.push(DetectedObject::region(
                ObjectKind::Empty,
                BoundingBox::new(a, top, b, bottom),
            ));
        }
        for (a, b) in complement(s0, s1, &empty) {
            if b - a >= min_width {
                out.push(DetectedObject::region(
                    ObjectKind::Unknown,
                    BoundingBox::new(a, top, b, bottom),
                ));
            }
        }
    }
    out.sort_by(|a, b| a.bbox.x0.total_cmp(&b.bbox.x0));
    out
}

fn kind_color(kind: &ObjectKind) -> [u8; 3] {
    match kind {
        ObjectKind::Product(_) => [0, 200, 0],
        ObjectKind::Empty => [0, 0, 255],
        ObjectKind::Unknown => [255, 0, 0],
    }
}

/// Shelf image with box outlines: green products, blue empty space, red unknown regions.
pub fn render_overlay(img: &GrayImage, detections: &[DetectedObject]) -> image::RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut out = image::RgbImage::from_fn(w, h, |x, y| {
        let v = img.get(x, y);
        image::Rgb([v, v, v])
    });
    for d in detections {
        let b = d.bbox.clamp_to(w as f64, h as f64);
        if !b.is_valid() {
            continue;
        }
        let color = image::Rgb(kind_color(&d.kind));
        let x0 = b.x0.floor() as u32;
        let y0 = b.y0.floor() as u32;
        let x1 = (b.x1.ceil() as u32).min(w) - 1;
        let y1 = (b.y1.ceil() as u32).min(h) - 1;
        for t in 0..2u32 {
            for x in x0..=x1 {
                for y in [y0.saturating_add(t).min(y1), y1.saturating_sub(t).max(y0)] {
                    out.put_pixel(x, y, color);
                }
            }
            for y in y0..=y1 {
                for x in [x0.saturating_add(t).min(x1), x1.saturating_sub(t).max(x0)] {
                    out.put_pixel(x, y, color);
                }
            }
        }
    }
    out
}

pub fn save_overlay(img: &GrayImage, detections: &[DetectedObject], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    render_overlay(img, detections)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

pub(crate) fn validate_overlap(thresh: f64) -> Result<()> {
    if thresh > 0.0 && thresh < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "overlap threshold must lie in (0, 1), got {thresh}"
        )))
    }
}
