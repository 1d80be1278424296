//! Focused iterative search: detect, form the planogram, align, then retry
//! with relaxed thresholds on the regions that are not yet correctly matched.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{align, AlignmentOutcome, Label, MatchRatio};
use crate::detection::{
    find_empty_and_unknown, fit_box, suppress_against, validate_overlap, DetectedObject, EmptySpaceParams,
};
use crate::error::{Error, Result};
use crate::features::{extract_features, ExtractorParams, FeatureSet};
use crate::geometry::BoundingBox;
use crate::imaging::{GrayImage, RoiMask};
use crate::ism::{build_vote_matrix, extract_centers, shelf_scale, CandidateCenter, VoteMatrix};
use crate::matching::{match_features_in, matching_threshold};
use crate::planogram::{check_known_ids, form_planogram, Planogram, PlanogramParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub extractor: ExtractorParams,
    /// Standard deviation of the vote kernel, in shelf pixels.
    pub sigma: f64,
    /// Detections overlapping a stronger one by more than this IoU are dropped.
    pub nms_overlap: f64,
    pub alpha_decay: f64,
    pub max_iterations: usize,
    /// Stop after this many successive iterations without a change in the match ratio.
    pub stall_window: usize,
    /// Minimum distance between two centres of one type, as a fraction of the
    /// smaller scaled model side.
    pub center_separation: f64,
    /// Floor on a centre's vote as a fraction of the model's feature count, on top
    /// of the relative threshold. A perfect instance collects at most about one
    /// vote per model feature.
    pub min_vote_fraction: f64,
    /// Horizontal margin added to each side of a matched group before it is
    /// excluded from the search, as a fraction of the group's mean item width.
    pub roi_margin: f64,
    pub empty_space: EmptySpaceParams,
    pub planogram: PlanogramParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            extractor: ExtractorParams::default(),
            sigma: 7.0,
            nms_overlap: 0.2,
            alpha_decay: 0.75,
            max_iterations: 10,
            stall_window: 6,
            center_separation: 0.5,
            min_vote_fraction: 0.25,
            roi_margin: 0.1,
            empty_space: EmptySpaceParams::default(),
            planogram: PlanogramParams::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        positive("sigma", self.sigma)?;
        validate_overlap(self.nms_overlap)?;
        if !(self.alpha_decay > 0.0 && self.alpha_decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha decay must lie in (0, 1), got {}",
                self.alpha_decay
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max iterations must be at least 1".into()));
        }
        if self.stall_window == 0 {
            return Err(Error::InvalidArgument("stall window must be at least 1".into()));
        }
        if !(self.center_separation >= 0.0 && (0.0..=1.0).contains(&self.min_vote_fraction) && self.roi_margin >= 0.0) {
            return Err(Error::InvalidArgument(
                "center separation and ROI margin must be non-negative and the vote fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Alpha used in iteration `i` (zero based).
    pub fn alpha_at(&self, i: usize) -> f64 {
        self.alpha_decay.powi(i as i32)
    }
}

/// Features of one product model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub id: String,
    pub features: FeatureSet,
}

impl Model {
    pub fn from_image(id: impl Into<String>, img: &GrayImage, params: &ExtractorParams) -> Result<Self> {
        Ok(Model {
            id: id.into(),
            features: extract_features(img, params)?,
        })
    }

    pub fn width(&self) -> u32 {
        self.features.source_width()
    }

    pub fn height(&self) -> u32 {
        self.features.source_height()
    }
}

/// Shelf image with its features, extracted once per run.
#[derive(Debug, Clone)]
pub struct Shelf {
    pub image: GrayImage,
    pub features: FeatureSet,
}

impl Shelf {
    pub fn new(image: GrayImage, params: &ExtractorParams) -> Result<Self> {
        let features = extract_features(&image, params)?;
        Ok(Shelf { image, features })
    }

    pub fn with_features(image: GrayImage, features: FeatureSet) -> Result<Self> {
        if (features.source_width(), features.source_height()) != (image.width(), image.height()) {
            return Err(Error::InvalidArgument(format!(
                "shelf features describe a {}x{} image but the shelf is {}x{}",
                features.source_width(),
                features.source_height(),
                image.width(),
                image.height()
            )));
        }
        Ok(Shelf { image, features })
    }

    fn dims(&self) -> (u32, u32) {
        (self.image.width(), self.image.height())
    }
}

/// Output of one detection pass.
#[derive(Debug, Clone)]
pub struct Pass {
    /// New product detections that survived suppression against the kept ones.
    pub detections: Vec<DetectedObject>,
    pub votes: Vec<VoteMatrix>,
}

/// Match, vote and box every model inside `roi`, then suppress against `kept`.
pub fn detect_products(
    shelf: &Shelf,
    models: &[Model],
    alpha: f64,
    roi: &RoiMask,
    kept: &[DetectedObject],
    config: &SearchConfig,
) -> Result<Pass> {
    let tau = matching_threshold(alpha)?;
    let dims = shelf.dims();
    let per_model: Vec<(Vec<(CandidateCenter, BoundingBox)>, VoteMatrix)> = models
        .par_iter()
        .map(|m| -> Result<_> {
            let votes = if m.features.is_empty() || m.height() == 0 {
                VoteMatrix::zeros(m.id.as_str(), dims.0, dims.1)
            } else {
                let matches = match_features_in(&shelf.features, &m.features, tau, roi)?;
                let beta = shelf_scale(dims.1, m.height());
                build_vote_matrix(&m.id, &matches, &shelf.features, &m.features, beta, config.sigma)?
            };
            let beta = shelf_scale(dims.1, m.height().max(1));
            let radius = config.center_separation * beta * m.width().min(m.height()) as f64;
            let floor = config.min_vote_fraction * m.features.len() as f64;
            let candidates = extract_centers(&votes, alpha, radius)?
                .into_iter()
                .filter(|c| c.vote >= floor && roi.contains(c.x, c.y))
                .map(|c| {
                    let b = fit_box(&c, (m.width(), m.height()), beta, dims);
                    (c, b)
                })
                .filter(|(_, b)| b.is_valid())
                .collect();
            Ok((candidates, votes))
        })
        .collect::<Result<_>>()?;
    let mut candidates = Vec::new();
    let mut votes = Vec::with_capacity(per_model.len());
    for (c, v) in per_model {
        candidates.extend(c);
        votes.push(v);
    }
    Ok(Pass {
        detections: suppress_against(kept, candidates, config.nms_overlap),
        votes,
    })
}

/// Products plus the empty and unknown regions between them.
pub fn with_regions(shelf: &GrayImage, products: &[DetectedObject], params: &EmptySpaceParams) -> Vec<DetectedObject> {
    let mut all = products.to_vec();
    all.extend(find_empty_and_unknown(shelf, products, params));
    all
}

/// Search region of the next iteration: everything but the matched groups.
pub fn unresolved_roi(outcome: &AlignmentOutcome, detected: &Planogram, margin: f64) -> RoiMask {
    let regions = outcome
        .pairs
        .iter()
        .filter(|p| p.label == Label::MT)
        .filter_map(|p| p.detected.index())
        .filter_map(|i| {
            let e = &detected.entries[i];
            let b = e.bbox?;
            let item_width = b.width() / e.quantity.max(1) as f64;
            Some(b.expand(margin * item_width, 0.0))
        })
        .collect();
    RoiMask::excluding(regions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha: f64,
    pub match_threshold: f64,
    pub new_detections: usize,
    pub mu: f64,
    /// False when the new detections lowered the match ratio and were discarded.
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub shelf_id: String,
    pub final_mu: f64,
    pub ratio: MatchRatio,
    pub iterations_run: usize,
    pub outcome: AlignmentOutcome,
    pub planogram: Planogram,
    pub detections: Vec<DetectedObject>,
    pub per_iteration: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

struct State {
    products: Vec<DetectedObject>,
    planogram: Planogram,
    outcome: AlignmentOutcome,
}

fn evaluate(shelf: &Shelf, products: Vec<DetectedObject>, reference: &Planogram, config: &SearchConfig) -> Result<State> {
    let all = with_regions(&shelf.image, &products, &config.empty_space);
    let planogram = form_planogram(&reference.shelf_id, &all, &config.planogram)?;
    let outcome = align(&planogram, reference)?;
    Ok(State {
        products,
        planogram,
        outcome,
    })
}

/// Run the full compliance loop.
pub fn run_compliance(shelf: &Shelf, models: &[Model], reference: &Planogram, config: &SearchConfig) -> Result<ComplianceReport> {
    run_compliance_observed(shelf, models, reference, config, |_, _| Ok(()))
}

/// [`run_compliance`] with a callback receiving each iteration's record and vote matrices.
pub fn run_compliance_observed<F>(
    shelf: &Shelf,
    models: &[Model],
    reference: &Planogram,
    config: &SearchConfig,
    mut observe: F,
) -> Result<ComplianceReport>
where
    F: FnMut(&IterationRecord, &[VoteMatrix]) -> Result<()>,
{
    config.validate()?;
    reference.validate()?;
    check_known_ids(reference, models.iter().map(|m| m.id.as_str()))?;
    let warnings: Vec<String> = models
        .iter()
        .filter(|m| m.features.is_empty())
        .map(|m| format!("model '{}' has no features and cannot be detected", m.id))
        .collect();

    let mut state: Option<State> = None;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut stall = 0;
    for i in 0..config.max_iterations {
        let alpha = config.alpha_at(i);
        let (roi, kept) = match &state {
            None => (RoiMask::full(), Vec::new()),
            Some(s) => (
                unresolved_roi(&s.outcome, &s.planogram, config.roi_margin),
                s.products.clone(),
            ),
        };
        let pass = detect_products(shelf, models, alpha, &roi, &kept, config)?;
        let new_count = pass.detections.len();
        let mut products = kept;
        products.extend(pass.detections);
        let candidate = evaluate(shelf, products, reference, config)?;

        let previous = state.as_ref().map(|s| s.outcome.ratio);
        let lowered = previous.is_some_and(|p| ratio_less(&candidate.outcome.ratio, &p));
        if !lowered {
            state = Some(candidate);
        }
        let current = state.as_ref().expect("state set on the first iteration");
        let record = IterationRecord {
            iteration: i + 1,
            alpha,
            match_threshold: matching_threshold(alpha)?,
            new_detections: if lowered { 0 } else { new_count },
            mu: current.outcome.mu,
            accepted: !lowered,
        };
        observe(&record, &pass.votes)?;
        records.push(record);

        if current.outcome.ratio.is_one() {
            break;
        }
        if previous == Some(current.outcome.ratio) {
            stall += 1;
            if stall >= config.stall_window {
                break;
            }
        } else {
            stall = 0;
        }
    }

    let s = state.expect("at least one iteration runs");
    let detections = with_regions(&shelf.image, &s.products, &config.empty_space);
    Ok(ComplianceReport {
        shelf_id: reference.shelf_id.clone(),
        final_mu: s.outcome.mu,
        ratio: s.outcome.ratio,
        iterations_run: records.len(),
        outcome: s.outcome,
        planogram: s.planogram,
        detections,
        per_iteration: records,
        warnings,
    })
}

fn ratio_less(a: &MatchRatio, b: &MatchRatio) -> bool {
    (a.numerator as u128) * (b.denominator as u128) < (b.numerator as u128) * (a.denominator as u128)
}
