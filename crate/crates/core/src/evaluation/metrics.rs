use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentOutcome, Label, Slot};
use crate::detection::{iou, DetectedObject, ObjectKind};
use crate::geometry::BoundingBox;

/// Default IoU a detection must exceed to count as overlapping a ground-truth box.
pub const DEFAULT_IOU: f64 = 0.25;
/// IoU of the comparison setting.
pub const COMPARISON_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            precision,
            recall,
            f1,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        }
    }

    /// Pooled counts of several evaluations.
    pub fn aggregate<'a>(all: impl IntoIterator<Item = &'a Metrics>) -> Self {
        let (tp, fp, fn_) = all.into_iter().fold((0, 0, 0), |acc, m| {
            (acc.0 + m.true_positives, acc.1 + m.false_positives, acc.2 + m.false_negatives)
        });
        Metrics::from_counts(tp, fp, fn_)
    }
}

/// Aligned text table of named metric rows.
pub fn render_metrics_table(rows: &[(String, Metrics)]) -> String {
    let name_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{:<name_w$}  {:>9}  {:>6}  {:>6}  {:>4}  {:>4}  {:>4}\n",
        "shelf", "precision", "recall", "f1", "tp", "fp", "fn"
    );
    for (name, m) in rows {
        out.push_str(&format!(
            "{:<name_w$}  {:>9.4}  {:>6.4}  {:>6.4}  {:>4}  {:>4}  {:>4}\n",
            name, m.precision, m.recall, m.f1, m.true_positives, m.false_positives, m.false_negatives
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub id: ObjectKind,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtLabel {
    pub group: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(default)]
    pub shelf_id: String,
    pub boxes: Vec<GtBox>,
    #[serde(default)]
    pub labels: Vec<GtLabel>,
}

fn canonical(kind: &ObjectKind, b: &BoundingBox) -> (String, [u64; 4]) {
    (
        kind.as_str().to_string(),
        [b.x0.to_bits(), b.y0.to_bits(), b.x1.to_bits(), b.y1.to_bits()],
    )
}

/// Greedy one-to-one matching of product detections to product ground-truth
/// boxes by descending IoU. Pairs need IoU above `iou_thresh`; a pair is a true
/// positive when the ids agree. Empty and unknown boxes on either side are ignored.
pub fn detection_metrics(detections: &[DetectedObject], truth: &GroundTruth, iou_thresh: f64) -> Metrics {
    let mut dets: Vec<(&ObjectKind, &BoundingBox)> = detections
        .iter()
        .filter(|d| d.kind.is_product())
        .map(|d| (&d.kind, &d.bbox))
        .collect();
    let mut gts: Vec<(&ObjectKind, &BoundingBox)> = truth
        .boxes
        .iter()
        .filter(|g| g.id.is_product())
        .map(|g| (&g.id, &g.bbox))
        .collect();
    dets.sort_by_cached_key(|(k, b)| canonical(k, b));
    gts.sort_by_cached_key(|(k, b)| canonical(k, b));

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let o = iou(d.1, g.1);
            if o > iou_thresh {
                pairs.push((o, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; dets.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut tp = 0;
    for (_, i, j) in pairs {
        if det_used[i] || gt_used[j] {
            continue;
        }
        det_used[i] = true;
        gt_used[j] = true;
        if dets[i].0 == gts[j].0 {
            tp += 1;
        }
    }
    let matched = det_used.iter().filter(|&&u| u).count();
    let fp = dets.len() - tp;
    let fn_ = gts.len() - matched;
    Metrics::from_counts(tp, fp, fn_)
}

/// Stable key of every aligned group.
///
/// Pairs holding a reference entry are keyed by its position and id. Inserted
/// detected groups are keyed by the number of reference entries before them,
/// their id and their rank among equal keys.
pub fn group_labels(outcome: &AlignmentOutcome) -> Vec<(String, Label)> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut consumed = 0;
    let mut out = Vec::with_capacity(outcome.pairs.len());
    for p in &outcome.pairs {
        match (&p.reference, &p.detected) {
            (Slot::Entry { kind, index, .. }, _) => {
                out.push((format!("ref#{index}:{kind}"), p.label));
                consumed = index + 1;
            }
            (Slot::Gap, Slot::Entry { kind, .. }) => {
                let base = format!("ins@{consumed}:{kind}");
                let n = seen.entry(base.clone()).or_insert(0);
                *n += 1;
                out.push((format!("{base}#{n}"), p.label));
            }
            (Slot::Gap, Slot::Gap) => {}
        }
    }
    out
}

/// Group labels scored against ground truth: equal label is a true positive,
/// a differing label or a group absent from the truth is a false positive, and
/// a truth group absent from the outcome is a false negative.
pub fn compliance_metrics(outcome: &AlignmentOutcome, truth: &[GtLabel]) -> Metrics {
    label_metrics(&group_labels(outcome), truth)
}

/// [`compliance_metrics`] over already keyed group labels.
pub fn label_metrics(predicted: &[(String, Label)], truth: &[GtLabel]) -> Metrics {
    let expected: BTreeMap<&str, Label> = truth.iter().map(|l| (l.group.as_str(), l.label)).collect();
    let mut tp = 0;
    let mut fp = 0;
    for (key, label) in predicted {
        match expected.get(key.as_str()) {
            Some(l) if l == label => tp += 1,
            _ => fp += 1,
        }
    }
    let present: std::collections::BTreeSet<&str> = predicted.iter().map(|(k, _)| k.as_str()).collect();
    let fn_ = expected.keys().filter(|k| !present.contains(*k)).count();
    Metrics::from_counts(tp, fp, fn_)
}

/// Ground-truth labels of an outcome, in the file representation.
pub fn truth_labels(outcome: &AlignmentOutcome) -> Vec<GtLabel> {
    group_labels(outcome)
        .into_iter()
        .map(|(group, label)| GtLabel { group, label })
        .collect()
}
