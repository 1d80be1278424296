//! Planogram model: ordered groups of (object type, quantity, merged box).
//!
//! Detected planograms are formed from detections by sorting along the shelf
//! and merging runs of the same type; reference planograms are read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detection::{DetectedObject, ObjectKind, EMPTY_ID, UNKNOWN_ID};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanogramEntry {
    #[serde(rename = "id")]
    pub kind: ObjectKind,
    pub quantity: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    /// Model image of a reference entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
}

impl PlanogramEntry {
    pub fn new(kind: impl Into<ObjectKind>, quantity: u32) -> Self {
        PlanogramEntry {
            kind: kind.into(),
            quantity,
            bbox: None,
            image: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planogram {
    pub shelf_id: String,
    #[serde(rename = "products")]
    pub entries: Vec<PlanogramEntry>,
}

impl Planogram {
    /// Planogram from `(id, quantity)` pairs; `"E"`/`"U"` and the sentinel ids map to empty/unknown.
    pub fn from_pairs(shelf_id: impl Into<String>, pairs: &[(&str, u32)]) -> Self {
        Planogram {
            shelf_id: shelf_id.into(),
            entries: pairs
                .iter()
                .map(|&(id, q)| {
                    let kind = match id {
                        "E" | EMPTY_ID => ObjectKind::Empty,
                        "U" | UNKNOWN_ID => ObjectKind::Unknown,
                        other => ObjectKind::product(other),
                    };
                    PlanogramEntry::new(kind, q)
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_quantity(&self) -> u64 {
        self.entries.iter().map(|e| e.quantity as u64).sum()
    }

    /// Compact form, e.g. `o1:3 o2:5 U:1`.
    pub fn summary(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}:{}", e.kind.short(), e.quantity))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Non-empty, positive quantities, maximal grouping.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Validation(format!("planogram '{}' has no entries", self.shelf_id)));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.quantity == 0 {
                return Err(Error::Validation(format!(
                    "entry {i} ({}) has non-positive quantity",
                    e.kind
                )));
            }
            if i > 0 && self.entries[i - 1].kind == e.kind {
                return Err(Error::Validation(format!(
                    "entries {} and {i} are both '{}'; adjacent groups must differ",
                    i - 1,
                    e.kind
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceFile {
    shelf_id: String,
    products: Vec<ReferenceProduct>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceProduct {
    id: String,
    #[serde(default)]
    image: Option<PathBuf>,
    quantity: i64,
    #[serde(default)]
    bbox: Option<BoundingBox>,
}

/// Parse a reference planogram. Relative image paths resolve against `base_dir`.
pub fn parse_reference(json: &str, base_dir: Option<&Path>) -> Result<Planogram> {
    let file: ReferenceFile = serde_json::from_str(json)?;
    let mut entries = Vec::with_capacity(file.products.len());
    for (i, p) in file.products.into_iter().enumerate() {
        if p.id.trim().is_empty() {
            return Err(Error::Validation(format!("product {i} has an empty id")));
        }
        if p.id == EMPTY_ID || p.id == UNKNOWN_ID {
            return Err(Error::Validation(format!(
                "product {i}: unknown object id '{}' (reserved for detected planograms)",
                p.id
            )));
        }
        if p.quantity <= 0 || p.quantity > u32::MAX as i64 {
            return Err(Error::Validation(format!(
                "product {i} ({}) has non-positive quantity {}",
                p.id, p.quantity
            )));
        }
        let image = p.image.map(|img| match base_dir {
            Some(dir) if img.is_relative() => dir.join(img),
            _ => img,
        });
        entries.push(PlanogramEntry {
            kind: ObjectKind::Product(p.id),
            quantity: p.quantity as u32,
            bbox: p.bbox,
            image,
        });
    }
    let planogram = Planogram {
        shelf_id: file.shelf_id,
        entries,
    };
    planogram.validate()?;
    Ok(planogram)
}

/// Load a reference planogram JSON file.
pub fn load_reference(path: impl AsRef<Path>) -> Result<Planogram> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_reference(&text, path.parent())
}

/// Check every reference product against the available model ids.
pub fn check_known_ids<'a>(reference: &Planogram, known: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let known: std::collections::BTreeSet<&str> = known.into_iter().collect();
    for e in &reference.entries {
        if !known.contains(e.kind.as_str()) {
            return Err(Error::Validation(format!("unknown object id '{}'", e.kind)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanogramParams {
    /// Minimum horizontal overlap, relative to the narrower box, for two boxes to be stacked.
    pub stack_min_horizontal_overlap: f64,
    /// Maximum vertical overlap, relative to the shorter box, for two boxes to be stacked.
    pub stack_max_vertical_overlap: f64,
    /// Count an unknown region wider than twice the average product width as
    /// `ceil(width / average)` items instead of one.
    pub unknown_count_by_width: bool,
}

impl Default for PlanogramParams {
    fn default() -> Self {
        PlanogramParams {
            stack_min_horizontal_overlap: 0.5,
            stack_max_vertical_overlap: 0.2,
            unknown_count_by_width: false,
        }
    }
}

fn stacked(a: &BoundingBox, b: &BoundingBox, params: &PlanogramParams) -> bool {
    let narrow = a.width().min(b.width());
    let short = a.height().min(b.height());
    narrow > 0.0
        && short > 0.0
        && a.horizontal_overlap(b) >= params.stack_min_horizontal_overlap * narrow
        && a.vertical_overlap(b) <= params.stack_max_vertical_overlap * short
}

/// Sort detections along the shelf and merge runs of the same type.
///
/// Objects stacked on top of each other must share a type; equal centre
/// coordinates keep detection order. Empty and unknown regions count one item each.
pub fn form_planogram(
    shelf_id: &str,
    detections: &[DetectedObject],
    params: &PlanogramParams,
) -> Result<Planogram> {
    for (i, a) in detections.iter().enumerate() {
        for b in &detections[i + 1..] {
            if a.kind != b.kind && stacked(&a.bbox, &b.bbox, params) {
                return Err(Error::Constraint(format!(
                    "stacked objects of different types: {} at {:?} and {} at {:?}",
                    a.kind,
                    <[f64; 4]>::from(a.bbox),
                    b.kind,
                    <[f64; 4]>::from(b.bbox)
                )));
            }
        }
    }
    let products: Vec<&DetectedObject> = detections.iter().filter(|d| d.kind.is_product()).collect();
    let mean_width = if products.is_empty() {
        0.0
    } else {
        products.iter().map(|d| d.bbox.width()).sum::<f64>() / products.len() as f64
    };

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[a]
            .center
            .0
            .total_cmp(&detections[b].center.0)
            .then(a.cmp(&b))
    });

    let mut entries: Vec<PlanogramEntry> = Vec::new();
    for idx in order {
        let d = &detections[idx];
        let units = match d.kind {
            ObjectKind::Unknown
                if params.unknown_count_by_width
                    && mean_width > 0.0
                    && d.bbox.width() > 2.0 * mean_width =>
            {
                (d.bbox.width() / mean_width).ceil() as u32
            }
            _ => 1,
        };
        match entries.last_mut() {
            Some(last) if last.kind == d.kind => {
                last.quantity += units;
                last.bbox = Some(last.bbox.map_or(d.bbox, |b| b.union(&d.bbox)));
            }
            _ => entries.push(PlanogramEntry {
                kind: d.kind.clone(),
                quantity: units,
                bbox: Some(d.bbox),
                image: None,
            }),
        }
    }
    Ok(Planogram {
        shelf_id: shelf_id.to_string(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(id: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> DetectedObject {
        let bbox = BoundingBox::new(x0, y0, x1, y1);
        DetectedObject {
            kind: ObjectKind::from(id),
            center: bbox.center(),
            bbox,
            vote: if ObjectKind::from(id).is_product() { 1.0 } else { 0.0 },
        }
    }

    fn pairs(p: &Planogram) -> Vec<(String, u32)> {
        p.entries
            .iter()
            .map(|e| (e.kind.short().to_string(), e.quantity))
            .collect()
    }

    #[test]
    fn sorts_and_groups() {
        let dets = vec![
            det("o2", 45.0, 0.0, 55.0, 10.0),
            det("o1", 5.0, 0.0, 15.0, 10.0),
            det("o1", 25.0, 0.0, 35.0, 10.0),
        ];
        let p = form_planogram("s", &dets, &PlanogramParams::default()).unwrap();
        assert_eq!(pairs(&p), [("o1".into(), 2), ("o2".into(), 1)]);
        assert_eq!(p.entries[0].bbox, Some(BoundingBox::new(5.0, 0.0, 35.0, 10.0)));
    }

    #[test]
    fn partial_shelf_layout() {
        // unknown | o1 o1 | o2 x6 | o3 x3 | empty | o4 x3 | unknown, each item 10 wide
        let mut dets = vec![det(UNKNOWN_ID, 0.0, 0.0, 10.0, 50.0)];
        let mut x = 10.0;
        for (id, n) in [("o1", 2), ("o2", 6), ("o3", 3), (EMPTY_ID, 1), ("o4", 3), (UNKNOWN_ID, 1)] {
            for _ in 0..n {
                dets.push(det(id, x, 0.0, x + 10.0, 50.0));
                x += 10.0;
            }
        }
        dets.reverse();
        let p = form_planogram("partial", &dets, &PlanogramParams::default()).unwrap();
        assert_eq!(p.summary(), "U:1 o1:2 o2:6 o3:3 E:1 o4:3 U:1");
    }

    #[test]
    fn stacked_same_type_is_one_group() {
        let dets = vec![det("o1", 0.0, 0.0, 10.0, 10.0), det("o1", 0.0, 10.0, 10.0, 20.0)];
        let p = form_planogram("s", &dets, &PlanogramParams::default()).unwrap();
        assert_eq!(pairs(&p), [("o1".into(), 2)]);
    }

    #[test]
    fn stacked_different_types_violate_constraint() {
        let dets = vec![det("o1", 0.0, 0.0, 10.0, 10.0), det("o2", 1.0, 10.0, 11.0, 20.0)];
        let err = form_planogram("s", &dets, &PlanogramParams::default()).unwrap_err();
        assert!(matches!(err, Error::Constraint(ref m) if m.contains("o1") && m.contains("o2")));
    }

    #[test]
    fn consecutive_unknowns_merge() {
        let dets = vec![det(UNKNOWN_ID, 0.0, 0.0, 10.0, 10.0), det(UNKNOWN_ID, 10.0, 0.0, 20.0, 10.0), det("o1", 20.0, 0.0, 30.0, 10.0)];
        let p = form_planogram("s", &dets, &PlanogramParams::default()).unwrap();
        assert_eq!(pairs(&p), [("U".into(), 2), ("o1".into(), 1)]);
    }

    #[test]
    fn wide_unknown_counts_by_width_when_enabled() {
        let dets = vec![det("o1", 0.0, 0.0, 10.0, 10.0), det(UNKNOWN_ID, 10.0, 0.0, 35.0, 10.0)];
        let off = form_planogram("s", &dets, &PlanogramParams::default()).unwrap();
        assert_eq!(off.entries[1].quantity, 1);
        let params = PlanogramParams {
            unknown_count_by_width: true,
            ..PlanogramParams::default()
        };
        let on = form_planogram("s", &dets, &params).unwrap();
        assert_eq!(on.entries[1].quantity, 3);
    }

    const REFERENCE_JSON: &str = r#"{
        "shelf_id": "reference",
        "products": [
            {"id": "o1", "image": "models/o1.png", "quantity": 3},
            {"id": "o2", "image": "models/o2.png", "quantity": 5},
            {"id": "o3", "image": "models/o3.png", "quantity": 5},
            {"id": "o4", "image": "models/o4.png", "quantity": 4},
            {"id": "o5", "image": "/abs/o5.png", "quantity": 2}
        ]
    }"#;

    #[test]
    fn reference_file_loads_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.json");
        std::fs::write(&path, REFERENCE_JSON).unwrap();
        let p = load_reference(&path).unwrap();
        assert_eq!(p.summary(), "o1:3 o2:5 o3:5 o4:4 o5:2");
        assert_eq!(p.entries[0].image.as_deref(), Some(dir.path().join("models/o1.png").as_path()));
        assert_eq!(p.entries[4].image.as_deref(), Some(Path::new("/abs/o5.png")));
        assert_eq!(p.total_quantity(), 19);
    }

    #[test]
    fn reference_validation_errors() {
        let empty = r#"{"shelf_id": "s", "products": []}"#;
        assert!(matches!(parse_reference(empty, None), Err(Error::Validation(_))));
        let dup = r#"{"shelf_id": "s", "products": [{"id": "o1", "quantity": 2}, {"id": "o1", "quantity": 3}]}"#;
        assert!(matches!(parse_reference(dup, None), Err(Error::Validation(_))));
        let zero = r#"{"shelf_id": "s", "products": [{"id": "o1", "quantity": 0}]}"#;
        assert!(matches!(parse_reference(zero, None), Err(Error::Validation(_))));
        let neg = r#"{"shelf_id": "s", "products": [{"id": "o1", "quantity": -2}]}"#;
        assert!(matches!(parse_reference(neg, None), Err(Error::Validation(_))));
        let sentinel = r#"{"shelf_id": "s", "products": [{"id": "__empty__", "quantity": 1}]}"#;
        assert!(matches!(parse_reference(sentinel, None), Err(Error::Validation(_))));
        let p = parse_reference(r#"{"shelf_id": "s", "products": [{"id": "o1", "quantity": 1}]}"#, None).unwrap();
        assert!(check_known_ids(&p, ["o2"]).is_err());
        assert!(check_known_ids(&p, ["o1", "o2"]).is_ok());
        assert!(load_reference("/nonexistent/ref.json").is_err());
    }

    #[test]
    fn detected_planogram_json_shape() {
        let dets = vec![det("o1", 0.0, 0.0, 10.0, 10.0), det(EMPTY_ID, 10.0, 0.0, 20.0, 10.0)];
        let p = form_planogram("s", &dets, &PlanogramParams::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["products"][1]["id"], "__empty__");
        assert_eq!(v["products"][0]["bbox"], serde_json::json!([0.0, 0.0, 10.0, 10.0]));
        assert!(v["products"][0].get("image").is_none());
    }

    fn arb_row() -> impl Strategy<Value = Vec<DetectedObject>> {
        proptest::collection::vec(0usize..4, 1..15).prop_map(|kinds| {
            let ids = ["o1", "o2", EMPTY_ID, UNKNOWN_ID];
            kinds
                .iter()
                .enumerate()
                .map(|(i, &k)| det(ids[k], i as f64 * 10.0, 0.0, i as f64 * 10.0 + 9.0, 30.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn formation_invariants(dets in arb_row(), seed in any::<u64>()) {
            let params = PlanogramParams::default();
            let p = form_planogram("s", &dets, &params).unwrap();
            prop_assert_eq!(p.total_quantity(), dets.len() as u64);
            for w in p.entries.windows(2) {
                prop_assert!(w[0].kind != w[1].kind);
                prop_assert!(w[0].bbox.unwrap().center().0 < w[1].bbox.unwrap().center().0);
            }
            // any input order gives the same planogram
            let mut shuffled = dets.clone();
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(&form_planogram("s", &shuffled, &params).unwrap(), &p);
            // re-forming from the merged boxes keeps the entry sequence
            let merged: Vec<DetectedObject> = p
                .entries
                .iter()
                .map(|e| DetectedObject::region(e.kind.clone(), e.bbox.unwrap()))
                .collect();
            let again = form_planogram("s", &merged, &params).unwrap();
            let kinds = |p: &Planogram| p.entries.iter().map(|e| e.kind.clone()).collect::<Vec<_>>();
            prop_assert_eq!(kinds(&again), kinds(&p));
        }
    }
}
