//! Seeded synthetic shelves with exact ground truth.
//!
//! Product sprites are procedural: a bright background covered with random
//! blocks, so every product has its own corner layout. Shelves are rows of
//! sprites on a mid-grey background with optional perturbations.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{truth_labels, GroundTruth, GtBox};
use crate::alignment::align;
use crate::detection::{DetectedObject, ObjectKind};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::imaging::GrayImage;
use crate::planogram::{form_planogram, Planogram, PlanogramEntry, PlanogramParams};

pub const SPRITE_HEIGHT: u32 = 128;

fn id_seed(id: &str, seed: u64) -> u64 {
    // FNV-1a, stable across platforms and runs
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Procedural product sprite, `SPRITE_HEIGHT` tall and 56 to 72 pixels wide.
pub fn product_sprite(seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.random_range(56..=72u32);
    let h = SPRITE_HEIGHT;
    let background = rng.random_range(150..=210u8);
    let mut img = GrayImage::filled(w, h, background);
    let contrasting = |rng: &mut ChaCha8Rng| loop {
        let v = rng.random_range(0..=255u8);
        if (v as i32 - background as i32).abs() >= 50 {
            break v;
        }
    };
    let fill = |img: &mut GrayImage, x0: u32, y0: u32, bw: u32, bh: u32, v: u8| {
        for y in y0..(y0 + bh).min(h) {
            for x in x0..(x0 + bw).min(w) {
                img.set(x, y, v);
            }
        }
    };
    for _ in 0..rng.random_range(8..=12) {
        let bw = rng.random_range(8..=28u32);
        let bh = rng.random_range(8..=36u32);
        let x0 = rng.random_range(3..w - 3 - bw.min(w - 6));
        let y0 = rng.random_range(3..h - 3 - bh.min(h - 6));
        let v = contrasting(&mut rng);
        fill(&mut img, x0, y0, bw, bh, v);
    }
    for _ in 0..rng.random_range(10..=16) {
        let s = rng.random_range(4..=8u32);
        let x0 = rng.random_range(3..w - 3 - s);
        let y0 = rng.random_range(3..h - 3 - s);
        let v = contrasting(&mut rng);
        fill(&mut img, x0, y0, s, s, v);
    }
    img
}

/// One sprite per id; the same id and seed always give the same sprite.
pub fn product_sprites<'a>(ids: impl IntoIterator<Item = &'a str>, seed: u64) -> BTreeMap<String, GrayImage> {
    ids.into_iter()
        .map(|id| (id.to_string(), product_sprite(id_seed(id, seed))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutGroup {
    pub id: String,
    pub count: u32,
}

/// Changes applied to the expanded item row, in order. Positions index the
/// row as it stands when the perturbation is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Perturbation {
    /// Dark empty space before `before`; the width defaults to the mean product width.
    Gap {
        before: usize,
        #[serde(default)]
        width: Option<u32>,
    },
    /// Drop the last item of layout group `group`.
    RemoveItem { group: usize },
    SwapItems { a: usize, b: usize },
    /// A product that is not in the planogram, placed before `before`.
    InsertForeign { before: usize },
    /// Flat patch over the top `fraction` of item `item`.
    Occlude { item: usize, fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub shelf_id: String,
    pub layout: Vec<LayoutGroup>,
    pub perturbations: Vec<Perturbation>,
    pub seed: u64,
    /// Seed of the product sprites; keep it fixed to share models across shelves.
    pub sprite_seed: u64,
    /// Fixed canvas width; by default the row width plus margins.
    pub canvas_width: Option<u32>,
    pub margin: u32,
    pub min_spacing: u32,
    pub max_spacing: u32,
    /// Extra random offset of each item, in pixels.
    pub position_jitter: u32,
    /// Relative brightness change per item.
    pub brightness_jitter: f64,
    pub background: u8,
    pub gap_intensity: u8,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            shelf_id: "synthetic".into(),
            layout: Vec::new(),
            perturbations: Vec::new(),
            seed: 0,
            sprite_seed: 0,
            canvas_width: None,
            margin: 12,
            min_spacing: 2,
            max_spacing: 4,
            position_jitter: 5,
            brightness_jitter: 0.1,
            background: 100,
            gap_intensity: 20,
        }
    }
}

impl SynthSpec {
    pub fn from_layout(shelf_id: &str, layout: &[(&str, u32)], seed: u64) -> Self {
        SynthSpec {
            shelf_id: shelf_id.into(),
            layout: layout
                .iter()
                .map(|&(id, count)| LayoutGroup { id: id.into(), count })
                .collect(),
            seed,
            ..SynthSpec::default()
        }
    }

    /// The layout as a reference planogram.
    pub fn reference(&self) -> Planogram {
        Planogram {
            shelf_id: self.shelf_id.clone(),
            entries: self
                .layout
                .iter()
                .map(|g| PlanogramEntry::new(ObjectKind::product(g.id.as_str()), g.count))
                .collect(),
        }
    }

    pub fn product_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.layout.iter().map(|g| g.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn validate(&self) -> Result<()> {
        if self.layout.iter().all(|g| g.count == 0) {
            return Err(Error::Validation("synthetic layout has no products".into()));
        }
        self.reference().validate()?;
        if self.min_spacing > self.max_spacing {
            return Err(Error::Validation("min_spacing exceeds max_spacing".into()));
        }
        if !(0.0..1.0).contains(&self.brightness_jitter) {
            return Err(Error::Validation(format!(
                "brightness jitter must lie in [0, 1), got {}",
                self.brightness_jitter
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Item { id: String, group: usize, occlusion: f64 },
    Foreign,
    Gap { width: Option<u32> },
}

fn out_of_range(what: &str, index: usize, len: usize) -> Error {
    Error::Validation(format!("{what} {index} out of range for a row of {len}"))
}

fn build_row(spec: &SynthSpec) -> Result<Vec<Slot>> {
    let mut row: Vec<Slot> = Vec::new();
    for (group, g) in spec.layout.iter().enumerate() {
        for _ in 0..g.count {
            row.push(Slot::Item {
                id: g.id.clone(),
                group,
                occlusion: 0.0,
            });
        }
    }
    for p in &spec.perturbations {
        match *p {
            Perturbation::Gap { before, width } => {
                if before > row.len() {
                    return Err(out_of_range("gap position", before, row.len()));
                }
                row.insert(before, Slot::Gap { width });
            }
            Perturbation::InsertForeign { before } => {
                if before > row.len() {
                    return Err(out_of_range("foreign position", before, row.len()));
                }
                row.insert(before, Slot::Foreign);
            }
            Perturbation::RemoveItem { group } => {
                if group >= spec.layout.len() {
                    return Err(out_of_range("group", group, spec.layout.len()));
                }
                let idx = row
                    .iter()
                    .rposition(|s| matches!(s, Slot::Item { group: g, .. } if *g == group))
                    .ok_or_else(|| Error::Validation(format!("group {group} has no item left to remove")))?;
                row.remove(idx);
            }
            Perturbation::SwapItems { a, b } => {
                if a >= row.len() || b >= row.len() {
                    return Err(out_of_range("swap position", a.max(b), row.len()));
                }
                row.swap(a, b);
            }
            Perturbation::Occlude { item, fraction } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(Error::Validation(format!("occlusion fraction must lie in [0, 1], got {fraction}")));
                }
                match row.get_mut(item) {
                    Some(Slot::Item { occlusion, .. }) => *occlusion = fraction,
                    _ => return Err(Error::Validation(format!("occlusion target {item} is not a product"))),
                }
            }
        }
    }
    Ok(row)
}

/// A composited shelf with its ground truth and reference planogram.
#[derive(Debug, Clone)]
pub struct SynthShelf {
    pub image: GrayImage,
    pub truth: GroundTruth,
    pub reference: Planogram,
}

/// Composite a shelf from `spec` using `sprites` for the products.
pub fn synth_shelf(spec: &SynthSpec, sprites: &BTreeMap<String, GrayImage>) -> Result<SynthShelf> {
    spec.validate()?;
    for id in spec.product_ids() {
        if !sprites.contains_key(id) {
            return Err(Error::Validation(format!("no sprite for product '{id}'")));
        }
    }
    let row = build_row(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let foreign = product_sprite(id_seed("__foreign__", spec.seed));

    let item_widths: Vec<u32> = row
        .iter()
        .filter_map(|s| match s {
            Slot::Item { id, .. } => Some(sprites[id].width()),
            _ => None,
        })
        .collect();
    let mean_width = if item_widths.is_empty() {
        64
    } else {
        (item_widths.iter().sum::<u32>() as f64 / item_widths.len() as f64).round() as u32
    };
    let height = sprites
        .values()
        .map(GrayImage::height)
        .chain([foreign.height()])
        .max()
        .unwrap_or(SPRITE_HEIGHT);

    // positions first, so the canvas width is known before painting
    let mut placed: Vec<(usize, u32, u32)> = Vec::new();
    let mut cursor = spec.margin;
    for (i, slot) in row.iter().enumerate() {
        if i > 0 {
            cursor += rng.random_range(spec.min_spacing..=spec.max_spacing);
        }
        cursor += rng.random_range(0..=spec.position_jitter);
        let w = match slot {
            Slot::Item { id, .. } => sprites[id].width(),
            Slot::Foreign => foreign.width(),
            Slot::Gap { width } => width.unwrap_or(mean_width),
        };
        placed.push((i, cursor, w));
        cursor += w;
    }
    let needed = cursor + spec.margin;
    let canvas_width = match spec.canvas_width {
        Some(cw) if cw < needed => {
            return Err(Error::Layout(format!(
                "products need {needed} px but the canvas is {cw} px wide"
            )))
        }
        Some(cw) => cw,
        None => needed,
    };

    let mut image = GrayImage::filled(canvas_width, height, spec.background);
    let mut boxes = Vec::with_capacity(row.len());
    let mut objects = Vec::with_capacity(row.len());
    for (i, x, w) in placed {
        let (kind, sprite, occlusion) = match &row[i] {
            Slot::Item { id, occlusion, .. } => (ObjectKind::product(id.as_str()), Some(&sprites[id]), *occlusion),
            Slot::Foreign => (ObjectKind::Unknown, Some(&foreign), 0.0),
            Slot::Gap { .. } => (ObjectKind::Empty, None, 0.0),
        };
        let bbox = match sprite {
            Some(s) => {
                let gain = 1.0 + rng.random_range(-spec.brightness_jitter..=spec.brightness_jitter);
                let top = height - s.height();
                let occluded = (occlusion * s.height() as f64).round() as u32;
                for y in 0..s.height() {
                    for sx in 0..s.width() {
                        let v = if y < occluded {
                            spec.background
                        } else {
                            (s.get(sx, y) as f64 * gain).round().clamp(0.0, 255.0) as u8
                        };
                        image.set(x + sx, top + y, v);
                    }
                }
                BoundingBox::new(x as f64, top as f64, (x + s.width()) as f64, height as f64)
            }
            None => {
                for y in 0..height {
                    for sx in x..x + w {
                        image.set(sx, y, spec.gap_intensity);
                    }
                }
                BoundingBox::new(x as f64, 0.0, (x + w) as f64, height as f64)
            }
        };
        boxes.push(GtBox { id: kind.clone(), bbox });
        objects.push(DetectedObject::region(kind, bbox));
    }

    let reference = spec.reference();
    let layout = form_planogram(&spec.shelf_id, &objects, &PlanogramParams::default())?;
    let labels = truth_labels(&align(&layout, &reference)?);
    Ok(SynthShelf {
        image,
        truth: GroundTruth {
            shelf_id: spec.shelf_id.clone(),
            boxes,
            labels,
        },
        reference,
    })
}

/// Shelf situations of the end-to-end benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Compliant,
    ForeignInsert,
    RemovedItem,
    EmptyGap,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Compliant,
        Scenario::ForeignInsert,
        Scenario::RemovedItem,
        Scenario::EmptyGap,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Compliant => "compliant",
            Scenario::ForeignInsert => "foreign_insert",
            Scenario::RemovedItem => "removed_item",
            Scenario::EmptyGap => "empty_gap",
        }
    }
}

/// Ids of the benchmark products.
pub const BENCHMARK_PRODUCTS: [&str; 5] = ["p1", "p2", "p3", "p4", "p5"];

/// Benchmark shelf: five products in a seed-dependent order and quantity,
/// with the perturbation of `scenario` at a seed-dependent position.
pub fn scenario_spec(scenario: Scenario, seed: u64) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(id_seed(scenario.name(), seed));
    let mut ids = BENCHMARK_PRODUCTS.to_vec();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let layout: Vec<(&str, u32)> = ids.iter().map(|&id| (id, rng.random_range(1..=3u32))).collect();
    let total: u32 = layout.iter().map(|g| g.1).sum();
    let mut spec = SynthSpec::from_layout(&format!("{}-{seed}", scenario.name()), &layout, seed);
    // interior positions keep perturbations away from the shelf ends
    let interior = rng.random_range(1..total as usize);
    spec.perturbations = match scenario {
        Scenario::Compliant => vec![],
        Scenario::ForeignInsert => vec![Perturbation::InsertForeign { before: interior }],
        Scenario::EmptyGap => vec![Perturbation::Gap { before: interior, width: None }],
        Scenario::RemovedItem => {
            let multi: Vec<usize> = (0..layout.len()).filter(|&g| layout[g].1 > 1).collect();
            let group = if multi.is_empty() {
                spec.layout[0].count += 1;
                0
            } else {
                multi[rng.random_range(0..multi.len())]
            };
            vec![Perturbation::RemoveItem { group }]
        }
    };
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::Label;

    fn reference_shelf_spec(seed: u64) -> SynthSpec {
        SynthSpec::from_layout("t1", &[("o1", 3), ("o2", 5), ("o3", 5), ("o4", 4), ("o5", 2)], seed)
    }

    fn sprites_for(spec: &SynthSpec) -> BTreeMap<String, GrayImage> {
        product_sprites(spec.product_ids(), spec.sprite_seed)
    }

    #[test]
    fn sprites_are_deterministic_and_sized() {
        let a = product_sprite(7);
        assert_eq!(a, product_sprite(7));
        assert_ne!(a, product_sprite(8));
        assert_eq!(a.height(), SPRITE_HEIGHT);
        assert!((56..=72).contains(&a.width()));
        let s = product_sprites(["p1", "p2"], 0);
        assert_ne!(s["p1"], s["p2"]);
    }

    #[test]
    fn compliant_reference_shelf() {
        let spec = reference_shelf_spec(1);
        let shelf = synth_shelf(&spec, &sprites_for(&spec)).unwrap();
        assert_eq!(shelf.truth.boxes.len(), 19);
        assert!(shelf.truth.labels.iter().all(|l| l.label == Label::MT));
        assert_eq!(shelf.truth.labels.len(), 5);
        assert_eq!(shelf.image.height(), SPRITE_HEIGHT);
        assert_eq!(shelf.reference.summary(), "o1:3 o2:5 o3:5 o4:4 o5:2");
    }

    #[test]
    fn boxes_are_pixel_exact() {
        let spec = reference_shelf_spec(3);
        let sprites = sprites_for(&spec);
        let mut unjittered = spec.clone();
        unjittered.brightness_jitter = 0.0;
        let shelf = synth_shelf(&unjittered, &sprites).unwrap();
        for b in &shelf.truth.boxes {
            let s = &sprites[b.id.as_str()];
            assert_eq!(b.bbox.width() as u32, s.width());
            for y in 0..s.height() {
                for x in 0..s.width() {
                    assert_eq!(shelf.image.get(b.bbox.x0 as u32 + x, b.bbox.y0 as u32 + y), s.get(x, y));
                }
            }
        }
        for w in shelf.truth.boxes.windows(2) {
            let gap = w[1].bbox.x0 - w[0].bbox.x1;
            assert!((2.0..=9.0).contains(&gap), "spacing {gap}");
        }
    }

    #[test]
    fn removed_item_is_missing_items() {
        let mut spec = reference_shelf_spec(2);
        spec.perturbations = vec![Perturbation::RemoveItem { group: 1 }];
        let shelf = synth_shelf(&spec, &sprites_for(&spec)).unwrap();
        assert_eq!(shelf.truth.boxes.len(), 18);
        let labels: Vec<Label> = shelf.truth.labels.iter().map(|l| l.label).collect();
        assert_eq!(labels, [Label::MT, Label::MI, Label::MT, Label::MT, Label::MT]);
    }

    #[test]
    fn foreign_item_is_a_non_match() {
        let mut spec = reference_shelf_spec(2);
        spec.perturbations = vec![Perturbation::InsertForeign { before: 8 }];
        let shelf = synth_shelf(&spec, &sprites_for(&spec)).unwrap();
        let unknown: Vec<_> = shelf.truth.boxes.iter().filter(|b| b.id == ObjectKind::Unknown).collect();
        assert_eq!(unknown.len(), 1);
        assert!(shelf.truth.labels.iter().any(|l| l.label == Label::NM));
    }

    #[test]
    fn gap_is_dark_and_labelled() {
        let mut spec = reference_shelf_spec(2);
        spec.perturbations = vec![Perturbation::Gap { before: 3, width: None }];
        let shelf = synth_shelf(&spec, &sprites_for(&spec)).unwrap();
        let gap = shelf.truth.boxes.iter().find(|b| b.id == ObjectKind::Empty).unwrap();
        assert_eq!(shelf.image.mean_in(&gap.bbox), Some(20.0));
        let keys: Vec<&str> = shelf.truth.labels.iter().map(|l| l.group.as_str()).collect();
        assert!(keys.contains(&"ins@1:__empty__#1"));
    }

    #[test]
    fn layout_errors() {
        let mut spec = reference_shelf_spec(0);
        spec.canvas_width = Some(300);
        assert!(matches!(synth_shelf(&spec, &sprites_for(&spec)), Err(Error::Layout(_))));
        let empty = SynthSpec::default();
        assert!(matches!(synth_shelf(&empty, &BTreeMap::new()), Err(Error::Validation(_))));
        let spec = reference_shelf_spec(0);
        assert!(synth_shelf(&spec, &BTreeMap::new()).is_err());
        let mut bad = reference_shelf_spec(0);
        bad.perturbations = vec![Perturbation::SwapItems { a: 0, b: 99 }];
        assert!(synth_shelf(&bad, &sprites_for(&bad)).is_err());
    }

    #[test]
    fn same_seed_same_shelf() {
        let spec = scenario_spec(Scenario::EmptyGap, 4);
        let sprites = sprites_for(&spec);
        let a = synth_shelf(&spec, &sprites).unwrap();
        let b = synth_shelf(&spec, &sprites).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn scenarios_induce_expected_labels() {
        for seed in 0..5 {
            for sc in Scenario::ALL {
                let spec = scenario_spec(sc, seed);
                let shelf = synth_shelf(&spec, &sprites_for(&spec)).unwrap();
                let labels: Vec<Label> = shelf.truth.labels.iter().map(|l| l.label).collect();
                match sc {
                    Scenario::Compliant => assert!(labels.iter().all(|&l| l == Label::MT)),
                    Scenario::RemovedItem => assert_eq!(labels.iter().filter(|&&l| l == Label::MI).count(), 1),
                    Scenario::ForeignInsert | Scenario::EmptyGap => {
                        assert!(labels.contains(&Label::NM), "{sc:?} {seed}: {labels:?}")
                    }
                }
            }
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let mut spec = reference_shelf_spec(9);
        spec.perturbations = vec![
            Perturbation::Gap { before: 2, width: Some(40) },
            Perturbation::Occlude { item: 0, fraction: 0.3 },
        ];
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains(r#""kind":"gap""#));
        let back: SynthSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
