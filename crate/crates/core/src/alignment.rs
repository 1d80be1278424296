//! Quantity-weighted Needleman-Wunsch alignment of a detected planogram
//! against the reference planogram.
//!
//! Detected entries index the rows (`d`), reference entries the columns (`t`).
//! Gap penalties are the quantity of the entry left unpaired and a substitution
//! scores `+q_t` for equal types and `-q_t` otherwise.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::detection::ObjectKind;
use crate::error::{Error, Result};
use crate::planogram::{Planogram, PlanogramEntry};

/// Id written for the missing side of a gap pair.
pub const GAP_ID: &str = "__gap__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    /// Both entries consumed.
    Diagonal,
    /// Reference entry consumed alone; the detected side shows `D`.
    Delete,
    /// Detected entry consumed alone; the reference side shows `A`.
    Insert,
}

/// Filled DP table with one traceback move per cell (the origin has none).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    values: Vec<i64>,
    moves: Vec<Option<Move>>,
}

impl ScoreMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, d: usize, t: usize) -> i64 {
        self.values[d * self.cols + t]
    }

    pub fn move_at(&self, d: usize, t: usize) -> Option<Move> {
        self.moves[d * self.cols + t]
    }

    /// Score of the optimal global alignment.
    pub fn score(&self) -> i64 {
        self.get(self.rows - 1, self.cols - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    MT,
    MI,
    ME,
    NM,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::MT => "MT",
            Label::MI => "MI",
            Label::ME => "ME",
            Label::NM => "NM",
        })
    }
}

/// One side of an aligned pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SlotRepr", into = "SlotRepr")]
pub enum Slot {
    Entry {
        kind: ObjectKind,
        quantity: u32,
        /// Position in the source planogram.
        index: usize,
    },
    Gap,
}

impl Slot {
    pub fn kind(&self) -> Option<&ObjectKind> {
        match self {
            Slot::Entry { kind, .. } => Some(kind),
            Slot::Gap => None,
        }
    }

    pub fn quantity(&self) -> u32 {
        match self {
            Slot::Entry { quantity, .. } => *quantity,
            Slot::Gap => 0,
        }
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            Slot::Entry { index, .. } => Some(*index),
            Slot::Gap => None,
        }
    }

    pub fn is_gap(&self) -> bool {
        matches!(self, Slot::Gap)
    }
}

#[derive(Serialize, Deserialize)]
struct SlotRepr {
    id: String,
    quantity: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    index: Option<usize>,
}

impl From<Slot> for SlotRepr {
    fn from(s: Slot) -> Self {
        match s {
            Slot::Entry { kind, quantity, index } => SlotRepr {
                id: kind.into(),
                quantity,
                index: Some(index),
            },
            Slot::Gap => SlotRepr {
                id: GAP_ID.to_string(),
                quantity: 0,
                index: None,
            },
        }
    }
}

impl TryFrom<SlotRepr> for Slot {
    type Error = String;

    fn try_from(r: SlotRepr) -> std::result::Result<Self, String> {
        if r.id == GAP_ID {
            return Ok(Slot::Gap);
        }
        let index = r.index.ok_or_else(|| format!("entry '{}' has no index", r.id))?;
        Ok(Slot::Entry {
            kind: ObjectKind::from(r.id),
            quantity: r.quantity,
            index,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    #[serde(rename = "ref")]
    pub reference: Slot,
    #[serde(rename = "det")]
    pub detected: Slot,
    pub label: Label,
}

/// Exact match ratio as a fraction of reference quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRatio {
    pub numerator: u64,
    pub denominator: u64,
}

impl MatchRatio {
    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    pub fn is_one(&self) -> bool {
        self.numerator == self.denominator
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOutcome {
    pub pairs: Vec<AlignedPair>,
    pub mu: f64,
    pub ratio: MatchRatio,
    pub score: i64,
}

impl AlignmentOutcome {
    pub fn labels(&self) -> Vec<Label> {
        self.pairs.iter().map(|p| p.label).collect()
    }

    /// Three-row text table: reference, detected and result.
    pub fn render_table(&self) -> String {
        let cell = |s: &Slot, gap: &str| match s {
            Slot::Entry { kind, quantity, .. } => format!("{}:{}", kind.short(), quantity),
            Slot::Gap => format!("{gap}:0"),
        };
        let cols: Vec<[String; 3]> = self
            .pairs
            .iter()
            .map(|p| [cell(&p.reference, "A"), cell(&p.detected, "D"), p.label.to_string()])
            .collect();
        let mut out = String::new();
        for (row, name) in ["L_r", "L_s", "Result"].iter().enumerate() {
            out.push_str(&format!("{name:<7}"));
            for c in &cols {
                let w = c.iter().map(String::len).max().unwrap_or(0);
                out.push_str(&format!(" {:<w$}", c[row]));
            }
            let trimmed = out.trim_end().len();
            out.truncate(trimmed);
            out.push('\n');
        }
        out.push_str(&format!(
            "mu = {}/{} = {:.4}\n",
            self.ratio.numerator, self.ratio.denominator, self.mu
        ));
        out
    }
}

fn same_type(det: &ObjectKind, reference: &ObjectKind) -> bool {
    det.is_product() && det == reference
}

/// `+q_t` when the types agree, `-q_t` otherwise; empty and unknown never agree.
pub fn substitution_score(det: &PlanogramEntry, reference: &PlanogramEntry) -> i64 {
    let q = reference.quantity as i64;
    if same_type(&det.kind, &reference.kind) {
        q
    } else {
        -q
    }
}

/// Label of an aligned pair.
pub fn classify(reference: &Slot, detected: &Slot) -> Label {
    match (reference, detected) {
        (
            Slot::Entry { kind: kt, quantity: qt, .. },
            Slot::Entry { kind: kd, quantity: qd, .. },
        ) if same_type(kd, kt) => match qd.cmp(qt) {
            std::cmp::Ordering::Equal => Label::MT,
            std::cmp::Ordering::Less => Label::MI,
            std::cmp::Ordering::Greater => Label::ME,
        },
        _ => Label::NM,
    }
}

fn check_non_empty(det: &Planogram, reference: &Planogram) -> Result<()> {
    if det.is_empty() {
        return Err(Error::InvalidArgument("detected planogram is empty".into()));
    }
    if reference.is_empty() {
        return Err(Error::InvalidArgument("reference planogram is empty".into()));
    }
    Ok(())
}

/// Fill the score matrix. Ties prefer diagonal, then delete, then insert.
pub fn score_matrix(det: &Planogram, reference: &Planogram) -> Result<ScoreMatrix> {
    check_non_empty(det, reference)?;
    let rows = det.len() + 1;
    let cols = reference.len() + 1;
    let mut values = vec![0i64; rows * cols];
    let mut moves = vec![None; rows * cols];
    for t in 1..cols {
        values[t] = -(t as i64);
        moves[t] = Some(Move::Delete);
    }
    for d in 1..rows {
        values[d * cols] = -(d as i64);
        moves[d * cols] = Some(Move::Insert);
    }
    for d in 1..rows {
        let de = &det.entries[d - 1];
        for t in 1..cols {
            let te = &reference.entries[t - 1];
            let diag = values[(d - 1) * cols + t - 1] + substitution_score(de, te);
            let del = values[d * cols + t - 1] - te.quantity as i64;
            let ins = values[(d - 1) * cols + t] - de.quantity as i64;
            let (v, m) = if diag >= del && diag >= ins {
                (diag, Move::Diagonal)
            } else if del >= ins {
                (del, Move::Delete)
            } else {
                (ins, Move::Insert)
            };
            values[d * cols + t] = v;
            moves[d * cols + t] = Some(m);
        }
    }
    Ok(ScoreMatrix {
        rows,
        cols,
        values,
        moves,
    })
}

fn slot(p: &Planogram, index: usize) -> Slot {
    let e = &p.entries[index];
    Slot::Entry {
        kind: e.kind.clone(),
        quantity: e.quantity,
        index,
    }
}

/// `sum(min(q_d, q_t))` over same-type pairs divided by the total reference quantity.
pub fn match_ratio(pairs: &[AlignedPair]) -> Result<MatchRatio> {
    let denominator: u64 = pairs.iter().map(|p| p.reference.quantity() as u64).sum();
    if denominator == 0 {
        return Err(Error::InvalidArgument(
            "match ratio undefined: no reference quantity in the alignment".into(),
        ));
    }
    let numerator = pairs
        .iter()
        .filter(|p| match (p.detected.kind(), p.reference.kind()) {
            (Some(kd), Some(kt)) => same_type(kd, kt),
            _ => false,
        })
        .map(|p| p.detected.quantity().min(p.reference.quantity()) as u64)
        .sum();
    Ok(MatchRatio {
        numerator,
        denominator,
    })
}

/// Align a detected planogram against the reference and score compliance.
pub fn align(det: &Planogram, reference: &Planogram) -> Result<AlignmentOutcome> {
    let f = score_matrix(det, reference)?;
    let (mut d, mut t) = (det.len(), reference.len());
    let mut pairs = Vec::with_capacity(d.max(t));
    while d > 0 || t > 0 {
        let (r, s) = match f.move_at(d, t).expect("only the origin lacks a move") {
            Move::Diagonal => {
                d -= 1;
                t -= 1;
                (slot(reference, t), slot(det, d))
            }
            Move::Delete => {
                t -= 1;
                (slot(reference, t), Slot::Gap)
            }
            Move::Insert => {
                d -= 1;
                (Slot::Gap, slot(det, d))
            }
        };
        let label = classify(&r, &s);
        pairs.push(AlignedPair {
            reference: r,
            detected: s,
            label,
        });
    }
    pairs.reverse();
    let ratio = match_ratio(&pairs)?;
    Ok(AlignmentOutcome {
        pairs,
        mu: ratio.value(),
        ratio,
        score: f.score(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::*;

    fn reference_shelf() -> Planogram {
        Planogram::from_pairs("ref", &[("o1", 3), ("o2", 5), ("o3", 5), ("o4", 4), ("o5", 2)])
    }

    fn sides(o: &AlignmentOutcome) -> (Vec<String>, Vec<String>) {
        let show = |s: &Slot, gap: &str| match s {
            Slot::Entry { kind, quantity, .. } => format!("{}:{quantity}", kind.short()),
            Slot::Gap => gap.to_string(),
        };
        (
            o.pairs.iter().map(|p| show(&p.reference, "A")).collect(),
            o.pairs.iter().map(|p| show(&p.detected, "D")).collect(),
        )
    }

    /// Hand summation of the min-capped ratio over a label/quantity table.
    fn hand_ratio(rows: &[(&str, u32, &str, u32)]) -> (u64, u64) {
        let num = rows
            .iter()
            .filter(|(t, _, d, _)| t == d && !t.is_empty())
            .map(|(_, qt, _, qd)| (*qt).min(*qd) as u64)
            .sum();
        let den = rows.iter().map(|r| r.1 as u64).sum();
        (num, den)
    }

    #[test]
    fn substitution_arms() {
        let e = |id: &str, q| PlanogramEntry::new(id, q);
        assert_eq!(substitution_score(&e("o2", 9), &e("o2", 5)), 5);
        assert_eq!(substitution_score(&e("o1", 5), &e("o2", 5)), -5);
        assert_eq!(substitution_score(&e("__unknown__", 1), &e("o5", 2)), -2);
        assert_eq!(substitution_score(&e("__empty__", 1), &e("__empty__", 1)), -1);
    }

    #[test]
    fn first_row_and_column_step_by_one() {
        let det = Planogram::from_pairs("d", &[("o1", 7), ("o2", 9), ("o3", 4)]);
        let f = score_matrix(&det, &reference_shelf()).unwrap();
        assert_eq!(f.get(0, 0), 0);
        for t in 1..f.cols() {
            assert_eq!(f.get(0, t), -(t as i64));
        }
        for d in 1..f.rows() {
            assert_eq!(f.get(d, 0), -(d as i64));
        }
    }

    #[test]
    fn fully_compliant_first_iteration() {
        let det = Planogram::from_pairs("d", &[("o1", 3), ("o2", 5), ("o3", 5), ("o4", 4), ("U", 1)]);
        let o = align(&det, &reference_shelf()).unwrap();
        assert_eq!(o.labels(), [MT, MT, MT, MT, NM]);
        assert!(o.pairs.iter().all(|p| !p.reference.is_gap() && !p.detected.is_gap()));
        let expected = hand_ratio(&[("o1", 3, "o1", 3), ("o2", 5, "o2", 5), ("o3", 5, "o3", 5), ("o4", 4, "o4", 4), ("o5", 2, "U", 1)]);
        assert_eq!(expected, (17, 19));
        assert_eq!((o.ratio.numerator, o.ratio.denominator), expected);
        assert_eq!(format!("{:.2}", o.mu), "0.89");
    }

    #[test]
    fn partially_compliant_first_iteration() {
        let det = Planogram::from_pairs("d", &[("U", 1), ("o1", 2), ("o2", 6), ("o3", 3), ("E", 1), ("o4", 3), ("U", 1)]);
        let o = align(&det, &reference_shelf()).unwrap();
        let (r, d) = sides(&o);
        assert_eq!(r, ["A", "o1:3", "o2:5", "o3:5", "A", "o4:4", "o5:2"]);
        assert_eq!(d, ["U:1", "o1:2", "o2:6", "o3:3", "E:1", "o4:3", "U:1"]);
        assert_eq!(o.labels(), [NM, MI, ME, MI, NM, MI, NM]);
        let expected = hand_ratio(&[("", 0, "U", 1), ("o1", 3, "o1", 2), ("o2", 5, "o2", 6), ("o3", 5, "o3", 3), ("", 0, "E", 1), ("o4", 4, "o4", 3), ("o5", 2, "U", 1)]);
        assert_eq!(expected, (13, 19));
        assert_eq!((o.ratio.numerator, o.ratio.denominator), expected);
        assert_eq!(format!("{:.2}", o.mu), "0.68");
    }

    #[test]
    fn partially_compliant_after_search() {
        let det = Planogram::from_pairs("d", &[("U", 1), ("o1", 3), ("o2", 6), ("o3", 3), ("E", 1), ("o4", 3), ("U", 1)]);
        let o = align(&det, &reference_shelf()).unwrap();
        assert_eq!(o.labels(), [NM, MT, ME, MI, NM, MI, NM]);
        assert_eq!((o.ratio.numerator, o.ratio.denominator), (14, 19));
        assert_eq!(format!("{:.4}", o.mu), "0.7368");
    }

    #[test]
    fn literal_ratio_would_disagree_with_partial_example() {
        // uncapped q_d over same-type pairs
        let literal: u32 = [2, 6, 3, 3].iter().sum();
        assert_eq!(literal, 14);
        assert_ne!(literal, 13);
    }

    #[test]
    fn identical_planograms_are_compliant() {
        let o = align(&reference_shelf(), &reference_shelf()).unwrap();
        assert!(o.labels().iter().all(|&l| l == MT));
        assert!(o.ratio.is_one());
        assert_eq!(o.mu, 1.0);
    }

    #[test]
    fn empty_planograms_are_rejected() {
        let empty = Planogram { shelf_id: "e".into(), entries: vec![] };
        assert!(matches!(align(&empty, &reference_shelf()), Err(Error::InvalidArgument(_))));
        assert!(matches!(align(&reference_shelf(), &empty), Err(Error::InvalidArgument(_))));
        assert!(match_ratio(&[]).is_err());
    }

    #[test]
    fn outcome_json_shape_round_trips() {
        let det = Planogram::from_pairs("d", &[("U", 1), ("o1", 2), ("o2", 6), ("o3", 3), ("E", 1), ("o4", 3), ("U", 1)]);
        let o = align(&det, &reference_shelf()).unwrap();
        let v = serde_json::to_value(&o).unwrap();
        assert_eq!(v["pairs"][0]["ref"]["id"], GAP_ID);
        assert_eq!(v["pairs"][0]["det"]["id"], "__unknown__");
        assert_eq!(v["pairs"][1]["label"], "MI");
        let back: AlignmentOutcome = serde_json::from_value(v).unwrap();
        assert_eq!(back, o);
    }

    #[test]
    fn table_rendering() {
        let det = Planogram::from_pairs("d", &[("o1", 3), ("o2", 5), ("o3", 5), ("o4", 4), ("U", 1)]);
        let text = align(&det, &reference_shelf()).unwrap().render_table();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "L_r     o1:3 o2:5 o3:5 o4:4 o5:2");
        assert_eq!(lines[1], "L_s     o1:3 o2:5 o3:5 o4:4 U:1");
        assert_eq!(lines[2], "Result  MT   MT   MT   MT   NM");
        assert_eq!(lines[3], "mu = 17/19 = 0.8947");
    }

    /// Best score over every monotone path, enumerated without memoisation.
    /// Steps along the first row or column cost 1, as in the initialisation.
    fn exhaustive_best(det: &Planogram, reference: &Planogram) -> (i64, u64) {
        fn go(det: &Planogram, r: &Planogram, d: usize, t: usize, acc: i64, best: &mut i64, paths: &mut u64) {
            if d == det.len() && t == r.len() {
                *best = (*best).max(acc);
                *paths += 1;
                return;
            }
            if d < det.len() && t < r.len() {
                let s = substitution_score(&det.entries[d], &r.entries[t]);
                go(det, r, d + 1, t + 1, acc + s, best, paths);
            }
            if t < r.len() {
                let cost = if d == 0 { 1 } else { r.entries[t].quantity as i64 };
                go(det, r, d, t + 1, acc - cost, best, paths);
            }
            if d < det.len() {
                let cost = if t == 0 { 1 } else { det.entries[d].quantity as i64 };
                go(det, r, d + 1, t, acc - cost, best, paths);
            }
        }
        let mut best = i64::MIN;
        let mut paths = 0;
        go(det, reference, 0, 0, 0, &mut best, &mut paths);
        (best, paths)
    }

    /// Score of an alignment read back from its pairs.
    fn path_score(o: &AlignmentOutcome, det: &Planogram, reference: &Planogram) -> i64 {
        let (mut d, mut t, mut acc) = (0usize, 0usize, 0i64);
        for p in &o.pairs {
            match (&p.reference, &p.detected) {
                (Slot::Entry { .. }, Slot::Entry { .. }) => {
                    acc += substitution_score(&det.entries[d], &reference.entries[t]);
                    d += 1;
                    t += 1;
                }
                (Slot::Entry { quantity, .. }, Slot::Gap) => {
                    acc -= if d == 0 { 1 } else { *quantity as i64 };
                    t += 1;
                }
                (Slot::Gap, Slot::Entry { quantity, .. }) => {
                    acc -= if t == 0 { 1 } else { *quantity as i64 };
                    d += 1;
                }
                (Slot::Gap, Slot::Gap) => panic!("double gap"),
            }
        }
        acc
    }

    #[test]
    fn path_count_matches_delannoy_number() {
        let p = Planogram::from_pairs("p", &[("a", 1), ("b", 1), ("a", 1), ("b", 1), ("a", 1), ("b", 1)]);
        assert_eq!(exhaustive_best(&p, &p).1, 8989);
    }

    fn arb_planogram() -> impl Strategy<Value = Planogram> {
        let ids = ["o1", "o2", "o3", "E", "U"];
        proptest::collection::vec((0usize..5, 1u32..=9), 1..=6).prop_map(move |v| {
            let pairs: Vec<(&str, u32)> = v.iter().map(|&(k, q)| (ids[k], q)).collect();
            Planogram::from_pairs("p", &pairs)
        })
    }

    fn strip(slots: impl Iterator<Item = Slot>, p: &Planogram) -> bool {
        let kept: Vec<(usize, ObjectKind, u32)> = slots
            .filter_map(|s| match s {
                Slot::Entry { kind, quantity, index } => Some((index, kind, quantity)),
                Slot::Gap => None,
            })
            .collect();
        kept.len() == p.len()
            && kept
                .iter()
                .enumerate()
                .all(|(i, (idx, k, q))| *idx == i && *k == p.entries[i].kind && *q == p.entries[i].quantity)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn dp_equals_exhaustive_search(det in arb_planogram(), reference in arb_planogram()) {
            let o = align(&det, &reference).unwrap();
            let (best, _) = exhaustive_best(&det, &reference);
            prop_assert_eq!(o.score, best);
            prop_assert_eq!(path_score(&o, &det, &reference), best);
            prop_assert!(strip(o.pairs.iter().map(|p| p.reference.clone()), &reference));
            prop_assert!(strip(o.pairs.iter().map(|p| p.detected.clone()), &det));
            prop_assert!(o.pairs.iter().all(|p| !(p.reference.is_gap() && p.detected.is_gap())));
            prop_assert!((0.0..=1.0).contains(&o.mu));
            prop_assert_eq!(align(&det, &reference).unwrap(), o);
        }

        #[test]
        fn labels_follow_the_classification_rule(det in arb_planogram(), reference in arb_planogram()) {
            let o = align(&det, &reference).unwrap();
            for p in &o.pairs {
                let expected = match (&p.reference, &p.detected) {
                    (Slot::Entry { kind: kt, quantity: qt, .. }, Slot::Entry { kind: kd, quantity: qd, .. })
                        if kd == kt && kd.is_product() =>
                    {
                        if qd == qt { MT } else if qd < qt { MI } else { ME }
                    }
                    _ => NM,
                };
                prop_assert_eq!(p.label, expected);
            }
        }

        #[test]
        fn full_ratio_iff_every_reference_entry_is_covered(det in arb_planogram(), reference in arb_planogram()) {
            let o = align(&det, &reference).unwrap();
            let covered = o.pairs.iter().filter(|p| !p.reference.is_gap()).all(|p| matches!(p.label, MT | ME));
            prop_assert_eq!(o.ratio.is_one(), covered);
            let all_mt = o.pairs.iter().all(|p| p.label == MT);
            if all_mt {
                prop_assert!(o.ratio.is_one());
            }
        }
    }
}
