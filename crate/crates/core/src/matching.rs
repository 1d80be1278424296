//! Brute-force descriptor matching with the dynamic ratio test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Feature, FeatureSet};
use crate::imaging::RoiMask;

/// A shelf feature matched to one model feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatch {
    pub shelf_index: usize,
    pub model_index: usize,
    /// Distance to the best model feature.
    pub distance: f64,
    /// Best over second-best distance.
    pub ratio: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "iteration parameter alpha must lie in (0, 1], got {alpha}"
        )))
    }
}

/// Ratio-test threshold `1 - 0.15 * alpha`.
pub fn matching_threshold(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    // (20 - 3a) / 20 is exact for the dyadic alphas produced by 0.75 decay
    Ok((20.0 - 3.0 * alpha) / 20.0)
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    check_alpha(alpha)
}

/// Match every shelf feature against the model and keep those passing the ratio test.
pub fn match_features(shelf: &FeatureSet, model: &FeatureSet, tau: f64) -> Result<Vec<FeatureMatch>> {
    match_features_in(shelf, model, tau, &RoiMask::full())
}

/// Like [`match_features`], restricted to shelf keypoints inside `roi`.
pub fn match_features_in(
    shelf: &FeatureSet,
    model: &FeatureSet,
    tau: f64,
    roi: &RoiMask,
) -> Result<Vec<FeatureMatch>> {
    if shelf.kind() != model.kind() || shelf.descriptor_len() != model.descriptor_len() {
        return Err(Error::InvalidArgument(format!(
            "descriptor mismatch: shelf {:?}/{} vs model {:?}/{}",
            shelf.kind(),
            shelf.descriptor_len(),
            model.kind(),
            model.descriptor_len()
        )));
    }
    if !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("ratio threshold must be finite, got {tau}")));
    }
    let model_entries = model.entries();
    Ok(shelf
        .entries()
        .par_iter()
        .enumerate()
        .filter(|(_, f)| roi.contains(f.keypoint.x as f64, f.keypoint.y as f64))
        .filter_map(|(i, f)| best_match(f, model_entries, tau).map(|m| FeatureMatch { shelf_index: i, ..m }))
        .collect())
}

fn best_match(query: &Feature, model: &[Feature], tau: f64) -> Option<FeatureMatch> {
    let mut best: Option<(usize, f64)> = None;
    let mut second: Option<f64> = None;
    for (j, m) in model.iter().enumerate() {
        let d = query
            .descriptor
            .distance(&m.descriptor)
            .expect("kinds checked by caller");
        match best {
            // strict comparison keeps the lowest index on ties
            Some((_, bd)) if d >= bd => {
                if second.is_none_or(|s| d < s) {
                    second = Some(d);
                }
            }
            _ => {
                second = best.map(|(_, bd)| bd);
                best = Some((j, d));
            }
        }
    }
    let (model_index, distance) = best?;
    let ratio = match second {
        None => {
            // a single model feature has no ratio; only exact matches count
            return (distance == 0.0).then_some(FeatureMatch {
                shelf_index: 0,
                model_index,
                distance,
                ratio: 0.0,
            });
        }
        Some(0.0) => 1.0,
        Some(s) => distance / s,
    };
    (ratio < tau).then_some(FeatureMatch {
        shelf_index: 0,
        model_index,
        distance,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Descriptor, DescriptorKind, Keypoint};
    use proptest::prelude::*;

    fn kp() -> Keypoint {
        Keypoint {
            x: 1.0,
            y: 1.0,
            orientation: 0.0,
            scale: 0,
        }
    }

    fn float_set(descs: &[Vec<f32>]) -> FeatureSet {
        let len = descs.first().map_or(1, |d| d.len());
        FeatureSet::new(
            10,
            10,
            DescriptorKind::Float,
            len,
            descs
                .iter()
                .map(|d| Feature {
                    keypoint: kp(),
                    descriptor: Descriptor::Float(d.clone()),
                })
                .collect(),
        )
        .unwrap()
    }

    fn binary_set(descs: &[Vec<u8>], len: usize) -> FeatureSet {
        FeatureSet::new(
            10,
            10,
            DescriptorKind::Binary,
            len,
            descs
                .iter()
                .map(|d| Feature {
                    keypoint: kp(),
                    descriptor: Descriptor::Binary(d.clone()),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn thresholds_follow_alpha() {
        assert_eq!(matching_threshold(1.0).unwrap(), 0.85);
        assert_eq!(matching_threshold(0.75).unwrap(), 0.8875);
        assert_eq!(matching_threshold(0.5625).unwrap(), 0.915625);
        assert!(matching_threshold(0.0).is_err());
        assert!(matching_threshold(1.5).is_err());
        assert!(matching_threshold(f64::NAN).is_err());
    }

    #[test]
    fn distinctive_match_kept() {
        // distances 10 and 30 from the single shelf feature
        let shelf = float_set(&[vec![0.0]]);
        let model = float_set(&[vec![30.0], vec![10.0]]);
        let m = match_features(&shelf, &model, 0.85).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].model_index, 1);
        assert_eq!(m[0].distance, 10.0);
        assert!((m[0].ratio - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ambiguous_match_rejected() {
        let shelf = float_set(&[vec![0.0]]);
        let model = float_set(&[vec![20.0], vec![21.0]]);
        assert!(match_features(&shelf, &model, 0.85).unwrap().is_empty());
    }

    #[test]
    fn empty_shelf() {
        let shelf = FeatureSet::empty(10, 10);
        let model = binary_set(&[vec![0; 32], vec![1; 32]], 32);
        assert!(match_features(&shelf, &model, 0.85).unwrap().is_empty());
    }

    #[test]
    fn kind_mismatch_is_error() {
        let shelf = float_set(&[vec![0.0]]);
        let model = binary_set(&[vec![0]], 1);
        assert!(matches!(
            match_features(&shelf, &model, 0.85),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn duplicate_zero_distances_rejected() {
        let shelf = binary_set(&[vec![5]], 1);
        let model = binary_set(&[vec![5], vec![5], vec![0xFF]], 1);
        assert!(match_features(&shelf, &model, 0.99).unwrap().is_empty());
    }

    #[test]
    fn single_model_feature_needs_exact_match() {
        let model = binary_set(&[vec![5]], 1);
        let exact = binary_set(&[vec![5]], 1);
        let off = binary_set(&[vec![4]], 1);
        assert_eq!(match_features(&exact, &model, 0.85).unwrap().len(), 1);
        assert!(match_features(&off, &model, 0.85).unwrap().is_empty());
    }

    #[test]
    fn ties_pick_lowest_model_index() {
        let shelf = binary_set(&[vec![0b0000_0000]], 1);
        let model = binary_set(&[vec![0b1111_1111], vec![0b0000_0001], vec![0b0000_0001]], 1);
        // best and second best both at distance 1 -> ratio 1, rejected
        assert!(match_features(&shelf, &model, 0.99).unwrap().is_empty());
        let model = binary_set(&[vec![0b1111_1111], vec![0b0000_0001], vec![0b0000_0111]], 1);
        let m = match_features(&shelf, &model, 0.99).unwrap();
        assert_eq!(m[0].model_index, 1);
    }

    #[test]
    fn roi_filters_shelf_keypoints() {
        let mut entries = Vec::new();
        for x in [2.0f32, 8.0] {
            entries.push(Feature {
                keypoint: Keypoint { x, ..kp() },
                descriptor: Descriptor::Binary(vec![0]),
            });
        }
        let shelf = FeatureSet::new(10, 10, DescriptorKind::Binary, 1, entries).unwrap();
        let model = binary_set(&[vec![0], vec![0xFF]], 1);
        let roi = RoiMask::excluding(vec![crate::BoundingBox::new(0.0, 0.0, 5.0, 10.0)]);
        let m = match_features_in(&shelf, &model, 0.85, &roi).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].shelf_index, 1);
    }

    /// Exhaustive double loop written independently of `best_match`.
    fn oracle(shelf: &FeatureSet, model: &FeatureSet, tau: f64) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, s) in shelf.entries().iter().enumerate() {
            let mut dists: Vec<(f64, usize)> = model
                .entries()
                .iter()
                .enumerate()
                .map(|(j, m)| (s.descriptor.distance(&m.descriptor).unwrap(), j))
                .collect();
            dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            match dists.len() {
                0 => {}
                1 => {
                    if dists[0].0 == 0.0 {
                        out.push((i, dists[0].1, dists[0].0));
                    }
                }
                _ => {
                    let ratio = if dists[1].0 == 0.0 { 1.0 } else { dists[0].0 / dists[1].0 };
                    if ratio < tau {
                        out.push((i, dists[0].1, dists[0].0));
                    }
                }
            }
        }
        out
    }

    fn arb_binary_set(max: usize) -> impl Strategy<Value = FeatureSet> {
        proptest::collection::vec(proptest::collection::vec(any::<u8>(), 4), 0..max)
            .prop_map(|d| binary_set(&d, 4))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn agrees_with_exhaustive_oracle(
            shelf in arb_binary_set(50),
            model in arb_binary_set(50),
            tau in 0.5f64..1.0,
        ) {
            let got: Vec<_> = match_features(&shelf, &model, tau)
                .unwrap()
                .into_iter()
                .map(|m| (m.shelf_index, m.model_index, m.distance))
                .collect();
            prop_assert_eq!(got, oracle(&shelf, &model, tau));
        }

        #[test]
        fn monotone_in_tau(
            shelf in arb_binary_set(40),
            model in arb_binary_set(40),
            t1 in 0.3f64..1.0,
            dt in 0.0f64..0.5,
        ) {
            let small = match_features(&shelf, &model, t1).unwrap();
            let large = match_features(&shelf, &model, t1 + dt).unwrap();
            for m in &small {
                prop_assert!(large.contains(m));
            }
            let mut seen = std::collections::BTreeSet::new();
            for m in &large {
                prop_assert!(seen.insert(m.shelf_index));
                prop_assert!(m.ratio >= 0.0 && m.ratio <= 1.0);
            }
        }
    }
}
