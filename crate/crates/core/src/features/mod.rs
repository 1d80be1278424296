//! Local features: keypoints with descriptors, the native binary extractor,
//! and the on-disk feature file format.

mod brief;
mod fast;
pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

pub use io::{decode_features, encode_features, export_features, import_features, import_features_for};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Column in full-resolution source coordinates.
    pub x: f32,
    /// Row in full-resolution source coordinates.
    pub y: f32,
    /// Dominant orientation in radians.
    pub orientation: f32,
    /// Pyramid level the keypoint was detected on.
    pub scale: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    Binary,
    Float,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Descriptor {
    /// Packed bit string, compared with Hamming distance.
    Binary(Vec<u8>),
    /// Real-valued vector, compared with Euclidean distance.
    Float(Vec<f32>),
}

impl Descriptor {
    pub fn kind(&self) -> DescriptorKind {
        match self {
            Descriptor::Binary(_) => DescriptorKind::Binary,
            Descriptor::Float(_) => DescriptorKind::Float,
        }
    }

    /// Bytes for binary descriptors, elements for float ones.
    pub fn len(&self) -> usize {
        match self {
            Descriptor::Binary(b) => b.len(),
            Descriptor::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hamming distance for binary descriptors, Euclidean for float ones.
    ///
    /// Returns `None` when kinds or lengths differ.
    pub fn distance(&self, other: &Descriptor) -> Option<f64> {
        match (self, other) {
            (Descriptor::Binary(a), Descriptor::Binary(b)) if a.len() == b.len() => {
                Some(hamming(a, b) as f64)
            }
            (Descriptor::Float(a), Descriptor::Float(b)) if a.len() == b.len() => Some(
                a.iter()
                    .zip(b)
                    .map(|(&x, &y)| {
                        let d = x as f64 - y as f64;
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt(),
            ),
            _ => None,
        }
    }
}

/// Number of differing bits.
pub fn hamming(a: &[u8], b: &[u8]) -> u32 {
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    let mut total = 0;
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        let x = u64::from_le_bytes(ca.try_into().unwrap());
        let y = u64::from_le_bytes(cb.try_into().unwrap());
        total += (x ^ y).count_ones();
    }
    total
        + chunks_a
            .remainder()
            .iter()
            .zip(chunks_b.remainder())
            .map(|(x, y)| (x ^ y).count_ones())
            .sum::<u32>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
}

/// Features extracted from one image.
///
/// All descriptors share `kind` and `descriptor_len`, and every keypoint lies
/// inside `source_width` x `source_height`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    source_width: u32,
    source_height: u32,
    kind: DescriptorKind,
    descriptor_len: usize,
    entries: Vec<Feature>,
}

impl FeatureSet {
    pub fn new(
        source_width: u32,
        source_height: u32,
        kind: DescriptorKind,
        descriptor_len: usize,
        entries: Vec<Feature>,
    ) -> Result<Self> {
        for (i, f) in entries.iter().enumerate() {
            if f.descriptor.kind() != kind || f.descriptor.len() != descriptor_len {
                return Err(Error::InvalidArgument(format!(
                    "feature {i}: descriptor is {:?}/{} but the set is {kind:?}/{descriptor_len}",
                    f.descriptor.kind(),
                    f.descriptor.len()
                )));
            }
            let kp = &f.keypoint;
            if !keypoint_in_bounds(kp, source_width, source_height) {
                return Err(Error::InvalidArgument(format!(
                    "feature {i}: keypoint ({}, {}) outside {source_width}x{source_height}",
                    kp.x, kp.y
                )));
            }
        }
        Ok(FeatureSet {
            source_width,
            source_height,
            kind,
            descriptor_len,
            entries,
        })
    }

    /// Empty binary set for an image of the given size.
    pub fn empty(source_width: u32, source_height: u32) -> Self {
        FeatureSet {
            source_width,
            source_height,
            kind: DescriptorKind::Binary,
            descriptor_len: brief::DESCRIPTOR_BYTES,
            entries: Vec::new(),
        }
    }

    pub fn source_width(&self) -> u32 {
        self.source_width
    }

    pub fn source_height(&self) -> u32 {
        self.source_height
    }

    pub fn kind(&self) -> DescriptorKind {
        self.kind
    }

    pub fn descriptor_len(&self) -> usize {
        self.descriptor_len
    }

    pub fn entries(&self) -> &[Feature] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(crate) fn keypoint_in_bounds(kp: &Keypoint, width: u32, height: u32) -> bool {
    kp.x.is_finite()
        && kp.y.is_finite()
        && kp.x >= 0.0
        && kp.y >= 0.0
        && (kp.x as f64) < width as f64
        && (kp.y as f64) < height as f64
}

/// Settings of the native corner + binary descriptor extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorParams {
    /// Segment-test contrast threshold on the 0-255 scale.
    pub fast_threshold: u8,
    pub levels: u8,
    pub scale_factor: f32,
    pub max_keypoints: usize,
    /// Side of the square descriptor patch; odd.
    pub patch_size: u32,
    /// Gaussian smoothing applied before the intensity comparisons.
    pub blur_sigma: f32,
}

impl Default for ExtractorParams {
    fn default() -> Self {
        ExtractorParams {
            fast_threshold: 20,
            levels: 4,
            scale_factor: 1.2,
            max_keypoints: 2000,
            patch_size: 31,
            blur_sigma: 2.0,
        }
    }
}

impl ExtractorParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidArgument("extractor needs at least one level".into()));
        }
        if !(self.scale_factor > 1.0 && self.scale_factor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pyramid scale factor must exceed 1, got {}",
                self.scale_factor
            )));
        }
        if self.patch_size < 7 || self.patch_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "patch size must be odd and >= 7, got {}",
                self.patch_size
            )));
        }
        if self.blur_sigma.is_nan() || self.blur_sigma < 0.0 {
            return Err(Error::InvalidArgument("blur sigma must be non-negative".into()));
        }
        Ok(())
    }
}

struct Candidate {
    level: u8,
    x: u32,
    y: u32,
    score: u32,
}

/// Detect oriented corners over an image pyramid and describe them with 256-bit
/// binary strings.
///
/// Images smaller than the descriptor patch yield an empty set. The result is a
/// pure function of `(img, params)`.
pub fn extract_features(img: &GrayImage, params: &ExtractorParams) -> Result<FeatureSet> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    let mut set = FeatureSet::empty(w, h);
    if w < params.patch_size || h < params.patch_size {
        return Ok(set);
    }
    let half = (params.patch_size / 2) as i32;
    let border = half as u32 + 1;

    let mut levels = Vec::new();
    for level in 0..params.levels {
        let scale = (params.scale_factor as f64).powi(level as i32);
        let lw = (w as f64 / scale).round() as u32;
        let lh = (h as f64 / scale).round() as u32;
        if lw < params.patch_size || lh < params.patch_size {
            break;
        }
        let level_img = if level == 0 {
            img.clone()
        } else {
            GrayImage::from_image(image::imageops::resize(
                &img.to_image(),
                lw,
                lh,
                image::imageops::FilterType::Triangle,
            ))
        };
        levels.push((scale, level_img));
    }

    let mut candidates: Vec<Candidate> = levels
        .iter()
        .enumerate()
        .flat_map(|(level, (_, limg))| {
            fast::detect(limg, params.fast_threshold, border)
                .into_iter()
                .map(move |c| Candidate {
                    level: level as u8,
                    x: c.x,
                    y: c.y,
                    score: c.score,
                })
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.score
            .cmp(&a.score)
            .then(a.level.cmp(&b.level))
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    candidates.truncate(params.max_keypoints);

    let smoothed: Vec<brief::Smoothed> = levels
        .iter()
        .map(|(_, limg)| brief::Smoothed::new(limg, params.blur_sigma))
        .collect();

    set.entries = candidates
        .iter()
        .map(|c| {
            let (scale, limg) = &levels[c.level as usize];
            let angle = brief::orientation(limg, c.x, c.y, half);
            let descriptor = brief::describe(&smoothed[c.level as usize], c.x, c.y, angle);
            // centre-aligned mapping back to level-0 pixel coordinates
            let x = ((c.x as f64 + 0.5) * scale - 0.5).clamp(0.0, w as f64 - 1.0);
            let y = ((c.y as f64 + 0.5) * scale - 0.5).clamp(0.0, h as f64 - 1.0);
            Feature {
                keypoint: Keypoint {
                    x: x as f32,
                    y: y as f32,
                    orientation: angle,
                    scale: c.level,
                },
                descriptor: Descriptor::Binary(descriptor),
            }
        })
        .collect();
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn hamming_counts_bits() {
        assert_eq!(hamming(&[0xFF; 32], &[0x00; 32]), 256);
        assert_eq!(hamming(&[0b1010], &[0b0110]), 2);
        let mut a = vec![0u8; 11];
        a[10] = 1;
        assert_eq!(hamming(&a, &[0u8; 11]), 1);
    }

    #[test]
    fn euclidean_distance() {
        let a = Descriptor::Float(vec![0.0, 0.0]);
        let b = Descriptor::Float(vec![3.0, 4.0]);
        assert_eq!(a.distance(&b), Some(5.0));
        assert_eq!(a.distance(&Descriptor::Binary(vec![0, 0])), None);
        assert_eq!(a.distance(&Descriptor::Float(vec![1.0])), None);
    }

    #[test]
    fn uniform_image_has_no_features() {
        let img = GrayImage::filled(64, 64, 128);
        let set = extract_features(&img, &ExtractorParams::default()).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn tiny_image_is_empty_not_error() {
        let img = GrayImage::filled(30, 100, 0);
        let set = extract_features(&img, &ExtractorParams::default()).unwrap();
        assert!(set.is_empty());
        assert_eq!((set.source_width(), set.source_height()), (30, 100));
    }

    fn textured(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut img = GrayImage::filled(w, h, 120);
        for _ in 0..30 {
            let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
            let (rw, rh) = (rng.random_range(3..15), rng.random_range(3..15));
            let v = rng.random();
            for y in y0..(y0 + rh).min(h) {
                for x in x0..(x0 + rw).min(w) {
                    img.set(x, y, v);
                }
            }
        }
        img
    }

    #[test]
    fn extraction_is_deterministic() {
        let img = textured(120, 90, 3);
        let a = extract_features(&img, &ExtractorParams::default()).unwrap();
        let b = extract_features(&img, &ExtractorParams::default()).unwrap();
        assert!(!a.is_empty());
        assert_eq!(encode_features(&a), encode_features(&b));
    }

    /// Naive segment test: any of the 16 rotations of a 9-pixel arc all brighter
    /// or all darker than the centre by more than the threshold.
    fn oracle_is_corner(img: &GrayImage, x: i32, y: i32, t: i32) -> bool {
        let ring = [
            (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
            (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
        ];
        let c = img.get(x as u32, y as u32) as i32;
        let vals: Vec<i32> = ring
            .iter()
            .map(|(dx, dy)| img.get((x + dx) as u32, (y + dy) as u32) as i32)
            .collect();
        (0..16).any(|start| {
            (0..9).all(|k| vals[(start + k) % 16] > c + t)
                || (0..9).all(|k| vals[(start + k) % 16] < c - t)
        })
    }

    #[test]
    fn square_corners_found() {
        let mut img = GrayImage::filled(64, 64, 0);
        for y in 27..37 {
            for x in 27..37 {
                img.set(x, y, 255);
            }
        }
        let corners = [(27.0, 27.0), (36.0, 27.0), (27.0, 36.0), (36.0, 36.0)];
        // the brute-force response scan only fires next to the four corners
        let mut oracle_hits = 0;
        for y in 3..61 {
            for x in 3..61 {
                if oracle_is_corner(&img, x, y, 20) {
                    oracle_hits += 1;
                    assert!(corners
                        .iter()
                        .any(|&(cx, cy)| (x as f64 - cx).abs() <= 2.0 && (y as f64 - cy).abs() <= 2.0), "oracle corner at ({x}, {y})");
                }
            }
        }
        assert!(oracle_hits >= 4);

        let set = extract_features(&img, &ExtractorParams::default()).unwrap();
        assert!(set.len() >= 4, "only {} keypoints", set.len());
        for f in set.entries() {
            let kp = f.keypoint;
            let near = corners.iter().any(|&(cx, cy)| {
                ((kp.x as f64 - cx).powi(2) + (kp.y as f64 - cy).powi(2)).sqrt() <= 3.0
            });
            assert!(near, "keypoint {kp:?} not near a corner");
        }
        for &(cx, cy) in &corners {
            assert!(set.entries().iter().any(|f| {
                ((f.keypoint.x as f64 - cx).powi(2) + (f.keypoint.y as f64 - cy).powi(2)).sqrt()
                    <= 3.0
            }));
        }
    }

    #[test]
    fn translation_consistency() {
        let base = textured(160, 120, 11);
        let (dx, dy) = (7u32, 4u32);
        let mut shifted = GrayImage::filled(160, 120, 120);
        for y in 0..120 - dy {
            for x in 0..160 - dx {
                shifted.set(x + dx, y + dy, base.get(x, y));
            }
        }
        let params = ExtractorParams::default();
        let a = extract_features(&base, &params).unwrap();
        let b = extract_features(&shifted, &params).unwrap();
        // only keypoints whose whole neighbourhood moved with the pattern
        let inner: Vec<_> = a
            .entries()
            .iter()
            .filter(|f| f.keypoint.x < 120.0 && f.keypoint.y < 90.0 && f.keypoint.x > 25.0 && f.keypoint.y > 25.0)
            .collect();
        assert!(inner.len() >= 10);
        let consistent = inner
            .iter()
            .filter(|f| {
                let (ex, ey) = (f.keypoint.x + dx as f32, f.keypoint.y + dy as f32);
                b.entries().iter().any(|g| {
                    g.keypoint.scale == f.keypoint.scale
                        && (g.keypoint.x - ex).abs() <= 2.0
                        && (g.keypoint.y - ey).abs() <= 2.0
                })
            })
            .count();
        assert!(
            consistent as f64 >= 0.8 * inner.len() as f64,
            "{consistent}/{}",
            inner.len()
        );
    }

    #[test]
    fn keypoint_cap_respected() {
        let img = textured(200, 200, 5);
        let params = ExtractorParams {
            max_keypoints: 10,
            ..ExtractorParams::default()
        };
        assert!(extract_features(&img, &params).unwrap().len() <= 10);
    }

    #[test]
    fn invalid_params_rejected() {
        let img = GrayImage::filled(64, 64, 0);
        let bad = ExtractorParams {
            scale_factor: 1.0,
            ..ExtractorParams::default()
        };
        assert!(extract_features(&img, &bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn keypoints_within_bounds(w in 20u32..90, h in 20u32..90, seed in any::<u64>()) {
            let img = textured(w, h, seed);
            let set = extract_features(&img, &ExtractorParams::default()).unwrap();
            for f in set.entries() {
                let kp = f.keypoint;
                prop_assert!(keypoint_in_bounds(&kp, w, h));
                prop_assert!((kp.scale as u32) < 4);
                prop_assert_eq!(f.descriptor.len(), 32);
            }
        }
    }
}
