//! Oriented 256-bit intensity-comparison descriptor.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::GrayImage;

pub(crate) const DESCRIPTOR_BITS: usize = 256;
pub(crate) const DESCRIPTOR_BYTES: usize = DESCRIPTOR_BITS / 8;

/// Orientation is quantised to this many bins before steering the pattern.
const ANGLE_BINS: usize = 30;
const PATTERN_SEED: u64 = 0x5348_4654_0001;

type Pair = [(i32, i32); 2];

/// Sampling pairs for a 31x31 patch: isotropic Gaussian offsets (sigma = 31/5)
/// kept inside a disk of radius 13 so that every steered copy stays inside the patch.
fn base_pattern() -> &'static [Pair; DESCRIPTOR_BITS] {
    static PATTERN: OnceLock<[Pair; DESCRIPTOR_BITS]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(PATTERN_SEED);
        let sigma = 31.0 / 5.0;
        let radius_sq = 13 * 13;
        let mut point = move || loop {
            // Box-Muller
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random();
            let r = (-2.0 * u1.ln()).sqrt() * sigma;
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            let p = ((r * c).round() as i32, (r * s).round() as i32);
            if p.0 * p.0 + p.1 * p.1 <= radius_sq {
                return p;
            }
        };
        let mut pairs = [[(0, 0); 2]; DESCRIPTOR_BITS];
        for pair in pairs.iter_mut() {
            *pair = loop {
                let a = point();
                let b = point();
                if a != b {
                    break [a, b];
                }
            };
        }
        pairs
    })
}

fn steered_patterns() -> &'static Vec<[Pair; DESCRIPTOR_BITS]> {
    static STEERED: OnceLock<Vec<[Pair; DESCRIPTOR_BITS]>> = OnceLock::new();
    STEERED.get_or_init(|| {
        let base = base_pattern();
        (0..ANGLE_BINS)
            .map(|bin| {
                let angle = bin as f64 * std::f64::consts::TAU / ANGLE_BINS as f64;
                let (s, c) = angle.sin_cos();
                let rot = |(x, y): (i32, i32)| {
                    let (x, y) = (x as f64, y as f64);
                    ((c * x - s * y).round() as i32, (s * x + c * y).round() as i32)
                };
                let mut out = *base;
                for (o, b) in out.iter_mut().zip(base.iter()) {
                    *o = [rot(b[0]), rot(b[1])];
                }
                out
            })
            .collect()
    })
}

fn angle_bin(angle: f32) -> usize {
    let turn = (angle as f64).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
    ((turn * ANGLE_BINS as f64).round() as usize) % ANGLE_BINS
}

/// Dominant orientation from the intensity centroid of a disk of `radius` around `(x, y)`.
pub(crate) fn orientation(img: &GrayImage, x: u32, y: u32, radius: i32) -> f32 {
    let (mut m10, mut m01) = (0i64, 0i64);
    let r2 = radius * radius;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy > r2 {
                continue;
            }
            let v = img.get((x as i32 + dx) as u32, (y as i32 + dy) as u32) as i64;
            m10 += dx as i64 * v;
            m01 += dy as i64 * v;
        }
    }
    (m01 as f64).atan2(m10 as f64) as f32
}

/// Row-major float image smoothed with a separable Gaussian, edges clamped.
pub(crate) struct Smoothed {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Smoothed {
    pub(crate) fn new(img: &GrayImage, sigma: f32) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let src: Vec<f32> = img.pixels().iter().map(|&v| v as f32).collect();
        if sigma <= 0.0 {
            return Smoothed {
                width: w,
                height: h,
                data: src,
            };
        }
        let radius = (3.0 * sigma).ceil() as i32;
        let mut kernel: Vec<f32> = (-radius..=radius)
            .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f32 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= norm);

        let mut tmp = vec![0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let xx = (x as i32 + k as i32 - radius).clamp(0, w as i32 - 1) as usize;
                    acc += kv * src[y * w + xx];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut data = vec![0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let yy = (y as i32 + k as i32 - radius).clamp(0, h as i32 - 1) as usize;
                    acc += kv * tmp[yy * w + x];
                }
                data[y * w + x] = acc;
            }
        }
        Smoothed {
            width: w,
            height: h,
            data,
        }
    }

    #[inline]
    fn at(&self, x: i32, y: i32) -> f32 {
        let x = x.clamp(0, self.width as i32 - 1) as usize;
        let y = y.clamp(0, self.height as i32 - 1) as usize;
        self.data[y * self.width + x]
    }
}

/// Steered binary descriptor at `(x, y)`; bit `i` lives in byte `i / 8` at position `i % 8`.
pub(crate) fn describe(smooth: &Smoothed, x: u32, y: u32, angle: f32) -> Vec<u8> {
    let pattern = &steered_patterns()[angle_bin(angle)];
    let (x, y) = (x as i32, y as i32);
    let mut bytes = vec![0u8; DESCRIPTOR_BYTES];
    for (i, [a, b]) in pattern.iter().enumerate() {
        if smooth.at(x + a.0, y + a.1) < smooth.at(x + b.0, y + b.1) {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    bytes
}
