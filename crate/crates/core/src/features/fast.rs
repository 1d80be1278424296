//! Segment-test corner detector on a 16-pixel Bresenham ring.

use crate::imaging::GrayImage;

/// Ring of radius 3 in clockwise order starting at 12 o'clock.
pub(crate) const RING: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

/// Minimum contiguous arc length.
pub(crate) const ARC: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Corner {
    pub x: u32,
    pub y: u32,
    pub score: u32,
}

/// Corner score at `(x, y)`, or `None` when the segment test fails.
///
/// The score is the summed excess contrast over the threshold of the ring
/// pixels on the winning side.
pub(crate) fn corner_score(img: &GrayImage, x: u32, y: u32, threshold: u8) -> Option<u32> {
    let center = img.get(x, y) as i32;
    let t = threshold as i32;
    let mut bright = 0u32;
    let mut dark = 0u32;
    let mut ring = [0i32; 16];
    for (i, (dx, dy)) in RING.iter().enumerate() {
        let v = img.get((x as i32 + dx) as u32, (y as i32 + dy) as u32) as i32;
        ring[i] = v - center;
        if ring[i] > t {
            bright |= 1 << i;
        } else if ring[i] < -t {
            dark |= 1 << i;
        }
    }
    let score = |mask: u32, sign: i32| -> u32 {
        ring.iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &d)| (sign * d - t) as u32)
            .sum()
    };
    if has_arc(bright) {
        Some(score(bright, 1))
    } else if has_arc(dark) {
        Some(score(dark, -1))
    } else {
        None
    }
}

/// Whether the 16-bit circular mask holds `ARC` consecutive set bits.
fn has_arc(mask: u32) -> bool {
    if mask.count_ones() < ARC as u32 {
        return false;
    }
    let doubled = mask | (mask << 16);
    let mut run = 0;
    for i in 0..32 {
        if doubled & (1 << i) != 0 {
            run += 1;
            if run >= ARC {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Detect corners at least `border` pixels from every edge, keeping 3x3 local maxima of the score.
pub(crate) fn detect(img: &GrayImage, threshold: u8, border: u32) -> Vec<Corner> {
    let (w, h) = (img.width(), img.height());
    let border = border.max(3);
    if w <= 2 * border || h <= 2 * border {
        return Vec::new();
    }
    let mut scores = vec![0u32; w as usize * h as usize];
    for y in border..h - border {
        for x in border..w - border {
            if let Some(s) = corner_score(img, x, y, threshold) {
                // zero marks "no corner", so shift real scores up by one
                scores[y as usize * w as usize + x as usize] = s + 1;
            }
        }
    }
    let mut corners = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            let idx = y as usize * w as usize + x as usize;
            let s = scores[idx];
            if s == 0 {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nidx = (y as i32 + dy) as usize * w as usize + (x as i32 + dx) as usize;
                    let n = scores[nidx];
                    // plateaus keep the first pixel in raster order
                    if n > s || (n == s && nidx < idx) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                corners.push(Corner { x, y, score: s - 1 });
            }
        }
    }
    corners
}
