//! Binary feature file format, little-endian throughout:
//!
//! ```text
//! magic "SHFT" | version u16 | kind u8 (0 binary, 1 float) | descriptor length u16 | count u32
//! count x ( x f32 | y f32 | orientation f32 | scale u8 | descriptor payload )
//! ```
//!
//! Descriptor length counts bytes for binary descriptors and `f32` elements for float ones.
//! The format carries no image size; readers either supply it or take the
//! tight extent of the keypoints.

use std::path::Path;

use super::{keypoint_in_bounds, Descriptor, DescriptorKind, Feature, FeatureSet, Keypoint};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SHFT";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 2 + 4;

pub fn encode_features(set: &FeatureSet) -> Vec<u8> {
    let payload = match set.kind {
        DescriptorKind::Binary => set.descriptor_len,
        DescriptorKind::Float => set.descriptor_len * 4,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + set.len() * (13 + payload));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match set.kind {
        DescriptorKind::Binary => 0,
        DescriptorKind::Float => 1,
    });
    out.extend_from_slice(&(set.descriptor_len as u16).to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    for f in &set.entries {
        let kp = &f.keypoint;
        out.extend_from_slice(&kp.x.to_le_bytes());
        out.extend_from_slice(&kp.y.to_le_bytes());
        out.extend_from_slice(&kp.orientation.to_le_bytes());
        out.push(kp.scale);
        match &f.descriptor {
            Descriptor::Binary(b) => out.extend_from_slice(b),
            Descriptor::Float(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    out
}

pub fn export_features(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(set)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, location: &dyn Fn() -> String) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                location: location(),
                message: format!("truncated: needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f32(&mut self, location: &dyn Fn() -> String) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, location)?.try_into().unwrap()))
    }
}

/// Decode a feature file. With `dims = None` the image size is the tight extent of the keypoints.
pub fn decode_features(bytes: &[u8], dims: Option<(u32, u32)>) -> Result<FeatureSet> {
    let header = || "header".to_string();
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, &header)? != MAGIC {
        return Err(Error::Parse {
            location: header(),
            message: "bad magic, expected SHFT".into(),
        });
    }
    let version = u16::from_le_bytes(r.take(2, &header)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Parse {
            location: header(),
            message: format!("unsupported version {version}"),
        });
    }
    let kind = match r.take(1, &header)?[0] {
        0 => DescriptorKind::Binary,
        1 => DescriptorKind::Float,
        other => {
            return Err(Error::Parse {
                location: header(),
                message: format!("unknown descriptor kind {other}"),
            })
        }
    };
    let len = u16::from_le_bytes(r.take(2, &header)?.try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(r.take(4, &header)?.try_into().unwrap()) as usize;
    if len == 0 && count > 0 {
        return Err(Error::Parse {
            location: header(),
            message: "descriptor length is zero".into(),
        });
    }

    let mut entries = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let loc = || format!("record {i}");
        let x = r.f32(&loc)?;
        let y = r.f32(&loc)?;
        let orientation = r.f32(&loc)?;
        let scale = r.take(1, &loc)?[0];
        let descriptor = match kind {
            DescriptorKind::Binary => Descriptor::Binary(r.take(len, &loc)?.to_vec()),
            DescriptorKind::Float => {
                let raw = r.take(len * 4, &loc)?;
                Descriptor::Float(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
        };
        let keypoint = Keypoint {
            x,
            y,
            orientation,
            scale,
        };
        if !(x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0) || !orientation.is_finite() {
            return Err(Error::Parse {
                location: loc(),
                message: format!("invalid keypoint ({x}, {y}, {orientation})"),
            });
        }
        if let Some((w, h)) = dims {
            if !keypoint_in_bounds(&keypoint, w, h) {
                return Err(Error::Parse {
                    location: loc(),
                    message: format!("keypoint ({x}, {y}) outside {w}x{h}"),
                });
            }
        }
        entries.push(Feature {
            keypoint,
            descriptor,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            location: format!("record {count}"),
            message: format!("{} trailing bytes after the last record", bytes.len() - r.pos),
        });
    }

    let (w, h) = dims.unwrap_or_else(|| {
        entries.iter().fold((1, 1), |(w, h), f| {
            (
                w.max(f.keypoint.x.floor() as u32 + 1),
                h.max(f.keypoint.y.floor() as u32 + 1),
            )
        })
    });
    FeatureSet::new(w, h, kind, len, entries)
}

/// Read a feature file, inferring the image size from the keypoints.
pub fn import_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, None)
}

/// Read a feature file computed on an image of the given size; out-of-bounds keypoints are errors.
pub fn import_features_for(path: impl AsRef<Path>, width: u32, height: u32) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, Some((width, height)))
}
