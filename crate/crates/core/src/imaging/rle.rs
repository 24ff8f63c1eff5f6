//! Uncompressed COCO run-length encoding.
//!
//! Pixels are visited column-major (down each column, then left to right);
//! counts alternate background and foreground runs and always start with a
//! background run, which may be empty.

use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};

/// Serialized mask: `size` is `[height, width]` as in COCO.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub size: [usize; 2],
    pub counts: Vec<u64>,
}

pub fn rle_encode(m: &BinaryMask) -> Vec<u64> {
    let (w, h) = m.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for x in 0..w {
        for y in 0..h {
            let v = m.get(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

pub fn rle_decode(counts: &[u64], width: usize, height: usize) -> Result<BinaryMask> {
    let total: u64 = counts.iter().sum();
    if total != (width * height) as u64 {
        return Err(Error::MalformedRle(format!(
            "counts sum to {total}, expected {}",
            width * height
        )));
    }
    let mut m = BinaryMask::new(width, height)?;
    let mut pos = 0usize;
    for (i, &run) in counts.iter().enumerate() {
        let fg = i % 2 == 1;
        for p in pos..pos + run as usize {
            if fg {
                m.set(p / height, p % height, true);
            }
        }
        pos += run as usize;
    }
    Ok(m)
}

impl From<&BinaryMask> for Rle {
    fn from(m: &BinaryMask) -> Self {
        Rle {
            size: [m.height(), m.width()],
            counts: rle_encode(m),
        }
    }
}

impl TryFrom<&Rle> for BinaryMask {
    type Error = Error;

    fn try_from(r: &Rle) -> Result<Self> {
        rle_decode(&r.counts, r.size[1], r.size[0])
    }
}

impl Serialize for BinaryMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        Rle::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for BinaryMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rle = Rle::deserialize(d)?;
        BinaryMask::try_from(&rle).map_err(serde::de::Error::custom)
    }
}
