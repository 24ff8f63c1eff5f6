use std::cmp::Ordering;

use super::{BinaryMask, RasterImage};
use crate::error::{Error, Result};

fn expect_channels(img: &RasterImage, expected: u8) -> Result<()> {
    if img.channels() != expected {
        return Err(Error::ChannelMismatch {
            expected,
            actual: img.channels(),
        });
    }
    Ok(())
}

fn expect_same_dims(a: &RasterImage, b: &RasterImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

/// HSV value channel of an 8-bit RGB image, i.e. `max(R, G, B)`.
pub fn rgb_to_value(img: &RasterImage) -> Result<RasterImage> {
    expect_channels(img, 3)?;
    let data = img.data().chunks_exact(3).map(|p| p[0].max(p[1]).max(p[2])).collect();
    RasterImage::from_raw(img.width(), img.height(), 1, data)
}

/// `min(255, |ΔR| + |ΔG| + |ΔB|)` per pixel.
pub fn abs_diff_sum(a: &RasterImage, b: &RasterImage) -> Result<RasterImage> {
    expect_channels(a, 3)?;
    expect_channels(b, 3)?;
    expect_same_dims(a, b)?;
    let data = a
        .data()
        .chunks_exact(3)
        .zip(b.data().chunks_exact(3))
        .map(|(p, q)| {
            let s: u32 = p.iter().zip(q).map(|(&u, &v)| u.abs_diff(v) as u32).sum();
            s.min(255) as u8
        })
        .collect();
    RasterImage::from_raw(a.width(), a.height(), 1, data)
}

/// `|a − b|` for two gray images.
pub fn abs_diff_gray(a: &RasterImage, b: &RasterImage) -> Result<RasterImage> {
    expect_channels(a, 1)?;
    expect_channels(b, 1)?;
    expect_same_dims(a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&u, &v)| u.abs_diff(v)).collect();
    RasterImage::from_raw(a.width(), a.height(), 1, data)
}

/// Foreground where the gray value is strictly above `t`.
pub fn binarize(gray: &RasterImage, t: u8) -> Result<BinaryMask> {
    expect_channels(gray, 1)?;
    BinaryMask::from_vec(
        gray.width(),
        gray.height(),
        gray.data().iter().map(|&v| v > t).collect(),
    )
}

/// Full 256-bit product of two `u128` values as `(high, low)`.
fn widening_mul(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a1, a0) = (a >> 64, a & MASK);
    let (b1, b0) = (b >> 64, b & MASK);
    let p00 = a0 * b0;
    let p01 = a0 * b1;
    let p10 = a1 * b0;
    let p11 = a1 * b1;
    let (mid, carry_mid) = p01.overflowing_add(p10);
    let (lo, carry_lo) = p00.overflowing_add(mid << 64);
    let hi = p11 + (mid >> 64) + ((carry_mid as u128) << 64) + carry_lo as u128;
    (hi, lo)
}

/// Between-class variance of a split, kept as the exact fraction
/// `(N·s0 − n0·S)² / (n0·n1)`; the dropped `N²` factor is common to all splits.
#[derive(Clone, Copy, Debug)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn cmp_exact(&self, other: &SplitScore) -> Ordering {
        widening_mul(self.num, other.den).cmp(&widening_mul(other.num, self.den))
    }
}

/// Otsu's threshold: the `t` maximizing between-class variance of `{≤ t}` vs
/// `{> t}`, smallest `t` on ties.
///
/// Scores are compared as exact rationals so that mathematically tied
/// thresholds stay tied.
pub fn otsu_threshold(gray: &RasterImage) -> Result<u8> {
    expect_channels(gray, 1)?;
    let mut hist = [0u64; 256];
    for &v in gray.data() {
        hist[v as usize] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::DegenerateHistogram);
    }
    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();

    // exact scores fit u128 up to 2^28 pixels; past that fall back to floats
    let exact = total < (1 << 28);
    let mut best: Option<(u8, SplitScore, f64)> = None;
    let (mut n0, mut s0) = (0u64, 0u64);
    for (t, &count) in hist.iter().enumerate().take(255) {
        n0 += count;
        s0 += t as u64 * count;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (total as i128 * s0 as i128 - n0 as i128 * total_sum as i128).unsigned_abs();
        let den = n0 as u128 * n1 as u128;
        if exact {
            let score = SplitScore { num: diff * diff, den };
            if best.is_none_or(|(_, b, _)| score.cmp_exact(&b) == Ordering::Greater) {
                best = Some((t as u8, score, 0.0));
            }
        } else {
            let score = (diff as f64) * (diff as f64) / den as f64;
            if best.is_none_or(|(_, _, b)| score > b) {
                best = Some((t as u8, SplitScore { num: 0, den: 1 }, score));
            }
        }
    }
    best.map(|(t, _, _)| t).ok_or(Error::DegenerateHistogram)
}
