//! Pixel-grid types and the low-level image operations the labeling and
//! composition stages are built on.
//!
//! All grids are row-major with the origin at the top-left pixel. Pixel
//! `(x, y)` covers the unit square `[x, x+1) x [y, y+1)`, so its center sits
//! at `(x + 0.5, y + 0.5)`; every rasterization in this crate uses that
//! pixel-center rule.

mod components;
mod io;
mod morphology;
mod ops;
mod rle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use components::{connected_components, Connectivity};
pub use io::{decode_png_bytes, encode_png_gray16};
pub use morphology::{dilate, erode, morph_close, morph_open};
pub use ops::{abs_diff_gray, abs_diff_sum, binarize, otsu_threshold, rgb_to_value};
pub use rle::{rle_decode, rle_encode, Rle};

/// 8-bit image with one (gray) or three (RGB) interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: u8,
    data: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidGeometry(format!(
            "dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

impl RasterImage {
    /// Zero-filled image.
    pub fn new(width: usize, height: usize, channels: u8) -> Result<Self> {
        check_dims(width, height)?;
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidGeometry(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels as usize],
        })
    }

    pub fn from_raw(width: usize, height: usize, channels: u8, data: Vec<u8>) -> Result<Self> {
        let mut img = Self::new(width, height, channels)?;
        if data.len() != img.data.len() {
            return Err(Error::InvalidGeometry(format!(
                "expected {} samples, got {}",
                img.data.len(),
                data.len()
            )));
        }
        img.data = data;
        Ok(img)
    }

    /// Image with every pixel set to `value` (whose length gives the channel count).
    pub fn filled(width: usize, height: usize, value: &[u8]) -> Result<Self> {
        let mut img = Self::new(width, height, value.len() as u8)?;
        for px in img.data.chunks_exact_mut(value.len()) {
            px.copy_from_slice(value);
        }
        Ok(img)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: u8,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut img = Self::new(width, height, channels)?;
        let c = channels as usize;
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                let i = (y * width + x) * c;
                img.data[i..i + c].copy_from_slice(&v[..c]);
            }
        }
        Ok(img)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let c = self.channels as usize;
        let i = (y * self.width + x) * c;
        &self.data[i..i + c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let c = self.channels as usize;
        let i = (y * self.width + x) * c;
        &mut self.data[i..i + c]
    }

    /// Copy of the `bbox` region.
    pub fn crop(&self, bbox: BBox) -> Result<Self> {
        let (x0, y0, w, h) = bbox.as_usize();
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidGeometry(format!(
                "crop {bbox:?} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels as usize;
        let mut out = Self::new(w, h, self.channels)?;
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * c;
            out.data[y * w * c..(y + 1) * w * c].copy_from_slice(&self.data[src..src + w * c]);
        }
        Ok(out)
    }

    /// Three-channel copy; gray images are replicated across channels.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }
}

/// Metric depth in millimeters; `0` marks an invalid sample.
#[derive(Clone, PartialEq, Eq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl std::fmt::Debug for DepthImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DepthImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            data: vec![0; width * height],
        })
    }

    pub fn filled(width: usize, height: usize, mm: u16) -> Result<Self> {
        let mut d = Self::new(width, height)?;
        d.data.fill(mm);
        Ok(d)
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidGeometry(format!(
                "expected {} depth samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u16) -> Result<Self> {
        let mut d = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                d.data[y * width + x] = f(x, y);
            }
        }
        Ok(d)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, mm: u16) {
        self.data[y * self.width + x] = mm;
    }

    pub fn crop(&self, bbox: BBox) -> Result<Self> {
        let (x0, y0, w, h) = bbox.as_usize();
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidGeometry(format!(
                "crop {bbox:?} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }
}

/// Tight axis-aligned box in pixels, serialized as `[x, y, w, h]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for BBox {
    fn from(v: [u32; 4]) -> Self {
        BBox {
            x: v[0],
            y: v[1],
            w: v[2],
            h: v[3],
        }
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn as_usize(&self) -> (usize, usize, usize, usize) {
        (self.x as usize, self.y as usize, self.w as usize, self.h as usize)
    }
}

/// One bit of foreground per pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryMask({}x{}, {} fg)", self.width, self.height, self.count())
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            data: vec![false; width * height],
        })
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        let mut m = Self::new(width, height)?;
        m.data.fill(true);
        Ok(m)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut m = Self::new(width, height)?;
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        Ok(m)
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidGeometry(format!(
                "expected {} mask bits, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Foreground test that treats out-of-image coordinates as background.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> u64 {
        self.data.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    fn check_same(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.check_same(other)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn union_in_place(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_same(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<u64> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).filter(|(&a, &b)| a && b).count() as u64)
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b))
    }

    /// Tight bounding box, `None` for an empty mask.
    pub fn bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            if let Some(first) = row.iter().position(|&b| b) {
                let last = row.iter().rposition(|&b| b).unwrap();
                x0 = x0.min(first);
                x1 = x1.max(last);
                y0 = y0.min(y);
                y1 = y;
            }
        }
        (x0 != usize::MAX).then(|| BBox {
            x: x0 as u32,
            y: y0 as u32,
            w: (x1 - x0 + 1) as u32,
            h: (y1 - y0 + 1) as u32,
        })
    }

    pub fn crop(&self, bbox: BBox) -> Result<BinaryMask> {
        let (x0, y0, w, h) = bbox.as_usize();
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidGeometry(format!(
                "crop {bbox:?} exceeds {}x{}",
                self.width, self.height
            )));
        }
        BinaryMask::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    pub fn iter_foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Gray image with foreground at 255.
    pub fn to_image(&self) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    /// Foreground wherever the gray value is nonzero.
    pub fn from_image(img: &RasterImage) -> Result<BinaryMask> {
        if img.channels() != 1 {
            return Err(Error::ChannelMismatch {
                expected: 1,
                actual: img.channels(),
            });
        }
        BinaryMask::from_vec(img.width, img.height, img.data.iter().map(|&v| v > 0).collect())
    }
}

/// |a ∩ b| / |a ∪ b|, zero when both masks are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, union) = mask_overlap(a, b)?;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Intersection and union pixel counts.
pub fn mask_overlap(a: &BinaryMask, b: &BinaryMask) -> Result<(u64, u64)> {
    a.check_same(b)?;
    let mut inter = 0;
    let mut union = 0;
    for (&p, &q) in a.data.iter().zip(&b.data) {
        inter += (p && q) as u64;
        union += (p || q) as u64;
    }
    Ok((inter, union))
}

/// Per-pixel instance labels: 0 is background, instances are `1..=count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: u32,
}

impl LabelMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn mask_of(&self, label: u32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    /// One mask per instance, in label order.
    pub fn masks(&self) -> Vec<BinaryMask> {
        (1..=self.count).map(|l| self.mask_of(l)).collect()
    }

    pub fn areas(&self) -> Vec<u64> {
        let mut areas = vec![0u64; self.count as usize + 1];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas.remove(0);
        areas
    }
}

/// Disc in pixel coordinates; contains pixel `(x, y)` when its center lies within the radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircularRegion {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

impl CircularRegion {
    pub fn new(center_x: f64, center_y: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !center_x.is_finite() || !center_y.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "circular region needs a positive radius, got {radius}"
            )));
        }
        Ok(Self {
            center_x,
            center_y,
            radius,
        })
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.center_x;
        let dy = y as f64 + 0.5 - self.center_y;
        dx * dx + dy * dy <= self.radius * self.radius
    }

    pub fn to_mask(&self, width: usize, height: usize) -> Result<BinaryMask> {
        BinaryMask::from_fn(width, height, |x, y| self.contains(x, y))
    }
}

/// Disc-shaped structuring element: offset `(dx, dy)` is a member iff `dx² + dy² ≤ r²`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructuringElement {
    radius: u32,
    // half_widths[dy + r] = max |dx| on row dy
    half_widths: Vec<u32>,
}

impl StructuringElement {
    pub fn disc(radius: u32) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidParameter(
                "structuring element radius must be at least 1".into(),
            ));
        }
        let r = radius as i64;
        let half_widths = (-r..=r)
            .map(|dy| {
                let mut w = 0i64;
                while (w + 1) * (w + 1) + dy * dy <= r * r {
                    w += 1;
                }
                w as u32
            })
            .collect();
        Ok(Self { radius, half_widths })
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn contains(&self, dx: i64, dy: i64) -> bool {
        let r = self.radius as i64;
        dx * dx + dy * dy <= r * r
    }

    /// `(dy, half_width)` rows of the element.
    pub(crate) fn rows(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        let r = self.radius as i64;
        self.half_widths
            .iter()
            .enumerate()
            .map(move |(i, &w)| (i as i64 - r, w as i64))
    }

    pub fn offsets(&self) -> Vec<(i64, i64)> {
        self.rows()
            .flat_map(|(dy, w)| (-w..=w).map(move |dx| (dx, dy)))
            .collect()
    }
}
