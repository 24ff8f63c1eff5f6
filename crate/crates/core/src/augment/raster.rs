//! Placing a rotated bank patch on the scene grid.
//!
//! Scene pixel `(x, y)` samples the patch at
//! `u = c·dx + s·dy + w/2`, `v = −s·dx + c·dy + h/2` with
//! `dx = x + 0.5 − cx`, `dy = y + 0.5 − cy` and `(c, s) = (cos θ, sin θ)`.
//! It is covered iff `(⌊u⌋, ⌊v⌋)` is a foreground patch pixel.

use super::{ObjectBankEntry, Placement};
use crate::imaging::BinaryMask;

/// Half extents of the axis-aligned box around a `w x h` patch rotated by `angle_deg`.
pub fn rotated_half_extents(w: usize, h: usize, angle_deg: f64) -> (f64, f64) {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (w, h) = (w as f64, h as f64);
    ((c.abs() * w + s.abs() * h) / 2.0, (s.abs() * w + c.abs() * h) / 2.0)
}

/// Rasterized rotated mask of one placement, clipped to the scene.
#[derive(Clone, Debug)]
pub struct Footprint {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
    /// Per window pixel, the nearest source patch index when covered.
    src: Vec<Option<u32>>,
    /// Continuous patch coordinates `(u, v)` per window pixel.
    uv: Vec<(f64, f64)>,
}

impl Footprint {
    pub fn area(&self) -> u64 {
        self.src.iter().filter(|s| s.is_some()).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.src.iter().all(|s| s.is_none())
    }

    /// Covered scene pixels.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize, u32, (f64, f64))> + '_ {
        self.src
            .iter()
            .enumerate()
            .filter_map(move |(i, s)| s.map(|src| (self.x0 + i % self.w, self.y0 + i / self.w, src, self.uv[i])))
    }

    pub fn to_mask(&self, scene_w: usize, scene_h: usize) -> BinaryMask {
        let mut m = BinaryMask::new(scene_w, scene_h).expect("scene dimensions are valid");
        for (x, y, _, _) in self.pixels() {
            m.set(x, y, true);
        }
        m
    }
}

pub fn rasterize(entry: &ObjectBankEntry, placement: &Placement, scene_w: usize, scene_h: usize) -> Footprint {
    rasterize_at(
        entry,
        placement.center_x,
        placement.center_y,
        placement.angle,
        scene_w,
        scene_h,
    )
}

pub(crate) fn rasterize_at(
    entry: &ObjectBankEntry,
    cx: f64,
    cy: f64,
    angle_deg: f64,
    scene_w: usize,
    scene_h: usize,
) -> Footprint {
    let (pw, ph) = entry.mask.dims();
    let (ex, ey) = rotated_half_extents(pw, ph, angle_deg);
    let clip = |lo: f64, hi: f64, n: usize| {
        let a = (lo.floor() - 1.0).max(0.0).min(n as f64) as usize;
        let b = (hi.ceil() + 1.0).max(0.0).min(n as f64) as usize;
        (a, b.max(a))
    };
    let (x0, x1) = clip(cx - ex, cx + ex, scene_w);
    let (y0, y1) = clip(cy - ey, cy + ey, scene_h);
    let (w, h) = (x1 - x0, y1 - y0);
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (hw, hh) = (pw as f64 / 2.0, ph as f64 / 2.0);
    let mut src = Vec::with_capacity(w * h);
    let mut uv = Vec::with_capacity(w * h);
    for y in y0..y1 {
        let dy = y as f64 + 0.5 - cy;
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - cx;
            let u = c * dx + s * dy + hw;
            let v = -s * dx + c * dy + hh;
            uv.push((u, v));
            let covered = u >= 0.0 && v >= 0.0 && u < pw as f64 && v < ph as f64 && {
                let (iu, iv) = (u as usize, v as usize);
                entry.mask.get(iu, iv)
            };
            src.push(covered.then(|| (v as usize * pw + u as usize) as u32));
        }
    }
    Footprint { x0, y0, w, h, src, uv }
}

/// Bilinear RGB sample at patch coordinates, restricted to foreground patch pixels.
pub(crate) fn sample_rgb(entry: &ObjectBankEntry, nearest: u32, (u, v): (f64, f64)) -> [u8; 3] {
    let (pw, ph) = entry.mask.dims();
    let (fu, fv) = (u - 0.5, v - 0.5);
    let (u0, v0) = (fu.floor(), fv.floor());
    let (tu, tv) = (fu - u0, fv - v0);
    let mut acc = [0.0f64; 3];
    let mut wsum = 0.0;
    for (du, dv, wt) in [
        (0, 0, (1.0 - tu) * (1.0 - tv)),
        (1, 0, tu * (1.0 - tv)),
        (0, 1, (1.0 - tu) * tv),
        (1, 1, tu * tv),
    ] {
        let (iu, iv) = (u0 as i64 + du, v0 as i64 + dv);
        if wt <= 0.0 || iu < 0 || iv < 0 || iu >= pw as i64 || iv >= ph as i64 {
            continue;
        }
        let (iu, iv) = (iu as usize, iv as usize);
        if !entry.mask.get(iu, iv) {
            continue;
        }
        let px = entry.rgb.pixel(iu, iv);
        for k in 0..3 {
            acc[k] += wt * px[k] as f64;
        }
        wsum += wt;
    }
    if wsum <= 0.0 {
        let (iu, iv) = (nearest as usize % pw, nearest as usize / pw);
        let px = entry.rgb.pixel(iu, iv);
        return [px[0], px[1], px[2]];
    }
    acc.map(|a| (a / wsum).round().clamp(0.0, 255.0) as u8)
}
