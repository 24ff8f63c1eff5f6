//! Binary morphology with disc structuring elements.
//!
//! Pixels outside the image are background. Closing is evaluated on a grid
//! padded by the element radius so that the intermediate dilation may spill
//! past the border; the result is therefore extensive (`m ⊆ close(m)`) and
//! idempotent all the way to the image edge.

use super::{BinaryMask, StructuringElement};

struct RowSums {
    width: usize,
    sums: Vec<u32>,
}

impl RowSums {
    fn new(bits: &[bool], width: usize, height: usize) -> Self {
        let stride = width + 1;
        let mut sums = vec![0u32; stride * height];
        for y in 0..height {
            for x in 0..width {
                sums[y * stride + x + 1] = sums[y * stride + x] + bits[y * width + x] as u32;
            }
        }
        Self { width, sums }
    }

    /// Foreground count of row `y` over `[x0, x1]`, clipped to the grid.
    #[inline]
    fn count(&self, y: usize, x0: i64, x1: i64) -> u32 {
        let lo = x0.max(0) as usize;
        let hi = (x1 + 1).min(self.width as i64);
        if hi <= lo as i64 {
            return 0;
        }
        let stride = self.width + 1;
        self.sums[y * stride + hi as usize] - self.sums[y * stride + lo]
    }
}

fn dilate_grid(bits: &[bool], width: usize, height: usize, se: &StructuringElement) -> Vec<bool> {
    let sums = RowSums::new(bits, width, height);
    let rows: Vec<(i64, i64)> = se.rows().collect();
    let mut out = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let (xi, yi) = (x as i64, y as i64);
            out[y * width + x] = rows.iter().any(|&(dy, hw)| {
                let yy = yi + dy;
                yy >= 0 && yy < height as i64 && sums.count(yy as usize, xi - hw, xi + hw) > 0
            });
        }
    }
    out
}

fn erode_grid(bits: &[bool], width: usize, height: usize, se: &StructuringElement) -> Vec<bool> {
    let sums = RowSums::new(bits, width, height);
    let rows: Vec<(i64, i64)> = se.rows().collect();
    let mut out = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            if !bits[y * width + x] {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            out[y * width + x] = rows.iter().all(|&(dy, hw)| {
                let yy = yi + dy;
                yy >= 0
                    && yy < height as i64
                    && xi - hw >= 0
                    && xi + hw < width as i64
                    && sums.count(yy as usize, xi - hw, xi + hw) == (2 * hw + 1) as u32
            });
        }
    }
    out
}

fn wrap(width: usize, height: usize, bits: Vec<bool>) -> BinaryMask {
    BinaryMask::from_vec(width, height, bits).expect("grid dimensions are preserved")
}

pub fn dilate(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (w, h) = m.dims();
    wrap(w, h, dilate_grid(m.bits(), w, h, se))
}

pub fn erode(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (w, h) = m.dims();
    wrap(w, h, erode_grid(m.bits(), w, h, se))
}

/// `erode(dilate(m))`.
pub fn morph_close(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (w, h) = m.dims();
    let pad = se.radius() as usize;
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let mut padded = vec![false; pw * ph];
    for (x, y) in m.iter_foreground() {
        padded[(y + pad) * pw + x + pad] = true;
    }
    let closed = erode_grid(&dilate_grid(&padded, pw, ph, se), pw, ph, se);
    wrap(w, h, {
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            out.extend_from_slice(&closed[(y + pad) * pw + pad..(y + pad) * pw + pad + w]);
        }
        out
    })
}

/// `dilate(erode(m))`.
pub fn morph_open(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    dilate(&erode(m, se), se)
}
