//! Spectral-residual saliency (Hou & Zhang), the built-in saliency source.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::imaging::RasterImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralResidualParams {
    /// Longest side of the working resolution.
    pub max_side: usize,
    /// Width of the box filter applied to the log-amplitude spectrum.
    pub spectrum_filter: usize,
    /// Gaussian sigma, in working-resolution pixels, for the final smoothing.
    pub smoothing_sigma: f64,
}

impl Default for SpectralResidualParams {
    fn default() -> Self {
        Self {
            max_side: 64,
            spectrum_filter: 3,
            smoothing_sigma: 2.5,
        }
    }
}

struct Grid {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

fn luma(img: &RasterImage) -> Grid {
    let v = if img.channels() == 1 {
        img.data().iter().map(|&g| g as f64).collect()
    } else {
        img.data()
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    };
    Grid {
        w: img.width(),
        h: img.height(),
        v,
    }
}

/// Box-average downscale; every output pixel averages the source pixels whose centers fall inside it.
fn area_downscale(g: &Grid, w: usize, h: usize) -> Grid {
    let mut sum = vec![0.0; w * h];
    let mut cnt = vec![0u32; w * h];
    for y in 0..g.h {
        let oy = ((y as f64 + 0.5) * h as f64 / g.h as f64) as usize;
        for x in 0..g.w {
            let ox = ((x as f64 + 0.5) * w as f64 / g.w as f64) as usize;
            let i = oy.min(h - 1) * w + ox.min(w - 1);
            sum[i] += g.v[y * g.w + x];
            cnt[i] += 1;
        }
    }
    let v = sum
        .iter()
        .zip(&cnt)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Grid { w, h, v }
}

fn bilinear_upscale(g: &Grid, w: usize, h: usize) -> Grid {
    if (g.w, g.h) == (w, h) {
        return Grid { w, h, v: g.v.clone() };
    }
    let sample = |x: f64, y: f64| {
        let x = x.clamp(0.0, (g.w - 1) as f64);
        let y = y.clamp(0.0, (g.h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(g.w - 1), (y0 + 1).min(g.h - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |xx: usize, yy: usize| g.v[yy * g.w + xx];
        (at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx) * (1.0 - fy) + (at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx) * fy
    };
    let mut v = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = (y as f64 + 0.5) * g.h as f64 / h as f64 - 0.5;
        for x in 0..w {
            let sx = (x as f64 + 0.5) * g.w as f64 / w as f64 - 0.5;
            v.push(sample(sx, sy));
        }
    }
    Grid { w, h, v }
}

fn fft2(data: &mut [Complex64], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in data.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
    if inverse {
        let n = (w * h) as f64;
        for c in data.iter_mut() {
            *c /= n;
        }
    }
}

/// Circular box mean, matching the periodicity of the spectrum.
fn circular_box_mean(v: &[f64], w: usize, h: usize, size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let xx = (x + dx).rem_euclid(w as isize) as usize;
                    let yy = (y + dy).rem_euclid(h as isize) as usize;
                    s += v[yy * w + xx];
                }
            }
            out[y as usize * w + x as usize] = s / n;
        }
    }
    out
}

fn gaussian_blur(g: &Grid, sigma: f64) -> Grid {
    if sigma <= 0.0 {
        return Grid {
            w: g.w,
            h: g.h,
            v: g.v.clone(),
        };
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; g.w * g.h];
        for y in 0..g.h as isize {
            for x in 0..g.w as isize {
                let mut s = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let o = k as isize - r;
                    let (xx, yy) = if horizontal {
                        ((x + o).clamp(0, g.w as isize - 1), y)
                    } else {
                        (x, (y + o).clamp(0, g.h as isize - 1))
                    };
                    s += kv * src[yy as usize * g.w + xx as usize];
                }
                out[y as usize * g.w + x as usize] = s;
            }
        }
        out
    };
    let v = pass(&pass(&g.v, true), false);
    Grid { w: g.w, h: g.h, v }
}

/// Gray saliency map at the input resolution, min-max normalized to 0..=255.
///
/// An input without intensity variation yields an all-zero map.
pub fn spectral_residual_saliency(img: &RasterImage, p: &SpectralResidualParams) -> RasterImage {
    let (w, h) = img.dims();
    let zero = || RasterImage::new(w, h, 1).expect("input dimensions are valid");
    let full = luma(img);

    let longest = w.max(h);
    let work = if longest > p.max_side {
        let s = p.max_side as f64 / longest as f64;
        let ww = ((w as f64 * s).round() as usize).max(1);
        let hh = ((h as f64 * s).round() as usize).max(1);
        area_downscale(&full, ww, hh)
    } else {
        full
    };
    let (lo, hi) = work
        .v
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-9 {
        return zero();
    }

    let mut spec: Vec<Complex64> = work.v.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spec, work.w, work.h, false);
    let log_amp: Vec<f64> = spec.iter().map(|c| c.norm().max(1e-12).ln()).collect();
    let mean = circular_box_mean(&log_amp, work.w, work.h, p.spectrum_filter);
    for (i, c) in spec.iter_mut().enumerate() {
        let residual = log_amp[i] - mean[i];
        *c = Complex64::from_polar(residual.exp(), c.arg());
    }
    fft2(&mut spec, work.w, work.h, true);
    let energy = Grid {
        w: work.w,
        h: work.h,
        v: spec.iter().map(|c| c.norm_sqr()).collect(),
    };
    let smooth = bilinear_upscale(&gaussian_blur(&energy, p.smoothing_sigma), w, h);

    let (lo, hi) = smooth
        .v
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi - lo > 1e-12 * hi.abs().max(1.0)) {
        return zero();
    }
    let data = smooth
        .v
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    RasterImage::from_raw(w, h, 1, data).expect("input dimensions are valid")
}
