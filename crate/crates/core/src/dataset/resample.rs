use crate::error::{Error, Result};
use crate::imaging::CircularRegion;
use crate::imaging::{BinaryMask, DepthImage, RasterImage};
use crate::labeler::{CandidateSet, InstanceAnnotation};

/// Integer-factor reduction of a pixel grid.
pub trait Downscale: Sized {
    fn downscale(&self, factor: usize) -> Result<Self>;
}

fn out_dims((w, h): (usize, usize), factor: usize) -> Result<(usize, usize)> {
    if factor == 0 {
        return Err(Error::InvalidParameter("downscale factor must be positive".into()));
    }
    if w % factor != 0 || h % factor != 0 {
        return Err(Error::NotDivisible {
            width: w,
            height: h,
            factor,
        });
    }
    Ok((w / factor, h / factor))
}

/// Box-filter average per block, rounded half up.
impl Downscale for RasterImage {
    fn downscale(&self, factor: usize) -> Result<Self> {
        let (ow, oh) = out_dims(self.dims(), factor)?;
        if factor == 1 {
            return Ok(self.clone());
        }
        let c = self.channels() as usize;
        let n = (factor * factor) as u32;
        let mut out = RasterImage::new(ow, oh, self.channels())?;
        let mut acc = vec![0u32; c];
        for by in 0..oh {
            for bx in 0..ow {
                acc.fill(0);
                for y in by * factor..(by + 1) * factor {
                    for x in bx * factor..(bx + 1) * factor {
                        for (a, &v) in acc.iter_mut().zip(self.pixel(x, y)) {
                            *a += v as u32;
                        }
                    }
                }
                for (o, &a) in out.pixel_mut(bx, by).iter_mut().zip(&acc) {
                    *o = ((a + n / 2) / n) as u8;
                }
            }
        }
        Ok(out)
    }
}

/// Each block takes the value of its center pixel, `(factor / 2, factor / 2)`
/// within the block.
impl Downscale for BinaryMask {
    fn downscale(&self, factor: usize) -> Result<Self> {
        let (ow, oh) = out_dims(self.dims(), factor)?;
        let o = factor / 2;
        BinaryMask::from_fn(ow, oh, |x, y| self.get(x * factor + o, y * factor + o))
    }
}

/// Lower median of the valid samples in each block; 0 when none are valid.
impl Downscale for DepthImage {
    fn downscale(&self, factor: usize) -> Result<Self> {
        let (ow, oh) = out_dims(self.dims(), factor)?;
        let mut block = Vec::with_capacity(factor * factor);
        DepthImage::from_fn(ow, oh, |bx, by| {
            block.clear();
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    let v = self.get(x, y);
                    if v != 0 {
                        block.push(v);
                    }
                }
            }
            if block.is_empty() {
                return 0;
            }
            block.sort_unstable();
            block[(block.len() - 1) / 2]
        })
    }
}

/// Box and area recomputed from the reduced mask.
impl Downscale for InstanceAnnotation {
    fn downscale(&self, factor: usize) -> Result<Self> {
        let mask = self.mask().downscale(factor)?;
        Ok(InstanceAnnotation::new(
            self.id(),
            self.image_id(),
            self.category_id(),
            mask,
            self.score(),
        ))
    }
}

/// Candidate masks downscaled. The turntable area is only divided by the
/// block size; recount it on the scaled circle when that is at hand.
impl Downscale for CandidateSet {
    fn downscale(&self, factor: usize) -> Result<Self> {
        let (w, h) = out_dims((self.image_width, self.image_height), factor)?;
        let scale = |v: &[BinaryMask]| v.iter().map(|m| m.downscale(factor)).collect::<Result<Vec<_>>>();
        Ok(CandidateSet {
            image_width: w,
            image_height: h,
            turntable_area: self.turntable_area.div_ceil((factor * factor) as u64),
            hsv_instances: scale(&self.hsv_instances)?,
            rgb_instances: scale(&self.rgb_instances)?,
            saliency_instances: scale(&self.saliency_instances)?,
            ..self.clone()
        })
    }
}

impl Downscale for CircularRegion {
    fn downscale(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidParameter("downscale factor must be positive".into()));
        }
        let f = factor as f64;
        CircularRegion::new(self.center_x / f, self.center_y / f, self.radius / f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_size() {
        let img = RasterImage::filled(1920, 1440, &[7, 8, 9]).unwrap();
        let small = img.downscale(4).unwrap();
        assert_eq!(small.dims(), (480, 360));
        assert!(small.data().chunks(3).all(|p| p == [7, 8, 9]));
    }

    #[test]
    fn identity_and_divisibility() {
        let img = RasterImage::from_fn(6, 4, 3, |x, y| [x as u8, y as u8, 1]).unwrap();
        assert_eq!(img.downscale(1).unwrap(), img);
        assert!(matches!(img.downscale(4), Err(Error::NotDivisible { factor: 4, .. })));
    }

    #[test]
    fn box_average_rounds() {
        let img = RasterImage::from_raw(2, 2, 1, vec![0, 1, 1, 1]).unwrap();
        assert_eq!(img.downscale(2).unwrap().data(), &[1]);
        let img = RasterImage::from_raw(2, 2, 1, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(img.downscale(2).unwrap().data(), &[1]);
        let img = RasterImage::from_raw(2, 2, 1, vec![0, 0, 0, 1]).unwrap();
        assert_eq!(img.downscale(2).unwrap().data(), &[0]);
    }

    #[test]
    fn depth_median_ignores_invalid() {
        let d = DepthImage::from_raw(2, 2, vec![0, 900, 1000, 1100]).unwrap();
        assert_eq!(d.downscale(2).unwrap().data(), &[1000]);
        let d = DepthImage::from_raw(2, 2, vec![0, 900, 0, 1100]).unwrap();
        assert_eq!(d.downscale(2).unwrap().data(), &[900]);
        let d = DepthImage::new(2, 2).unwrap();
        assert_eq!(d.downscale(2).unwrap().data(), &[0]);
    }

    #[test]
    fn annotation_recomputed() {
        let m = BinaryMask::from_fn(16, 16, |x, y| (4..12).contains(&x) && (8..16).contains(&y)).unwrap();
        let a = InstanceAnnotation::new(3, 1, 2, m, 1.0).downscale(4).unwrap();
        assert_eq!(a.mask().dims(), (4, 4));
        assert_eq!(a.area(), 4);
        assert_eq!(a.bbox(), a.mask().bbox().unwrap());
        assert_eq!(a.id(), 3);
    }
}
