use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use super::{BinaryMask, DepthImage, RasterImage};
use crate::error::{Error, Result};

fn missing(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::MissingImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| missing(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes a PNG into a gray or RGB raster; other layouts are converted to RGB.
pub fn decode_png_bytes(bytes: &[u8]) -> Result<RasterImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    Ok(match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            RasterImage::from_raw(w as usize, h as usize, 1, g.into_raw())?
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            RasterImage::from_raw(w as usize, h as usize, 3, rgb.into_raw())?
        }
    })
}

/// 16-bit gray PNG bytes for a depth map.
pub fn encode_png_gray16(depth: &DepthImage) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, depth.data().to_vec())
            .expect("buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma16(buf).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

impl RasterImage {
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        decode_png_bytes(&read_bytes(path)?).map_err(|e| missing(path, e))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let (w, h) = (self.width() as u32, self.height() as u32);
        let img = if self.channels() == 1 {
            DynamicImage::ImageLuma8(
                ImageBuffer::<Luma<u8>, _>::from_raw(w, h, self.data().to_vec())
                    .expect("buffer length matches dimensions"),
            )
        } else {
            DynamicImage::ImageRgb8(
                ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, self.data().to_vec())
                    .expect("buffer length matches dimensions"),
            )
        };
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), &self.encode_png()?)
    }

    /// Bilinear resample to `width x height`.
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if self.dims() == (width, height) {
            return Ok(self.clone());
        }
        let out = RasterImage::new(width, height, self.channels())?;
        let (sw, sh) = (self.width() as u32, self.height() as u32);
        let filter = image::imageops::FilterType::Triangle;
        let data = if self.channels() == 1 {
            let buf = ImageBuffer::<Luma<u8>, _>::from_raw(sw, sh, self.data().to_vec()).unwrap();
            image::imageops::resize(&buf, width as u32, height as u32, filter).into_raw()
        } else {
            let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(sw, sh, self.data().to_vec()).unwrap();
            image::imageops::resize(&buf, width as u32, height as u32, filter).into_raw()
        };
        RasterImage::from_raw(out.width(), out.height(), out.channels(), data)
    }
}

impl DepthImage {
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img =
            image::load_from_memory_with_format(&read_bytes(path)?, ImageFormat::Png).map_err(|e| missing(path, e))?;
        let g = img.to_luma16();
        let (w, h) = g.dimensions();
        DepthImage::from_raw(w as usize, h as usize, g.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), &encode_png_gray16(self)?)
    }
}

impl BinaryMask {
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = RasterImage::load_png(path)?;
        let gray = if img.channels() == 1 {
            img
        } else {
            super::rgb_to_value(&img)?
        };
        BinaryMask::from_image(&gray)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_image().save_png(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = RasterImage::from_fn(5, 4, 3, |x, y| [x as u8 * 40, y as u8 * 60, 7]).unwrap();
        let p = dir.path().join("a/rgb.png");
        rgb.save_png(&p).unwrap();
        assert_eq!(RasterImage::load_png(&p).unwrap(), rgb);

        let depth = DepthImage::from_fn(3, 3, |x, y| (x * 1000 + y) as u16 + 300).unwrap();
        let p = dir.path().join("depth.png");
        depth.save_png(&p).unwrap();
        assert_eq!(DepthImage::load_png(&p).unwrap(), depth);

        let m = BinaryMask::from_fn(6, 2, |x, _| x % 2 == 0).unwrap();
        let p = dir.path().join("m.png");
        m.save_png(&p).unwrap();
        assert_eq!(BinaryMask::load_png(&p).unwrap(), m);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = RasterImage::load_png("/nonexistent/x.png").unwrap_err();
        assert!(matches!(err, Error::MissingImage { .. }));
    }
}
