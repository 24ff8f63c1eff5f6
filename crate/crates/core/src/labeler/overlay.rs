use serde::{Deserialize, Serialize};

use crate::imaging::{BinaryMask, RasterImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateKind {
    Hsv,
    Rgb,
    Saliency,
}

impl CandidateKind {
    /// Tie-break priority order.
    pub const ALL: [CandidateKind; 3] = [CandidateKind::Hsv, CandidateKind::Rgb, CandidateKind::Saliency];

    pub fn as_str(self) -> &'static str {
        match self {
            CandidateKind::Hsv => "hsv",
            CandidateKind::Rgb => "rgb",
            CandidateKind::Saliency => "saliency",
        }
    }

    fn color(self) -> [u8; 3] {
        match self {
            CandidateKind::Hsv => [255, 64, 64],
            CandidateKind::Rgb => [64, 255, 64],
            CandidateKind::Saliency => [64, 128, 255],
        }
    }
}

/// Image with each mask drawn as a translucent fill and a solid boundary.
pub fn render_overlay(image: &RasterImage, masks: &[BinaryMask], kind: CandidateKind) -> RasterImage {
    let mut out = image.to_rgb();
    let base = kind.color();
    for (i, m) in masks.iter().enumerate() {
        // alternate shades so adjacent instances stay distinguishable
        let shade = if i % 2 == 0 { 1.0 } else { 0.6 };
        let color = base.map(|c| (c as f64 * shade) as u8);
        for (x, y) in m.iter_foreground() {
            if x >= out.width() || y >= out.height() {
                continue;
            }
            let (xi, yi) = (x as isize, y as isize);
            let boundary = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|&(dx, dy)| !m.get_signed(xi + dx, yi + dy));
            let px = out.pixel_mut(x, y);
            for c in 0..3 {
                px[c] = if boundary {
                    color[c]
                } else {
                    ((px[c] as u16 * 3 + color[c] as u16 * 2) / 5) as u8
                };
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_is_solid_and_outside_untouched() {
        let img = RasterImage::filled(8, 8, &[10, 10, 10]).unwrap();
        let m = BinaryMask::from_fn(8, 8, |x, y| (2..6).contains(&x) && (2..6).contains(&y)).unwrap();
        let o = render_overlay(&img, &[m], CandidateKind::Rgb);
        assert_eq!(o.pixel(0, 0), &[10, 10, 10]);
        assert_eq!(o.pixel(2, 2), &[64, 255, 64]);
        assert_eq!(
            o.pixel(3, 3),
            &[
                (30u16 + 128) as u8 / 5,
                ((30u16 + 510) / 5) as u8,
                (30u16 + 128) as u8 / 5
            ]
        );
    }
}
