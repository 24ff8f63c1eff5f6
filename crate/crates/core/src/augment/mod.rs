//! Object bank harvesting and synthetic scene composition.
//!
//! Cropped objects are pasted in z order onto a background (later pastes over
//! earlier ones) with hard edges. Annotations are the visible masks left after
//! all pastes; an instance whose visible fraction falls below
//! `min_visible_fraction` is dropped from the annotations but its pixels stay
//! painted.

mod compose;
mod generate;
mod raster;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, DepthImage, RasterImage};
use crate::labeler::InstanceAnnotation;

pub use compose::{compose_neighboring, compose_on_random_background, compose_scene, compose_scene_with_depth};
pub use generate::{generate_range, generate_set, scene_seed, GenerateConfig, GeneratedScene, SetKind};
pub use raster::{rasterize, rotated_half_extents, Footprint};

/// One cropped object, tight to its source mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectBankEntry {
    pub entry_id: u64,
    pub class_id: u32,
    /// RGB crop with pixels outside the mask zeroed.
    pub rgb: RasterImage,
    pub mask: BinaryMask,
    /// Depth crop; pixels outside the mask are invalid.
    pub depth: Option<DepthImage>,
    pub source_scene_id: String,
    pub source_annotation_id: u64,
}

impl ObjectBankEntry {
    /// Crops the annotation's tight box out of its scene image.
    pub fn crop(
        entry_id: u64,
        ann: &InstanceAnnotation,
        scene_id: &str,
        image: &RasterImage,
        depth: Option<&DepthImage>,
    ) -> Result<Self> {
        let mask = ann.mask();
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        if mask.dims() != image.dims() {
            return Err(Error::DimensionMismatch {
                left: image.dims(),
                right: mask.dims(),
            });
        }
        let bbox = mask.bbox().ok_or(Error::EmptyMask)?;
        let mask_patch = mask.crop(bbox)?;
        let mut rgb = image.to_rgb().crop(bbox)?;
        for (x, y) in BinaryMask::from_fn(mask_patch.width(), mask_patch.height(), |x, y| !mask_patch.get(x, y))?
            .iter_foreground()
        {
            rgb.pixel_mut(x, y).fill(0);
        }
        let depth = match depth {
            Some(d) if d.dims() == image.dims() => {
                let mut patch = d.crop(bbox)?;
                for y in 0..patch.height() {
                    for x in 0..patch.width() {
                        if !mask_patch.get(x, y) {
                            patch.set(x, y, 0);
                        }
                    }
                }
                Some(patch)
            }
            Some(d) => {
                return Err(Error::DimensionMismatch {
                    left: image.dims(),
                    right: d.dims(),
                })
            }
            None => None,
        };
        Ok(Self {
            entry_id,
            class_id: ann.category_id(),
            rgb,
            mask: mask_patch,
            depth,
            source_scene_id: scene_id.to_string(),
            source_annotation_id: ann.id(),
        })
    }
}

/// Pixel data an annotation is cropped from.
#[derive(Clone, Debug)]
pub struct BankSource {
    pub scene_id: String,
    pub image: RasterImage,
    pub depth: Option<DepthImage>,
}

#[derive(Debug, Default)]
pub struct BankBuild {
    pub entries: Vec<ObjectBankEntry>,
    /// `(annotation id, reason)` for every annotation that produced no entry.
    pub skipped: Vec<(u64, String)>,
}

/// One entry per annotation, numbered in input order. Each image is fetched
/// once through `source`; failures skip the affected annotations.
pub fn build_object_bank(
    selected: &[InstanceAnnotation],
    mut source: impl FnMut(u64) -> Result<BankSource>,
) -> BankBuild {
    let mut cache: HashMap<u64, std::result::Result<BankSource, String>> = HashMap::new();
    let mut out = BankBuild::default();
    for ann in selected {
        let src = cache
            .entry(ann.image_id())
            .or_insert_with(|| source(ann.image_id()).map_err(|e| e.to_string()));
        let result = match src {
            Ok(src) => ObjectBankEntry::crop(
                out.entries.len() as u64 + 1,
                ann,
                &src.scene_id,
                &src.image,
                src.depth.as_ref(),
            )
            .map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        };
        match result {
            Ok(entry) => out.entries.push(entry),
            Err(reason) => {
                log::warn!("annotation {} skipped: {reason}", ann.id());
                out.skipped.push((ann.id(), reason));
            }
        }
    }
    out
}

fn default_count_min() -> u32 {
    3
}
fn default_count_max() -> u32 {
    15
}
fn default_rotation() -> [f64; 2] {
    [0.0, 360.0]
}
fn default_min_visible() -> f64 {
    0.25
}
fn default_attempts() -> u32 {
    50
}
fn default_group() -> [u32; 2] {
    [2, 4]
}
fn default_gap() -> u32 {
    2
}
fn default_overlap() -> f64 {
    0.10
}
fn default_true() -> bool {
    true
}
fn default_plane_depth() -> u16 {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    #[serde(default = "default_count_min")]
    pub count_min: u32,
    #[serde(default = "default_count_max")]
    pub count_max: u32,
    /// Rotation range in degrees, sampled uniformly from `[lo, hi)`.
    #[serde(default = "default_rotation")]
    pub rotation: [f64; 2],
    #[serde(default = "default_min_visible")]
    pub min_visible_fraction: f64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    /// Inclusive range of same-class group sizes for neighboring scenes.
    #[serde(default = "default_group")]
    pub neighbor_group_size: [u32; 2],
    /// Contact tolerance: a group member's mask dilated by this many pixels
    /// must touch the group.
    #[serde(default = "default_gap")]
    pub neighbor_gap: u32,
    #[serde(default = "default_overlap")]
    pub neighbor_max_overlap: f64,
    /// Fill neighboring scenes up to a plain object count with non-group objects.
    #[serde(default = "default_true")]
    pub neighbor_extras: bool,
    /// Permit placements whose rotated box crosses the image border.
    #[serde(default)]
    pub allow_clipping: bool,
    /// Depth of the background plane in millimeters when no background depth is given.
    #[serde(default = "default_plane_depth")]
    pub plane_depth_mm: u16,
    /// Size backgrounds are resampled to, `[width, height]`.
    #[serde(default)]
    pub target_size: Option<[usize; 2]>,
}

impl Default for PlacementParams {
    fn default() -> Self {
        Self {
            count_min: default_count_min(),
            count_max: default_count_max(),
            rotation: default_rotation(),
            min_visible_fraction: default_min_visible(),
            max_attempts: default_attempts(),
            neighbor_group_size: default_group(),
            neighbor_gap: default_gap(),
            neighbor_max_overlap: default_overlap(),
            neighbor_extras: true,
            allow_clipping: false,
            plane_depth_mm: default_plane_depth(),
            target_size: None,
        }
    }
}

impl PlacementParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.count_min < 1 || self.count_min > self.count_max {
            return bad(format!(
                "object count range [{}, {}] must satisfy 1 <= min <= max",
                self.count_min, self.count_max
            ));
        }
        if !(self.min_visible_fraction > 0.0 && self.min_visible_fraction <= 1.0) {
            return bad(format!(
                "min_visible_fraction must lie in (0, 1], got {}",
                self.min_visible_fraction
            ));
        }
        if !(self.rotation[0] <= self.rotation[1]) || !self.rotation.iter().all(|r| r.is_finite()) {
            return bad(format!("rotation range {:?} is not ordered", self.rotation));
        }
        let [gmin, gmax] = self.neighbor_group_size;
        if gmin < 1 || gmin > gmax {
            return bad(format!("neighbor_group_size [{gmin}, {gmax}] is not ordered"));
        }
        if !(0.0..=1.0).contains(&self.neighbor_max_overlap) {
            return bad(format!(
                "neighbor_max_overlap must lie in [0, 1], got {}",
                self.neighbor_max_overlap
            ));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub entry_id: u64,
    pub class_id: u32,
    pub center_x: f64,
    pub center_y: f64,
    /// Degrees, counter-clockwise in image coordinates.
    pub angle: f64,
    /// Paste order; larger is on top.
    pub z_index: u32,
    /// Member of the same-class touching group of a neighboring scene.
    #[serde(default)]
    pub group: bool,
    /// Covered pixel count of the rotated mask.
    pub full_area: u64,
    /// Pixels still visible after all later pastes.
    pub visible_area: u64,
    /// Whether the instance survived the visibility rule.
    pub annotated: bool,
}

impl Placement {
    pub fn visible_fraction(&self) -> f64 {
        if self.full_area == 0 {
            0.0
        } else {
            self.visible_area as f64 / self.full_area as f64
        }
    }
}

/// A synthetic annotated scene.
#[derive(Clone, Debug)]
pub struct ComposedScene {
    pub image: RasterImage,
    pub depth: Option<DepthImage>,
    pub placements: Vec<Placement>,
    /// Visible masks of the annotated placements, in z order.
    pub annotations: Vec<InstanceAnnotation>,
    /// Pixels whose final color came from a pasted patch.
    pub painted: BinaryMask,
    pub background_id: usize,
    pub seed: u64,
    /// Instances that could not be placed.
    pub failures: Vec<String>,
}
