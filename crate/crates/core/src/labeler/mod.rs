//! Weak labeling: candidate instance masks from background subtraction and
//! saliency thresholding, and selection of one candidate list per scene.

mod overlay;
mod saliency;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    abs_diff_gray, abs_diff_sum, binarize, connected_components, morph_close, morph_open, otsu_threshold, rgb_to_value,
    BBox, BinaryMask, CircularRegion, Connectivity, DepthImage, RasterImage, StructuringElement,
};

pub use overlay::{render_overlay, CandidateKind};
pub use saliency::{spectral_residual_saliency, SpectralResidualParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundVariant {
    #[default]
    Dark,
    Light,
}

/// One acquisition: a single-class scene image with its object-free background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub image_path: PathBuf,
    pub background_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency_path: Option<PathBuf>,
    pub class_id: u32,
    #[serde(default)]
    pub background_variant: BackgroundVariant,
    pub turntable: CircularRegion,
}

impl SceneRecord {
    /// Saliency map location: the explicit path, else `saliency.png` in the
    /// image directory, else `<image stem>.saliency.png`.
    fn saliency_candidates(&self, root: &Path) -> Vec<PathBuf> {
        if let Some(p) = &self.saliency_path {
            return vec![root.join(p)];
        }
        let image = root.join(&self.image_path);
        let mut out = Vec::new();
        if let Some(dir) = image.parent() {
            out.push(dir.join("saliency.png"));
        }
        if let Some(stem) = image.file_stem() {
            out.push(image.with_file_name(format!("{}.saliency.png", stem.to_string_lossy())));
        }
        out
    }
}

/// Decoded pixel data of a scene.
#[derive(Clone, Debug)]
pub struct SceneImages {
    pub image: RasterImage,
    pub background: RasterImage,
    pub depth: Option<DepthImage>,
    pub saliency: Option<RasterImage>,
}

impl SceneImages {
    pub fn new(image: RasterImage, background: RasterImage) -> Result<Self> {
        let image = image.to_rgb();
        let background = background.to_rgb();
        if image.dims() != background.dims() {
            return Err(Error::DimensionMismatch {
                left: image.dims(),
                right: background.dims(),
            });
        }
        Ok(Self {
            image,
            background,
            depth: None,
            saliency: None,
        })
    }

    /// Loads the scene's files relative to the dataset `root`.
    pub fn load(scene: &SceneRecord, root: &Path) -> Result<Self> {
        let image = RasterImage::load_png(root.join(&scene.image_path))?;
        let background = RasterImage::load_png(root.join(&scene.background_path))?;
        let mut images = Self::new(image, background)?;
        if let Some(p) = &scene.depth_path {
            let depth = DepthImage::load_png(root.join(p))?;
            if depth.dims() != images.image.dims() {
                return Err(Error::DimensionMismatch {
                    left: images.image.dims(),
                    right: depth.dims(),
                });
            }
            images.depth = Some(depth);
        }
        for p in scene.saliency_candidates(root) {
            if p.is_file() {
                let sal = RasterImage::load_png(&p)?;
                let sal = if sal.channels() == 1 { sal } else { rgb_to_value(&sal)? };
                if sal.dims() != images.image.dims() {
                    return Err(Error::DimensionMismatch {
                        left: images.image.dims(),
                        right: sal.dims(),
                    });
                }
                images.saliency = Some(sal);
                break;
            }
        }
        Ok(images)
    }
}

fn default_opening_radius() -> u32 {
    3
}
fn default_min_instance_area() -> f64 {
    0.001
}
fn default_t0() -> u32 {
    40
}
fn default_step() -> u32 {
    10
}
fn default_max_area_fraction() -> f64 {
    0.30
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelerParams {
    /// Closing radius in pixels; `None` scales 5 px at 1920 px width to the image.
    #[serde(default)]
    pub closing_radius: Option<u32>,
    #[serde(default = "default_opening_radius")]
    pub opening_radius: u32,
    /// Minimum instance area as a fraction of the image area.
    #[serde(default = "default_min_instance_area")]
    pub min_instance_area: f64,
    #[serde(default = "default_t0")]
    pub saliency_t0: u32,
    #[serde(default = "default_step")]
    pub saliency_step: u32,
    /// Cap on the total saliency foreground, as a fraction of the turntable area.
    #[serde(default = "default_max_area_fraction")]
    pub max_area_fraction: f64,
    #[serde(default)]
    pub connectivity: Connectivity,
}

impl Default for LabelerParams {
    fn default() -> Self {
        Self {
            closing_radius: None,
            opening_radius: default_opening_radius(),
            min_instance_area: default_min_instance_area(),
            saliency_t0: default_t0(),
            saliency_step: default_step(),
            max_area_fraction: default_max_area_fraction(),
            connectivity: Connectivity::default(),
        }
    }
}

impl LabelerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_area_fraction > 0.0 && self.max_area_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "max_area_fraction must lie in (0, 1), got {}",
                self.max_area_fraction
            )));
        }
        if self.saliency_step == 0 {
            return Err(Error::InvalidParameter("saliency_step must be positive".into()));
        }
        if self.saliency_t0 > 255 {
            return Err(Error::InvalidParameter(format!(
                "saliency_t0 must be at most 255, got {}",
                self.saliency_t0
            )));
        }
        if !(0.0..1.0).contains(&self.min_instance_area) {
            return Err(Error::InvalidParameter(format!(
                "min_instance_area must lie in [0, 1), got {}",
                self.min_instance_area
            )));
        }
        if self.closing_radius == Some(0) || self.opening_radius == 0 {
            return Err(Error::InvalidParameter("morphology radii must be at least 1".into()));
        }
        Ok(())
    }

    pub fn closing_radius_for(&self, image_width: usize) -> u32 {
        self.closing_radius
            .unwrap_or_else(|| ((5 * image_width).div_ceil(1920)).max(1) as u32)
    }

    fn min_area_px(&self, image_area: u64) -> f64 {
        self.min_instance_area * image_area as f64
    }
}

/// One instance mask with its derived box and area.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    mask: BinaryMask,
    bbox: BBox,
    area: u64,
    score: f64,
}

impl InstanceAnnotation {
    /// An empty mask gets a zero box and zero area.
    pub fn new(id: u64, image_id: u64, category_id: u32, mask: BinaryMask, score: f64) -> Self {
        let bbox = mask.bbox().unwrap_or_default();
        let area = mask.count();
        Self {
            id,
            image_id,
            category_id,
            mask,
            bbox,
            area,
            score,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }
    pub fn image_id(&self) -> u64 {
        self.image_id
    }
    pub fn category_id(&self) -> u32 {
        self.category_id
    }
    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }
    pub fn into_mask(self) -> BinaryMask {
        self.mask
    }
    pub fn bbox(&self) -> BBox {
        self.bbox
    }
    pub fn area(&self) -> u64 {
        self.area
    }
    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn with_ids(mut self, id: u64, image_id: u64) -> Self {
        self.id = id;
        self.image_id = image_id;
        self
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }
}

fn annotate(masks: Vec<BinaryMask>, class_id: u32) -> Vec<InstanceAnnotation> {
    masks
        .into_iter()
        .enumerate()
        .map(|(i, m)| InstanceAnnotation::new(i as u64 + 1, 0, class_id, m, 1.0))
        .collect()
}

/// Components of `fg` after the given morphology, minus those below the area floor.
fn extract_instances(
    fg: &BinaryMask,
    closing: &StructuringElement,
    opening: Option<&StructuringElement>,
    p: &LabelerParams,
) -> Vec<BinaryMask> {
    let mut m = morph_close(fg, closing);
    if let Some(se) = opening {
        m = morph_open(&m, se);
    }
    let image_area = (m.width() * m.height()) as u64;
    let labels = connected_components(&m, p.connectivity);
    let floor = p.min_area_px(image_area);
    labels
        .areas()
        .into_iter()
        .enumerate()
        .filter(|&(_, a)| a > 0 && a as f64 >= floor)
        .map(|(i, _)| labels.mask_of(i as u32 + 1))
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct BgSubCandidates {
    pub hsv: Vec<InstanceAnnotation>,
    pub rgb: Vec<InstanceAnnotation>,
    /// Otsu thresholds of each path; `None` when the difference image was constant.
    pub hsv_threshold: Option<u8>,
    pub rgb_threshold: Option<u8>,
}

fn bgsub_path(
    diff: &RasterImage,
    turntable: &BinaryMask,
    closing: &StructuringElement,
    p: &LabelerParams,
) -> Result<(Option<u8>, Vec<BinaryMask>)> {
    let t = match otsu_threshold(diff) {
        Ok(t) => t,
        Err(Error::DegenerateHistogram) => return Ok((None, Vec::new())),
        Err(e) => return Err(e),
    };
    let fg = binarize(diff, t)?.and(turntable)?;
    Ok((Some(t), extract_instances(&fg, closing, None, p)))
}

/// Background-subtraction candidates through the HSV-value and RGB-difference paths.
pub fn bgsub_candidates(scene: &SceneRecord, images: &SceneImages, p: &LabelerParams) -> Result<BgSubCandidates> {
    p.validate()?;
    let (w, h) = images.image.dims();
    let turntable = scene.turntable.to_mask(w, h)?;
    let closing = StructuringElement::disc(p.closing_radius_for(w))?;

    let value_diff = abs_diff_gray(&rgb_to_value(&images.image)?, &rgb_to_value(&images.background)?)?;
    let (hsv_threshold, hsv) = bgsub_path(&value_diff, &turntable, &closing, p)?;
    let rgb_diff = abs_diff_sum(&images.image, &images.background)?;
    let (rgb_threshold, rgb) = bgsub_path(&rgb_diff, &turntable, &closing, p)?;

    Ok(BgSubCandidates {
        hsv: annotate(hsv, scene.class_id),
        rgb: annotate(rgb, scene.class_id),
        hsv_threshold,
        rgb_threshold,
    })
}

#[derive(Clone, Debug)]
pub struct SaliencyOutcome {
    pub instances: Vec<InstanceAnnotation>,
    /// Threshold at which the loop stopped (may exceed 255 when it ran out).
    pub threshold: u32,
    /// Thresholds evaluated, including the final one.
    pub iterations: u32,
    /// Loop ran past 255 or the final foreground produced no instances.
    pub degenerate: bool,
}

/// Thresholds a saliency map, raising the threshold by `saliency_step` until
/// the foreground inside the turntable covers at most `max_area_fraction` of it.
pub fn saliency_instances(sal: &RasterImage, scene: &SceneRecord, p: &LabelerParams) -> Result<SaliencyOutcome> {
    p.validate()?;
    if sal.channels() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            actual: sal.channels(),
        });
    }
    let (w, h) = sal.dims();
    let turntable = scene.turntable.to_mask(w, h)?;
    let cap = p.max_area_fraction * turntable.count() as f64;

    let mut t = p.saliency_t0;
    let mut iterations = 0;
    let fg = loop {
        iterations += 1;
        let fg = binarize(sal, t as u8)?.and(&turntable)?;
        if fg.count() as f64 <= cap {
            break fg;
        }
        t += p.saliency_step;
        if t > 255 {
            return Ok(SaliencyOutcome {
                instances: Vec::new(),
                threshold: t,
                iterations,
                degenerate: true,
            });
        }
    };

    let closing = StructuringElement::disc(p.closing_radius_for(w))?;
    let opening = StructuringElement::disc(p.opening_radius)?;
    let masks = extract_instances(&fg, &closing, Some(&opening), p);
    Ok(SaliencyOutcome {
        degenerate: masks.is_empty(),
        instances: annotate(masks, scene.class_id),
        threshold: t,
        iterations,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Hsv,
    Rgb,
    Saliency,
    Reject,
    #[default]
    Undecided,
}

impl Decision {
    pub fn kind(self) -> Option<CandidateKind> {
        match self {
            Decision::Hsv => Some(CandidateKind::Hsv),
            Decision::Rgb => Some(CandidateKind::Rgb),
            Decision::Saliency => Some(CandidateKind::Saliency),
            Decision::Reject | Decision::Undecided => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Hsv => "hsv",
            Decision::Rgb => "rgb",
            Decision::Saliency => "saliency",
            Decision::Reject => "reject",
            Decision::Undecided => "undecided",
        }
    }
}

impl std::str::FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hsv" => Ok(Decision::Hsv),
            "rgb" => Ok(Decision::Rgb),
            "saliency" => Ok(Decision::Saliency),
            "reject" => Ok(Decision::Reject),
            "undecided" => Ok(Decision::Undecided),
            other => Err(format!("unknown decision {other:?}")),
        }
    }
}

impl From<CandidateKind> for Decision {
    fn from(k: CandidateKind) -> Self {
        match k {
            CandidateKind::Hsv => Decision::Hsv,
            CandidateKind::Rgb => Decision::Rgb,
            CandidateKind::Saliency => Decision::Saliency,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionSource {
    Human,
    Heuristic,
}

/// The three automatic proposals for one scene and the choice among them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub scene_id: String,
    pub image_width: usize,
    pub image_height: usize,
    /// Pixel count of the turntable disc inside the image.
    pub turntable_area: u64,
    pub hsv_instances: Vec<BinaryMask>,
    pub rgb_instances: Vec<BinaryMask>,
    pub saliency_instances: Vec<BinaryMask>,
    #[serde(default)]
    pub saliency_threshold: Option<u32>,
    #[serde(default)]
    pub saliency_degenerate: bool,
    #[serde(default)]
    pub decision: Decision,
    #[serde(default)]
    pub decision_source: Option<DecisionSource>,
}

impl CandidateSet {
    pub fn instances(&self, kind: CandidateKind) -> &[BinaryMask] {
        match kind {
            CandidateKind::Hsv => &self.hsv_instances,
            CandidateKind::Rgb => &self.rgb_instances,
            CandidateKind::Saliency => &self.saliency_instances,
        }
    }

    /// Masks of the chosen candidate, empty unless a candidate is chosen.
    pub fn selected(&self) -> &[BinaryMask] {
        self.decision.kind().map_or(&[], |k| self.instances(k))
    }

    pub fn is_human_decided(&self) -> bool {
        self.decision_source == Some(DecisionSource::Human) && self.decision != Decision::Undecided
    }

    fn is_valid(&self, kind: CandidateKind, p: &LabelerParams) -> bool {
        let masks = self.instances(kind);
        let floor = p.min_area_px((self.image_width * self.image_height) as u64);
        let cap = p.max_area_fraction * self.turntable_area as f64;
        let mut total = 0u64;
        for m in masks {
            let a = m.count();
            if (a as f64) < floor || a as f64 > cap {
                return false;
            }
            total += a;
        }
        !masks.is_empty() && total > 0 && total as f64 <= cap
    }
}

/// Heuristic batch choice: among valid candidate lists take the one with the
/// fewest instances, preferring hsv, then rgb, then saliency; reject if none
/// is valid.
pub fn auto_select(mut c: CandidateSet, p: &LabelerParams) -> CandidateSet {
    let best = CandidateKind::ALL
        .into_iter()
        .filter(|&k| c.is_valid(k, p))
        .min_by_key(|&k| c.instances(k).len());
    c.decision = best.map_or(Decision::Reject, Decision::from);
    c.decision_source = Some(DecisionSource::Heuristic);
    c
}

/// Produces saliency maps for scenes.
pub trait SaliencySource: Sync {
    fn saliency_map(&self, scene: &SceneRecord, images: &SceneImages) -> Result<RasterImage>;
}

/// Always computes spectral-residual saliency.
#[derive(Clone, Debug, Default)]
pub struct SpectralResidual(pub SpectralResidualParams);

impl SaliencySource for SpectralResidual {
    fn saliency_map(&self, _scene: &SceneRecord, images: &SceneImages) -> Result<RasterImage> {
        Ok(spectral_residual_saliency(&images.image, &self.0))
    }
}

/// Uses a map supplied next to the scene image when one was loaded, else spectral residual.
#[derive(Clone, Debug, Default)]
pub struct PreferExternal(pub SpectralResidual);

impl SaliencySource for PreferExternal {
    fn saliency_map(&self, scene: &SceneRecord, images: &SceneImages) -> Result<RasterImage> {
        match &images.saliency {
            Some(map) => Ok(map.clone()),
            None => self.0.saliency_map(scene, images),
        }
    }
}

/// Runs both labeling paths on one scene.
pub fn label_scene(
    scene: &SceneRecord,
    images: &SceneImages,
    p: &LabelerParams,
    source: &dyn SaliencySource,
) -> Result<CandidateSet> {
    let bg = bgsub_candidates(scene, images, p)?;
    let sal_map = source.saliency_map(scene, images)?;
    let sal = saliency_instances(&sal_map, scene, p)?;
    let (w, h) = images.image.dims();
    let masks = |v: Vec<InstanceAnnotation>| v.into_iter().map(InstanceAnnotation::into_mask).collect();
    Ok(CandidateSet {
        scene_id: scene.scene_id.clone(),
        image_width: w,
        image_height: h,
        turntable_area: scene.turntable.to_mask(w, h)?.count(),
        hsv_instances: masks(bg.hsv),
        rgb_instances: masks(bg.rgb),
        saliency_instances: masks(sal.instances),
        saliency_threshold: Some(sal.threshold),
        saliency_degenerate: sal.degenerate,
        decision: Decision::Undecided,
        decision_source: None,
    })
}

#[derive(Debug)]
pub struct SceneOutcome {
    pub scene_id: String,
    pub result: std::result::Result<CandidateSet, String>,
}

#[derive(Debug, Default)]
pub struct LabelRun {
    pub scenes: Vec<SceneOutcome>,
    /// Annotations of every non-rejected scene, numbered in scene order.
    pub selected: Vec<InstanceAnnotation>,
}

/// `image_id` assigned to the scene at `index` of a manifest.
pub fn image_id_for_index(index: usize) -> u64 {
    index as u64 + 1
}

/// Annotations for a decided candidate set; ids continue from `next_id`.
pub fn selected_annotations(
    c: &CandidateSet,
    class_id: u32,
    image_id: u64,
    next_id: &mut u64,
) -> Vec<InstanceAnnotation> {
    c.selected()
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let ann = InstanceAnnotation::new(*next_id, image_id, class_id, m.clone(), 1.0);
            *next_id += 1;
            ann
        })
        .collect()
}

/// Labels every scene in parallel. Human decisions in `prior` carry over;
/// all other scenes are decided by [`auto_select`]. A failing scene is
/// reported in its outcome and does not stop the batch.
pub fn label_dataset(
    root: &Path,
    scenes: &[SceneRecord],
    prior: &HashMap<String, CandidateSet>,
    p: &LabelerParams,
    source: &dyn SaliencySource,
) -> Result<LabelRun> {
    p.validate()?;
    let outcomes: Vec<SceneOutcome> = scenes
        .par_iter()
        .map(|scene| {
            let result = SceneImages::load(scene, root)
                .and_then(|images| label_scene(scene, &images, p, source))
                .map(
                    |mut c| match prior.get(&scene.scene_id).filter(|c| c.is_human_decided()) {
                        Some(human) => {
                            c.decision = human.decision;
                            c.decision_source = human.decision_source;
                            c
                        }
                        None => auto_select(c, p),
                    },
                )
                .map_err(|e| e.to_string());
            SceneOutcome {
                scene_id: scene.scene_id.clone(),
                result,
            }
        })
        .collect();

    let mut next_id = 1;
    let mut selected = Vec::new();
    for (i, (scene, outcome)) in scenes.iter().zip(&outcomes).enumerate() {
        if let Ok(c) = &outcome.result {
            selected.extend(selected_annotations(
                c,
                scene.class_id,
                image_id_for_index(i),
                &mut next_id,
            ));
        }
    }
    Ok(LabelRun {
        scenes: outcomes,
        selected,
    })
}
