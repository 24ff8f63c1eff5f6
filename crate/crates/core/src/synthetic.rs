//! Analytic turntable scenes with known masks, for tests and demos.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::scene_seed;
use crate::dataset::{dataset_root, Category, CocoCategory, CocoData, CocoImage, DatasetManifest, ManifestScene};
use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, CircularRegion, DepthImage, RasterImage};
use crate::labeler::{image_id_for_index, BackgroundVariant, SceneRecord};
use crate::InstanceAnnotation;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Disc {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Rectangle {
        cx: f64,
        cy: f64,
        half_w: f64,
        half_h: f64,
        angle: f64,
    },
    Ellipse {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        angle: f64,
    },
}

impl Shape {
    pub fn center(&self) -> (f64, f64) {
        match *self {
            Shape::Disc { cx, cy, .. } | Shape::Rectangle { cx, cy, .. } | Shape::Ellipse { cx, cy, .. } => (cx, cy),
        }
    }

    /// Radius of a circle around the center that encloses the shape.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Disc { r, .. } => r,
            Shape::Rectangle { half_w, half_h, .. } => half_w.hypot(half_h),
            Shape::Ellipse { a, b, .. } => a.max(b),
        }
    }

    /// Shape-local coordinates of a point, rotated into the shape frame.
    fn local(&self, px: f64, py: f64, angle: f64) -> (f64, f64) {
        let (cx, cy) = self.center();
        let (s, c) = angle.sin_cos();
        let (dx, dy) = (px - cx, py - cy);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Height profile in [0, 1] at a point, `None` outside.
    fn profile(&self, px: f64, py: f64) -> Option<f64> {
        match *self {
            Shape::Disc { cx, cy, r } => {
                let q = ((px - cx).powi(2) + (py - cy).powi(2)) / (r * r);
                (q <= 1.0).then(|| (1.0 - q).sqrt())
            }
            Shape::Rectangle {
                half_w, half_h, angle, ..
            } => {
                let (u, v) = self.local(px, py, angle);
                (u.abs() <= half_w && v.abs() <= half_h).then_some(1.0)
            }
            Shape::Ellipse { a, b, angle, .. } => {
                let (u, v) = self.local(px, py, angle);
                let q = (u / a).powi(2) + (v / b).powi(2);
                (q <= 1.0).then(|| (1.0 - q).sqrt())
            }
        }
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        self.profile(px, py).is_some()
    }

    /// Pixels whose centers lie inside the shape.
    pub fn to_mask(&self, width: usize, height: usize) -> Result<BinaryMask> {
        BinaryMask::from_fn(width, height, |x, y| self.contains(x as f64 + 0.5, y as f64 + 0.5))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub width: usize,
    pub height: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub min_size: f64,
    pub max_size: f64,
    /// Minimum distance between the enclosing circles of two shapes.
    pub gap: f64,
    pub noise_sigma: f64,
    pub classes: u32,
    pub plane_depth_mm: u16,
    pub max_height_mm: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            min_shapes: 1,
            max_shapes: 3,
            min_size: 14.0,
            max_size: 28.0,
            gap: 16.0,
            noise_sigma: 3.0,
            classes: 3,
            plane_depth_mm: 1000,
            max_height_mm: 60.0,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.width < 32 || self.height < 32 {
            return bad("synthetic images must be at least 32x32");
        }
        if self.min_shapes == 0 || self.min_shapes > self.max_shapes {
            return bad("need 1 <= min_shapes <= max_shapes");
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size) {
            return bad("need 0 < min_size <= max_size");
        }
        if !(self.noise_sigma >= 0.0) || !(self.gap >= 0.0) || self.classes == 0 {
            return bad("noise_sigma and gap must be non-negative, classes positive");
        }
        if self.max_size * 2.0 >= self.turntable().radius {
            return bad("max_size too large for the turntable");
        }
        Ok(())
    }

    pub fn turntable(&self) -> CircularRegion {
        CircularRegion {
            center_x: self.width as f64 / 2.0,
            center_y: self.height as f64 / 2.0,
            radius: 0.45 * self.width.min(self.height) as f64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub image: RasterImage,
    pub background: RasterImage,
    pub depth: DepthImage,
    pub turntable: CircularRegion,
    pub class_id: u32,
    pub shapes: Vec<Shape>,
    /// Rasterization oracle, one mask per shape.
    pub masks: Vec<BinaryMask>,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn random_shape(rng: &mut ChaCha8Rng, p: &SyntheticParams, cx: f64, cy: f64) -> Shape {
    let size = rng.random_range(p.min_size..=p.max_size);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    match rng.random_range(0..3) {
        0 => Shape::Disc { cx, cy, r: size },
        1 => {
            let aspect = rng.random_range(0.55..=1.0);
            Shape::Rectangle {
                cx,
                cy,
                half_w: size * 0.75,
                half_h: size * 0.75 * aspect,
                angle,
            }
        }
        _ => {
            let aspect = rng.random_range(0.5..=0.9);
            Shape::Ellipse {
                cx,
                cy,
                a: size,
                b: size * aspect,
                angle,
            }
        }
    }
}

/// Rejection-samples separated shapes inside the turntable. May return fewer
/// than `n` when the table is crowded.
fn place_shapes(rng: &mut ChaCha8Rng, p: &SyntheticParams, n: usize) -> Vec<Shape> {
    let tt = p.turntable();
    let mut shapes: Vec<Shape> = Vec::with_capacity(n);
    let mut attempts = 0;
    while shapes.len() < n && attempts < 500 {
        attempts += 1;
        let cand = random_shape(rng, p, 0.0, 0.0);
        let br = cand.bounding_radius();
        let reach = tt.radius - br - 2.0;
        let (dx, dy) = (rng.random_range(-reach..=reach), rng.random_range(-reach..=reach));
        if dx.hypot(dy) > reach {
            continue;
        }
        let (cx, cy) = (tt.center_x + dx, tt.center_y + dy);
        let fits = shapes.iter().all(|s| {
            let (sx, sy) = s.center();
            (sx - cx).hypot(sy - cy) >= s.bounding_radius() + br + p.gap
        });
        if fits {
            let shape = match cand {
                Shape::Disc { r, .. } => Shape::Disc { cx, cy, r },
                Shape::Rectangle {
                    half_w, half_h, angle, ..
                } => Shape::Rectangle {
                    cx,
                    cy,
                    half_w,
                    half_h,
                    angle,
                },
                Shape::Ellipse { a, b, angle, .. } => Shape::Ellipse { cx, cy, a, b, angle },
            };
            shapes.push(shape);
        }
    }
    shapes
}

fn noisy(value: f64, noise: &Option<Normal<f64>>, rng: &mut ChaCha8Rng) -> u8 {
    let n = noise.as_ref().map_or(0.0, |d| d.sample(rng));
    (value + n).round().clamp(0.0, 255.0) as u8
}

/// Renders one scene. `class_id` is fixed by the caller; the rest follows `seed`.
pub fn synthetic_scene(p: &SyntheticParams, class_id: u32, seed: u64) -> Result<SyntheticScene> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (p.width, p.height);
    let n = rng.random_range(p.min_shapes..=p.max_shapes);
    let shapes = place_shapes(&mut rng, p, n);
    if shapes.is_empty() {
        return Err(Error::InvalidParameter("could not place any synthetic shape".into()));
    }
    let bg_level: f64 = rng.random_range(30.0..60.0);
    let tint = [bg_level, bg_level + 3.0, bg_level + 6.0];
    let colors: Vec<[f64; 3]> = shapes
        .iter()
        .map(|_| {
            let hue = rng.random_range(0.0..360.0);
            let v = rng.random_range(170.0..235.0) / 255.0;
            hsv_to_rgb(hue, rng.random_range(0.5..0.9), v).map(|c| c * 255.0)
        })
        .collect();
    let heights: Vec<f64> = shapes
        .iter()
        .map(|_| rng.random_range(0.4..=1.0) * p.max_height_mm)
        .collect();
    let noise = (p.noise_sigma > 0.0).then(|| Normal::new(0.0, p.noise_sigma).expect("finite sigma"));

    let mut image = RasterImage::new(w, h, 3)?;
    let mut background = RasterImage::new(w, h, 3)?;
    let mut depth = DepthImage::filled(w, h, p.plane_depth_mm)?;
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let hit = shapes
                .iter()
                .enumerate()
                .find_map(|(i, s)| s.profile(px, py).map(|z| (i, z)));
            let base = match hit {
                Some((i, z)) => {
                    let mm = p.plane_depth_mm as f64 - heights[i] * z.max(0.2);
                    depth.set(x, y, mm.round().max(1.0) as u16);
                    colors[i]
                }
                None => tint,
            };
            for (c, &v) in base.iter().enumerate() {
                image.pixel_mut(x, y)[c] = noisy(v, &noise, &mut rng);
            }
            for (c, &v) in tint.iter().enumerate() {
                background.pixel_mut(x, y)[c] = noisy(v, &noise, &mut rng);
            }
        }
    }
    let masks = shapes.iter().map(|s| s.to_mask(w, h)).collect::<Result<Vec<_>>>()?;
    Ok(SyntheticScene {
        image,
        background,
        depth,
        turntable: p.turntable(),
        class_id,
        shapes,
        masks,
    })
}

pub fn synthetic_scene_id(index: usize) -> String {
    format!("scene-{index:04}")
}

/// Scene `i` gets class `i % classes + 1` and seed `scene_seed(seed, i)`.
pub fn synthetic_scenes(p: &SyntheticParams, count: usize, seed: u64) -> Result<Vec<SyntheticScene>> {
    use rayon::prelude::*;
    (0..count)
        .into_par_iter()
        .map(|i| synthetic_scene(p, (i as u32 % p.classes) + 1, scene_seed(seed, i)))
        .collect()
}

pub fn synthetic_categories(classes: u32) -> Vec<Category> {
    (1..=classes)
        .map(|id| Category {
            id,
            name: format!("class-{id}"),
        })
        .collect()
}

/// Ground truth in manifest order: scene `i` is image `i + 1`.
pub fn ground_truth(scenes: &[SyntheticScene], records: &[SceneRecord], categories: &[Category]) -> CocoData {
    let mut data = CocoData {
        categories: categories
            .iter()
            .map(|c| CocoCategory {
                id: c.id,
                name: c.name.clone(),
            })
            .collect(),
        ..Default::default()
    };
    let mut next_id = 1;
    for (i, (s, r)) in scenes.iter().zip(records).enumerate() {
        let image_id = image_id_for_index(i);
        data.images.push(CocoImage {
            id: image_id,
            file_name: r.image_path.to_string_lossy().replace('\\', "/"),
            width: s.image.width(),
            height: s.image.height(),
        });
        for m in &s.masks {
            data.annotations
                .push(InstanceAnnotation::new(next_id, image_id, s.class_id, m.clone(), 1.0));
            next_id += 1;
        }
    }
    data
}

#[derive(Debug)]
pub struct SyntheticDataset {
    pub manifest_path: PathBuf,
    pub manifest: DatasetManifest,
    pub scenes: Vec<SyntheticScene>,
    pub ground_truth: CocoData,
}

/// Writes the manifest plus `scenes/<id>/{image,background,depth}.png` and
/// `ground_truth.json` in the manifest's directory.
pub fn write_synthetic_dataset(
    manifest_path: &Path,
    p: &SyntheticParams,
    count: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    use rayon::prelude::*;
    let root = dataset_root(manifest_path);
    let root = root.as_path();
    let scenes = synthetic_scenes(p, count, seed)?;
    let records: Vec<SceneRecord> = (0..count)
        .map(|i| {
            let dir = PathBuf::from("scenes").join(synthetic_scene_id(i));
            SceneRecord {
                scene_id: synthetic_scene_id(i),
                image_path: dir.join("image.png"),
                background_path: dir.join("background.png"),
                depth_path: Some(dir.join("depth.png")),
                saliency_path: None,
                class_id: scenes[i].class_id,
                background_variant: BackgroundVariant::Dark,
                turntable: scenes[i].turntable,
            }
        })
        .collect();
    scenes.par_iter().zip(&records).try_for_each(|(s, r)| -> Result<()> {
        s.image.save_png(root.join(&r.image_path))?;
        s.background.save_png(root.join(&r.background_path))?;
        s.depth.save_png(root.join(r.depth_path.as_ref().expect("set above")))
    })?;
    let categories = synthetic_categories(p.classes);
    let ground_truth = ground_truth(&scenes, &records, &categories);
    let mut manifest = DatasetManifest::new(categories);
    manifest.scenes = records.into_iter().map(ManifestScene::new).collect();
    manifest.save(manifest_path)?;
    ground_truth.to_document()?.save(root.join("ground_truth.json"))?;
    Ok(SyntheticDataset {
        manifest_path: manifest_path.to_path_buf(),
        manifest,
        scenes,
        ground_truth,
    })
}
