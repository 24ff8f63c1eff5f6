//! `generated/<set>/{images/*.png, annotations.json, sidecars/*.json}`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coco::{CocoAnnotation, CocoCategory, CocoDocument, CocoImage};
use super::config::hex_digest;
use super::write_atomic;
use crate::augment::{generate_range, GenerateConfig, GeneratedScene, ObjectBankEntry, Placement, SetKind};
use crate::error::Result;
use crate::imaging::RasterImage;
use crate::relight::LightingSpec;

/// Reproducibility record written per scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSidecar {
    pub index: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_id: Option<usize>,
    #[serde(default)]
    pub placements: Vec<Placement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lighting: Option<LightingSpec>,
    #[serde(default)]
    pub failures: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SetOutput {
    pub directory: PathBuf,
    pub images: usize,
    pub annotations: usize,
    pub failed_scenes: usize,
    /// SHA-256 of every written file, keyed by its path inside the set directory.
    pub digests: BTreeMap<String, String>,
}

pub fn set_directory(root: &Path, name: &str) -> PathBuf {
    root.join("generated").join(name)
}

/// Writes a generated set in pieces. Scene `i` becomes image id `i + 1`;
/// failed scenes get a sidecar but no image. Only the compact COCO records
/// are kept between calls to [`GeneratedSetWriter::add`].
pub struct GeneratedSetWriter {
    dir: PathBuf,
    doc: CocoDocument,
    out: SetOutput,
}

impl GeneratedSetWriter {
    pub fn new(root: &Path, name: &str, categories: &[CocoCategory]) -> Self {
        let dir = set_directory(root, name);
        Self {
            doc: CocoDocument {
                categories: categories.to_vec(),
                ..Default::default()
            },
            out: SetOutput {
                directory: dir.clone(),
                ..Default::default()
            },
            dir,
        }
    }

    /// Writes the images and sidecars of `scenes`, which must come in index order.
    pub fn add(&mut self, scenes: &[GeneratedScene]) -> Result<()> {
        let encoded: Vec<Result<Option<Vec<u8>>>> = scenes
            .par_iter()
            .map(|g| g.result.as_ref().ok().map(|s| s.image.encode_png()).transpose())
            .collect();
        let mut files: Vec<(String, Vec<u8>)> = Vec::new();
        for (g, png) in scenes.iter().zip(encoded) {
            let png = png?;
            let image_id = g.index as u64 + 1;
            let mut sidecar = SceneSidecar {
                index: g.index,
                seed: g.seed,
                image_id: None,
                background_id: None,
                placements: Vec::new(),
                lighting: g.lighting,
                failures: Vec::new(),
                error: None,
            };
            match (&g.result, png) {
                (Ok(scene), Some(png)) => {
                    let file = format!("images/{:06}.png", g.index);
                    self.doc.images.push(CocoImage {
                        id: image_id,
                        file_name: file.clone(),
                        width: scene.image.width(),
                        height: scene.image.height(),
                    });
                    let first = self.doc.annotations.len() as u64 + 1;
                    let anns: Vec<CocoAnnotation> = scene
                        .annotations
                        .par_iter()
                        .enumerate()
                        .map(|(k, a)| CocoAnnotation::from(&a.clone().with_ids(first + k as u64, image_id)))
                        .collect();
                    self.doc.annotations.extend(anns);
                    files.push((file, png));
                    sidecar.image_id = Some(image_id);
                    sidecar.background_id = Some(scene.background_id);
                    sidecar.placements = scene.placements.clone();
                    sidecar.failures = scene.failures.clone();
                    self.out.images += 1;
                }
                (Err(e), _) => {
                    sidecar.error = Some(e.clone());
                    self.out.failed_scenes += 1;
                }
                (Ok(_), None) => unreachable!("successful scenes are encoded"),
            }
            let mut bytes = serde_json::to_vec_pretty(&sidecar)?;
            bytes.push(b'\n');
            files.push((format!("sidecars/{:06}.json", g.index), bytes));
        }
        self.write(files)
    }

    fn write(&mut self, files: Vec<(String, Vec<u8>)>) -> Result<()> {
        let digests: Vec<Result<(String, String)>> = files
            .into_par_iter()
            .map(|(rel, bytes)| {
                write_atomic(&self.dir.join(&rel), &bytes)?;
                Ok((rel, hex_digest(&bytes)))
            })
            .collect();
        for d in digests {
            let (rel, digest) = d?;
            self.out.digests.insert(rel, digest);
        }
        Ok(())
    }

    /// Writes `annotations.json`.
    pub fn finish(mut self) -> Result<SetOutput> {
        self.doc.check_references()?;
        self.out.annotations = self.doc.annotations.len();
        let json = self.doc.to_json()?;
        self.write(vec![("annotations.json".into(), json)])?;
        Ok(self.out)
    }
}

/// Writes a generated set held in memory at once.
pub fn write_generated_set(
    root: &Path,
    name: &str,
    scenes: &[GeneratedScene],
    categories: &[CocoCategory],
) -> Result<SetOutput> {
    let mut w = GeneratedSetWriter::new(root, name, categories);
    w.add(scenes)?;
    w.finish()
}

/// Generates and writes `count` scenes, `chunk` at a time.
#[allow(clippy::too_many_arguments)]
pub fn generate_to_disk(
    root: &Path,
    name: &str,
    categories: &[CocoCategory],
    bank: &[ObjectBankEntry],
    backgrounds: &[RasterImage],
    cfg: &GenerateConfig,
    kind: SetKind,
    count: usize,
    seed: u64,
    chunk: usize,
) -> Result<SetOutput> {
    let mut w = GeneratedSetWriter::new(root, name, categories);
    let chunk = chunk.max(1);
    for start in (0..count).step_by(chunk) {
        let scenes = generate_range(bank, backgrounds, cfg, kind, start..(start + chunk).min(count), seed);
        w.add(&scenes)?;
    }
    w.finish()
}
