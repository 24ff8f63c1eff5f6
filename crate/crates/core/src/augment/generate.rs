use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compose::{compose_neighboring, pick_background, plain_impl, prepare_background};
use super::{ComposedScene, ObjectBankEntry, PlacementParams};
use crate::error::{Error, Result};
use crate::relight::{relight_scene, sample_lighting, CameraIntrinsics, LightingRanges, LightingSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetKind {
    Plain,
    Neighboring,
    RandomBackground,
    Relight,
}

impl SetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SetKind::Plain => "plain",
            SetKind::Neighboring => "neighboring",
            SetKind::RandomBackground => "random-background",
            SetKind::Relight => "relight",
        }
    }
}

impl fmt::Display for SetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(SetKind::Plain),
            "neighboring" => Ok(SetKind::Neighboring),
            "random-background" | "random_background" => Ok(SetKind::RandomBackground),
            "relight" => Ok(SetKind::Relight),
            other => Err(Error::InvalidParameter(format!("unknown set kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    #[serde(default)]
    pub placement: PlacementParams,
    #[serde(default)]
    pub lighting: LightingRanges,
    /// Intrinsics used for relighting; derived from the scene size when absent.
    #[serde(default)]
    pub camera: Option<CameraIntrinsics>,
}

#[derive(Debug)]
pub struct GeneratedScene {
    pub index: usize,
    pub seed: u64,
    pub lighting: Option<LightingSpec>,
    pub result: std::result::Result<ComposedScene, String>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of scene `index` in a set generated with `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed.wrapping_add(splitmix64(index as u64 + 1)))
}

fn generate_one(
    bank: &[ObjectBankEntry],
    backgrounds: &[crate::imaging::RasterImage],
    cfg: &GenerateConfig,
    kind: SetKind,
    seed: u64,
) -> Result<(ComposedScene, Option<LightingSpec>)> {
    if backgrounds.is_empty() {
        return Err(Error::EmptyPool);
    }
    let p = &cfg.placement;
    let idx = pick_background(backgrounds.len(), seed);
    let bg = prepare_background(&backgrounds[idx], p)?;
    match kind {
        SetKind::Plain | SetKind::RandomBackground => Ok((plain_impl(bank, &bg, None, false, p, seed, idx)?, None)),
        SetKind::Neighboring => {
            let mut s = compose_neighboring(bank, &bg, p, seed)?;
            s.background_id = idx;
            Ok((s, None))
        }
        SetKind::Relight => {
            let s = plain_impl(bank, &bg, None, true, p, seed, idx)?;
            let spec = sample_lighting(seed, &cfg.lighting)?;
            let k = cfg
                .camera
                .unwrap_or_else(|| CameraIntrinsics::default_for(bg.width(), bg.height()));
            Ok((relight_scene(&s, &k, &spec)?, Some(spec)))
        }
    }
}

/// `count` independently seeded scenes, in index order. Each scene draws its
/// background from `backgrounds`; failures are kept per scene.
pub fn generate_set(
    bank: &[ObjectBankEntry],
    backgrounds: &[crate::imaging::RasterImage],
    cfg: &GenerateConfig,
    kind: SetKind,
    count: usize,
    seed: u64,
) -> Vec<GeneratedScene> {
    generate_range(bank, backgrounds, cfg, kind, 0..count, seed)
}

/// Scenes `indices` of the set [`generate_set`] would produce.
pub fn generate_range(
    bank: &[ObjectBankEntry],
    backgrounds: &[crate::imaging::RasterImage],
    cfg: &GenerateConfig,
    kind: SetKind,
    indices: std::ops::Range<usize>,
    seed: u64,
) -> Vec<GeneratedScene> {
    indices
        .into_par_iter()
        .map(|index| {
            let s = scene_seed(seed, index);
            let (result, lighting) = match generate_one(bank, backgrounds, cfg, kind, s) {
                Ok((scene, l)) => (Ok(scene), l),
                Err(e) => {
                    log::warn!("scene {index} failed: {e}");
                    (Err(e.to_string()), None)
                }
            };
            GeneratedScene {
                index,
                seed: s,
                lighting,
                result,
            }
        })
        .collect()
}
