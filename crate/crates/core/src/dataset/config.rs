use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::PlacementParams;
use crate::error::{Error, Result};
use crate::labeler::{LabelerParams, SpectralResidualParams};
use crate::relight::{CameraIntrinsics, LightingRanges};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelerSection {
    #[serde(flatten)]
    pub params: LabelerParams,
    #[serde(default)]
    pub saliency: SpectralResidualParams,
}

fn default_score() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    /// Score given to predictions that carry none.
    #[serde(default = "default_score")]
    pub default_score: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            default_score: default_score(),
        }
    }
}

/// Pipeline configuration file. Every key is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub labeler: LabelerSection,
    #[serde(default)]
    pub augment: PlacementParams,
    #[serde(default)]
    pub lighting: LightingRanges,
    #[serde(default)]
    pub camera: Option<CameraIntrinsics>,
    #[serde(default)]
    pub eval: EvalParams,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Config = serde_json::from_slice(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {} column {}: {e}", e.line(), e.column()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.labeler.params.validate()?;
        self.augment.validate()?;
        self.lighting.validate()?;
        if let Some(k) = &self.camera {
            CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy)?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, defaults filled in.
    pub fn digest(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg: Config =
            serde_json::from_str(r#"{"labeler": {"saliency_t0": 50}, "augment": {"count_max": 5}}"#).unwrap();
        assert_eq!(cfg.labeler.params.saliency_t0, 50);
        assert_eq!(cfg.labeler.params.saliency_step, 10);
        assert_eq!(cfg.augment.count_max, 5);
        assert_eq!(cfg.augment.count_min, 3);
        assert_eq!(cfg.eval.default_score, 1.0);
        assert_ne!(cfg.digest(), Config::default().digest());
        assert_eq!(Config::default().digest(), Config::default().digest());
        assert!(serde_json::from_str::<Config>(r#"{"labeller": {}}"#).is_err());
    }

    #[test]
    fn sha256_known_value() {
        assert_eq!(
            hex_digest(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
