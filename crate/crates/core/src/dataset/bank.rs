//! Object banks on disk: `banks/<name>.json` plus one directory of patch PNGs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::augment::ObjectBankEntry;
use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, DepthImage, RasterImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankEntryRecord {
    pub entry_id: u64,
    pub class_id: u32,
    pub source_scene_id: String,
    pub source_annotation_id: u64,
    pub width: usize,
    pub height: usize,
    /// Patch files relative to the dataset root.
    pub rgb: PathBuf,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankFile {
    pub name: String,
    pub entries: Vec<BankEntryRecord>,
}

pub fn bank_path(root: &Path, name: &str) -> PathBuf {
    root.join("banks").join(format!("{name}.json"))
}

/// Writes the patches and the index; returns the index path.
pub fn save_bank(root: &Path, name: &str, entries: &[ObjectBankEntry]) -> Result<PathBuf> {
    let mut records = Vec::with_capacity(entries.len());
    for e in entries {
        let stem = format!("banks/{name}/{:06}", e.entry_id);
        let rgb = PathBuf::from(format!("{stem}.rgb.png"));
        let mask = PathBuf::from(format!("{stem}.mask.png"));
        e.rgb.save_png(root.join(&rgb))?;
        e.mask.save_png(root.join(&mask))?;
        let depth = match &e.depth {
            Some(d) => {
                let p = PathBuf::from(format!("{stem}.depth.png"));
                d.save_png(root.join(&p))?;
                Some(p)
            }
            None => None,
        };
        records.push(BankEntryRecord {
            entry_id: e.entry_id,
            class_id: e.class_id,
            source_scene_id: e.source_scene_id.clone(),
            source_annotation_id: e.source_annotation_id,
            width: e.mask.width(),
            height: e.mask.height(),
            rgb,
            mask,
            depth,
        });
    }
    let file = BankFile {
        name: name.to_string(),
        entries: records,
    };
    let path = bank_path(root, name);
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    write_atomic(&path, &bytes)?;
    Ok(path)
}

pub fn load_bank(root: &Path, name: &str) -> Result<Vec<ObjectBankEntry>> {
    let path = bank_path(root, name);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let file: BankFile = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.clone(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })?;
    file.entries
        .iter()
        .map(|r| {
            let rgb = RasterImage::load_png(root.join(&r.rgb))?.to_rgb();
            let mask = BinaryMask::load_png(root.join(&r.mask))?;
            let depth = r
                .depth
                .as_ref()
                .map(|p| DepthImage::load_png(root.join(p)))
                .transpose()?;
            let dims = (r.width, r.height);
            let consistent =
                rgb.dims() == dims && mask.dims() == dims && depth.as_ref().is_none_or(|d| d.dims() == dims);
            if !consistent {
                return Err(Error::InvalidGeometry(format!(
                    "bank entry {} patches do not match {}x{}",
                    r.entry_id, r.width, r.height
                )));
            }
            if mask.is_empty() {
                return Err(Error::EmptyMask);
            }
            Ok(ObjectBankEntry {
                entry_id: r.entry_id,
                class_id: r.class_id,
                rgb,
                mask,
                depth,
                source_scene_id: r.source_scene_id.clone(),
                source_annotation_id: r.source_annotation_id,
            })
        })
        .collect()
}
