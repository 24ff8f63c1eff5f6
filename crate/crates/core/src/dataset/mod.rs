//! Persistence, COCO interchange, evaluation and resolution handling.

mod bank;
mod coco;
mod config;
mod eval;
mod generated;
mod manifest;
mod resample;

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub use bank::{bank_path, load_bank, save_bank, BankEntryRecord, BankFile};
pub use coco::{
    decompress_counts, export_coco, import_coco, rasterize_polygon, CocoAnnotation, CocoCategory, CocoData,
    CocoDocument, CocoImage, RleCounts, Segmentation,
};
pub use config::{hex_digest, Config, EvalParams, LabelerSection};
pub use eval::{evaluate_map, iou_threshold, match_predictions, ClassAp, EvalReport, MatchResult, IOU_THRESHOLDS};
pub use generated::{
    generate_to_disk, set_directory, write_generated_set, GeneratedSetWriter, SceneSidecar, SetOutput,
};
pub use manifest::{
    dataset_root, Category, DatasetManifest, DecisionError, GeneratedSetRecord, ManifestScene, ManifestStore, Progress,
    MANIFEST_VERSION,
};
pub use resample::Downscale;

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
