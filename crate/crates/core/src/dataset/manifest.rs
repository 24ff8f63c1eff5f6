use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::coco::{CocoCategory, CocoData, CocoImage};
use super::write_atomic;
use crate::augment::SetKind;
use crate::error::{Error, Result};
use crate::labeler::{
    image_id_for_index, selected_annotations, CandidateSet, Decision, DecisionSource, LabelRun, SceneRecord,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestScene {
    #[serde(flatten)]
    pub record: SceneRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<CandidateSet>,
    /// Failure of the last labeling run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Bumped on every change to this scene's state.
    #[serde(default)]
    pub revision: u64,
}

impl ManifestScene {
    pub fn new(record: SceneRecord) -> Self {
        Self {
            record,
            candidates: None,
            error: None,
            revision: 0,
        }
    }

    pub fn decision(&self) -> Decision {
        self.candidates.as_ref().map_or(Decision::Undecided, |c| c.decision)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSetRecord {
    pub name: String,
    pub kind: SetKind,
    pub count: usize,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub categories: Vec<Category>,
    pub scenes: Vec<ManifestScene>,
    #[serde(default)]
    pub generated_sets: Vec<GeneratedSetRecord>,
}

/// Counts by decision state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    /// Scenes without candidates yet.
    pub unlabeled: usize,
    pub undecided: usize,
    pub hsv: usize,
    pub rgb: usize,
    pub saliency: usize,
    pub reject: usize,
    pub human: usize,
    pub errors: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum DecisionError {
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
    #[error("scene {0:?} has no candidates yet")]
    NotLabeled(String),
    #[error("scene {scene_id:?} is at revision {current}, not {expected}")]
    Conflict {
        scene_id: String,
        expected: u64,
        current: u64,
    },
    #[error(transparent)]
    Other(#[from] Error),
}

impl DatasetManifest {
    pub fn new(categories: Vec<Category>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            categories,
            scenes: Vec::new(),
            generated_sets: Vec::new(),
        }
    }

    pub fn from_json(bytes: &[u8], origin: &Path) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: format!("line {} column {}: {e}", e.line(), e.column()),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes, path)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self)?;
        out.push(b'\n');
        Ok(out)
    }

    /// Validates, then replaces the file atomically.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        write_atomic(path.as_ref(), &self.to_json()?)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.version != MANIFEST_VERSION {
            problems.push(format!("unsupported manifest version {}", self.version));
        }
        let mut classes = HashSet::new();
        for c in &self.categories {
            if !classes.insert(c.id) {
                problems.push(format!("duplicate class id {}", c.id));
            }
        }
        let mut ids = HashSet::new();
        for s in &self.scenes {
            let id = &s.record.scene_id;
            if !ids.insert(id.as_str()) {
                problems.push(format!("duplicate scene id {id:?}"));
            }
            if !classes.contains(&s.record.class_id) {
                problems.push(format!("scene {id:?} has unknown class {}", s.record.class_id));
            }
            if let Some(c) = &s.candidates {
                if &c.scene_id != id {
                    problems.push(format!("scene {id:?} holds candidates of {:?}", c.scene_id));
                }
                if (c.decision == Decision::Undecided) != c.decision_source.is_none() {
                    problems.push(format!("scene {id:?} decision and decision source disagree"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Integrity(problems))
        }
    }

    pub fn scene(&self, id: &str) -> Option<&ManifestScene> {
        self.scenes.iter().find(|s| s.record.scene_id == id)
    }

    pub fn records(&self) -> Vec<SceneRecord> {
        self.scenes.iter().map(|s| s.record.clone()).collect()
    }

    /// Current candidate sets by scene id.
    pub fn candidates(&self) -> HashMap<String, CandidateSet> {
        self.scenes
            .iter()
            .filter_map(|s| s.candidates.clone().map(|c| (s.record.scene_id.clone(), c)))
            .collect()
    }

    /// Stores the outcome of a labeling run. Scenes not in the run are untouched.
    pub fn apply_label_run(&mut self, run: &LabelRun) {
        let by_id: HashMap<&str, &_> = run.scenes.iter().map(|o| (o.scene_id.as_str(), &o.result)).collect();
        for s in &mut self.scenes {
            let Some(result) = by_id.get(s.record.scene_id.as_str()) else {
                continue;
            };
            match result {
                Ok(c) => {
                    s.candidates = Some(c.clone());
                    s.error = None;
                }
                Err(e) => {
                    s.error = Some(e.clone());
                }
            }
            s.revision += 1;
        }
    }

    /// Records `decision` for a labeled scene. With `expected_revision`, a
    /// scene that changed since that revision is a conflict.
    pub fn set_decision(
        &mut self,
        scene_id: &str,
        decision: Decision,
        source: DecisionSource,
        expected_revision: Option<u64>,
    ) -> std::result::Result<&ManifestScene, DecisionError> {
        let s = self
            .scenes
            .iter_mut()
            .find(|s| s.record.scene_id == scene_id)
            .ok_or_else(|| DecisionError::UnknownScene(scene_id.to_string()))?;
        if let Some(expected) = expected_revision {
            if expected != s.revision {
                return Err(DecisionError::Conflict {
                    scene_id: scene_id.to_string(),
                    expected,
                    current: s.revision,
                });
            }
        }
        let c = s
            .candidates
            .as_mut()
            .ok_or_else(|| DecisionError::NotLabeled(scene_id.to_string()))?;
        c.decision = decision;
        c.decision_source = (decision != Decision::Undecided).then_some(source);
        s.revision += 1;
        Ok(s)
    }

    pub fn progress(&self) -> Progress {
        let mut p = Progress {
            total: self.scenes.len(),
            ..Default::default()
        };
        for s in &self.scenes {
            if s.error.is_some() {
                p.errors += 1;
            }
            let Some(c) = &s.candidates else {
                p.unlabeled += 1;
                continue;
            };
            match c.decision {
                Decision::Undecided => p.undecided += 1,
                Decision::Hsv => p.hsv += 1,
                Decision::Rgb => p.rgb += 1,
                Decision::Saliency => p.saliency += 1,
                Decision::Reject => p.reject += 1,
            }
            if c.is_human_decided() {
                p.human += 1;
            }
        }
        p
    }

    pub fn coco_categories(&self) -> Vec<CocoCategory> {
        self.categories
            .iter()
            .map(|c| CocoCategory {
                id: c.id,
                name: c.name.clone(),
            })
            .collect()
    }

    /// Selected annotations of every scene whose decision picks a candidate.
    /// Image ids follow manifest order; annotation ids run from 1.
    pub fn selected(&self) -> CocoData {
        let mut data = CocoData {
            categories: self.coco_categories(),
            ..Default::default()
        };
        let mut next_id = 1;
        for (i, s) in self.scenes.iter().enumerate() {
            let Some(c) = s.candidates.as_ref().filter(|c| c.decision.kind().is_some()) else {
                continue;
            };
            let image_id = image_id_for_index(i);
            data.images.push(CocoImage {
                id: image_id,
                file_name: s.record.image_path.to_string_lossy().replace('\\', "/"),
                width: c.image_width,
                height: c.image_height,
            });
            data.annotations
                .extend(selected_annotations(c, s.record.class_id, image_id, &mut next_id));
        }
        data
    }

    pub fn class_names(&self) -> BTreeMap<u32, String> {
        self.categories.iter().map(|c| (c.id, c.name.clone())).collect()
    }
}

/// Serializes manifest changes: each update re-reads the file, applies the
/// change and replaces the file before the lock is released.
#[derive(Debug)]
pub struct ManifestStore {
    path: PathBuf,
    lock: Mutex<()>,
}

impl ManifestStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        DatasetManifest::load(&path)?;
        Ok(Self {
            path,
            lock: Mutex::new(()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Directory that scene paths are relative to.
    pub fn root(&self) -> PathBuf {
        dataset_root(&self.path)
    }

    pub fn read(&self) -> Result<DatasetManifest> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        DatasetManifest::load(&self.path)
    }

    pub fn update<T, E: From<Error>>(
        &self,
        f: impl FnOnce(&mut DatasetManifest) -> std::result::Result<T, E>,
    ) -> std::result::Result<T, E> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut m = DatasetManifest::load(&self.path)?;
        let out = f(&mut m)?;
        m.save(&self.path)?;
        Ok(out)
    }
}

/// Directory containing the manifest file.
pub fn dataset_root(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{BinaryMask, CircularRegion};
    use crate::labeler::BackgroundVariant;

    fn record(id: &str, class_id: u32) -> SceneRecord {
        SceneRecord {
            scene_id: id.into(),
            image_path: format!("scenes/{id}/image.png").into(),
            background_path: format!("scenes/{id}/background.png").into(),
            depth_path: None,
            saliency_path: None,
            class_id,
            background_variant: BackgroundVariant::Light,
            turntable: CircularRegion::new(4.0, 4.0, 4.0).unwrap(),
        }
    }

    fn candidates(id: &str) -> CandidateSet {
        CandidateSet {
            scene_id: id.into(),
            image_width: 8,
            image_height: 8,
            turntable_area: 50,
            hsv_instances: vec![BinaryMask::from_fn(8, 8, |x, y| x < 2 && y < 2).unwrap()],
            rgb_instances: vec![],
            saliency_instances: vec![],
            saliency_threshold: Some(40),
            saliency_degenerate: false,
            decision: Decision::Undecided,
            decision_source: None,
        }
    }

    fn manifest() -> DatasetManifest {
        let mut m = DatasetManifest::new(vec![Category {
            id: 1,
            name: "cup".into(),
        }]);
        m.scenes.push(ManifestScene::new(record("a", 1)));
        m.scenes.push(ManifestScene::new(record("b", 1)));
        m.scenes[0].candidates = Some(candidates("a"));
        m
    }

    #[test]
    fn json_round_trip() {
        let m = manifest();
        let back = DatasetManifest::from_json(&m.to_json().unwrap(), Path::new("m.json")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn validation() {
        let mut m = manifest();
        m.scenes.push(ManifestScene::new(record("a", 7)));
        match m.validate() {
            Err(Error::Integrity(p)) => assert_eq!(p.len(), 2, "{p:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decisions_and_progress() {
        let mut m = manifest();
        assert!(matches!(
            m.set_decision("zzz", Decision::Hsv, DecisionSource::Human, None),
            Err(DecisionError::UnknownScene(_))
        ));
        assert!(matches!(
            m.set_decision("b", Decision::Hsv, DecisionSource::Human, None),
            Err(DecisionError::NotLabeled(_))
        ));
        let rev = m.scene("a").unwrap().revision;
        m.set_decision("a", Decision::Hsv, DecisionSource::Human, Some(rev))
            .unwrap();
        assert!(matches!(
            m.set_decision("a", Decision::Rgb, DecisionSource::Human, Some(rev)),
            Err(DecisionError::Conflict { .. })
        ));
        let p = m.progress();
        assert_eq!((p.total, p.unlabeled, p.hsv, p.human), (2, 1, 1, 1));
        let sel = m.selected();
        assert_eq!(sel.images.len(), 1);
        assert_eq!(sel.annotations.len(), 1);
        assert_eq!(sel.annotations[0].area(), 4);
        sel.check_integrity().unwrap();
    }

    #[test]
    fn store_serializes_updates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        manifest().save(&path).unwrap();
        let store = ManifestStore::open(&path).unwrap();
        std::thread::scope(|s| {
            for i in 0..8 {
                let store = &store;
                s.spawn(move || {
                    let d = if i % 2 == 0 { Decision::Hsv } else { Decision::Reject };
                    store
                        .update(|m| m.set_decision("a", d, DecisionSource::Human, None).map(|_| ()))
                        .unwrap();
                });
            }
        });
        let m = store.read().unwrap();
        assert_eq!(m.scene("a").unwrap().revision, 8);
    }
}
