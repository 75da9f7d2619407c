//! Dataset manifest JSON.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pedestrian_core::dataset::{Annotation, DatasetManifest, FrameRecord, Split};
use pedestrian_core::BoundingBox;
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    frames: Vec<FrameEntry>,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    frame_id: String,
    image_path: String,
    session: u32,
    split: SplitName,
    #[serde(default)]
    annotations: Vec<AnnotationEntry>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SplitName {
    Train,
    Test,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationEntry {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    #[serde(default)]
    occluded: bool,
    #[serde(default)]
    person_id: i64,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Self {
        match s {
            SplitName::Train => Split::Train,
            SplitName::Test => Split::Test,
        }
    }
}

impl From<Split> for SplitName {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => SplitName::Train,
            Split::Test => SplitName::Test,
        }
    }
}

pub fn manifest_from_json(text: &str, path: &Path) -> Result<DatasetManifest> {
    let file: ManifestFile = serde_json::from_str(text).map_err(|e| Error::parse(path, e.to_string()))?;
    let frames = file
        .frames
        .into_iter()
        .map(|f| FrameRecord {
            frame_id: f.frame_id,
            image_path: f.image_path,
            session: f.session,
            split: f.split.into(),
            annotations: f
                .annotations
                .into_iter()
                .map(|a| Annotation {
                    bbox: BoundingBox::new(a.x, a.y, a.w, a.h),
                    occluded: a.occluded,
                    person_id: a.person_id,
                })
                .collect(),
        })
        .collect();
    // Metadata values are kept as JSON text so that any value type survives.
    let metadata = file.metadata.into_iter().map(|(k, v)| (k, v.to_string())).collect();
    let m = DatasetManifest { frames, metadata };
    m.validate()?;
    Ok(m)
}

pub fn manifest_to_json(m: &DatasetManifest) -> Result<String> {
    let metadata = m
        .metadata
        .iter()
        .map(|(k, v)| {
            let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.clone()));
            (k.clone(), value)
        })
        .collect();
    let file = ManifestFile {
        frames: m
            .frames
            .iter()
            .map(|f| FrameEntry {
                frame_id: f.frame_id.clone(),
                image_path: f.image_path.clone(),
                session: f.session,
                split: f.split.into(),
                annotations: f
                    .annotations
                    .iter()
                    .map(|a| AnnotationEntry {
                        x: a.bbox.x,
                        y: a.bbox.y,
                        w: a.bbox.w,
                        h: a.bbox.h,
                        occluded: a.occluded,
                        person_id: a.person_id,
                    })
                    .collect(),
            })
            .collect(),
        metadata,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("manifest serializes");
    s.push('\n');
    Ok(s)
}

/// Reads and validates a manifest.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = error::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::parse(path, "not UTF-8"))?;
    manifest_from_json(&text, path)
}

pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    m.validate()?;
    error::write(path, manifest_to_json(m)?)
}

/// Image paths in a manifest are relative to the manifest's directory
/// unless absolute.
pub fn resolve_image_path(manifest_path: &Path, image_path: &str) -> PathBuf {
    let p = Path::new(image_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new("")).join(p)
    }
}

/// Frame sampling step used when none is given: the Caltech 1-in-3 / 1-in-30
/// protocol for manifests declaring that convention, every frame otherwise.
pub fn default_step(m: &DatasetManifest, split: Split) -> usize {
    if m.caltech_convention() {
        split.default_step()
    } else {
        1
    }
}
