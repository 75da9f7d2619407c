//! Annotated frame collections and the train/test sampling protocol.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox, FrameSize};

/// Sessions with index above this are not part of the recording protocol.
pub const MAX_SESSION: u32 = 10;
/// Last session assigned to training under the Caltech convention.
pub const LAST_TRAIN_SESSION: u32 = 5;
/// Metadata key that switches on the session/split consistency check.
pub const CALTECH_CONVENTION_KEY: &str = "caltech_convention";

pub const DEFAULT_TRAIN_STEP: usize = 3;
pub const DEFAULT_TEST_STEP: usize = 30;
/// "Reasonable" pedestrians are strictly taller than this many pixels.
pub const DEFAULT_MIN_HEIGHT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn default_step(self) -> usize {
        match self {
            Split::Train => DEFAULT_TRAIN_STEP,
            Split::Test => DEFAULT_TEST_STEP,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub bbox: BoundingBox,
    pub occluded: bool,
    pub person_id: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: String,
    pub image_path: String,
    pub session: u32,
    pub split: Split,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub frames: Vec<FrameRecord>,
    /// Free-form key/value pairs; the file layer stores each value as JSON text.
    pub metadata: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn caltech_convention(&self) -> bool {
        self.metadata
            .get(CALTECH_CONVENTION_KEY)
            .is_some_and(|v| v.trim() == "true")
    }

    /// Checks frame id uniqueness, session range, annotation boxes and, when
    /// the Caltech convention is enabled, the session-to-split assignment.
    pub fn validate(&self) -> Result<()> {
        let caltech = self.caltech_convention();
        let mut seen = BTreeSet::new();
        for f in &self.frames {
            if !seen.insert(f.frame_id.as_str()) {
                return Err(Error::Invariant(format!("duplicate frame_id `{}`", f.frame_id)));
            }
            if f.session > MAX_SESSION {
                return Err(Error::Invariant(format!(
                    "frame `{}`: session {} outside [0, {MAX_SESSION}]",
                    f.frame_id, f.session
                )));
            }
            if caltech {
                let expected = if f.session <= LAST_TRAIN_SESSION {
                    Split::Train
                } else {
                    Split::Test
                };
                if f.split != expected {
                    return Err(Error::Invariant(format!(
                        "frame `{}`: session {} must be in the {} split",
                        f.frame_id,
                        f.session,
                        expected.as_str()
                    )));
                }
            }
            for (k, a) in f.annotations.iter().enumerate() {
                if !a.bbox.is_valid() {
                    return Err(Error::Invariant(format!(
                        "frame `{}`: annotation {k} has an invalid box",
                        f.frame_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn frame(&self, frame_id: &str) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }
}

/// Keeps temporal indices `0, step, 2*step, ...` within every session of
/// `split`, returning frames in manifest order.
pub fn sample_frames(m: &DatasetManifest, split: Split, step: usize) -> Vec<&FrameRecord> {
    let step = step.max(1);
    let mut per_session: BTreeMap<u32, usize> = BTreeMap::new();
    m.frames
        .iter()
        .filter(|f| f.split == split)
        .filter(|f| {
            let idx = per_session.entry(f.session).or_insert(0);
            let keep = *idx % step == 0;
            *idx += 1;
            keep
        })
        .collect()
}

/// Ground-truth boxes strictly taller than `min_height`, optionally including
/// occluded pedestrians.
pub fn extract_positives(f: &FrameRecord, min_height: f64, include_occluded: bool) -> Vec<BoundingBox> {
    f.annotations
        .iter()
        .filter(|a| a.bbox.h > min_height && (include_occluded || !a.occluded))
        .map(|a| a.bbox)
        .collect()
}

/// Ground truth split into boxes that count toward evaluation and boxes that
/// are ignored (occluded or too small).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationTargets {
    pub positives: Vec<BoundingBox>,
    pub ignored: Vec<BoundingBox>,
}

pub fn evaluation_targets(f: &FrameRecord, min_height: f64) -> EvaluationTargets {
    let mut t = EvaluationTargets::default();
    for a in &f.annotations {
        if a.bbox.h > min_height && !a.occluded {
            t.positives.push(a.bbox);
        } else {
            t.ignored.push(a.bbox);
        }
    }
    t
}

/// Drops detections that overlap an ignored box by more than `iou_thresh`
/// without overlapping any counted positive, so they are neither true nor
/// false positives.
pub fn drop_ignored_detections<T, F>(dets: Vec<T>, targets: &EvaluationTargets, iou_thresh: f64, bbox_of: F) -> Vec<T>
where
    F: Fn(&T) -> BoundingBox,
{
    if targets.ignored.is_empty() {
        return dets;
    }
    dets.into_iter()
        .filter(|d| {
            let b = bbox_of(d);
            let hits_positive = targets.positives.iter().any(|g| iou(&b, g) > iou_thresh);
            let hits_ignored = targets.ignored.iter().any(|g| iou(&b, g) > iou_thresh);
            hits_positive || !hits_ignored
        })
        .collect()
}

/// Height bounds for sampled negatives; width follows from the aspect ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeRange {
    pub min_h: f64,
    pub max_h: f64,
    /// Height divided by width.
    pub aspect: f64,
}

impl Default for SizeRange {
    fn default() -> Self {
        Self {
            min_h: 50.0,
            max_h: 200.0,
            aspect: 2.0,
        }
    }
}

pub const DEFAULT_NEGATIVE_ATTEMPTS: usize = 1000;

/// Samples `count` boxes with log-uniform height and uniform position fully
/// inside the frame, each overlapping every annotation (occluded ones
/// included) by at most `max_overlap` IoU.
pub fn sample_random_negatives<R: Rng + ?Sized>(
    f: &FrameRecord,
    frame: FrameSize,
    count: usize,
    size_range: SizeRange,
    max_overlap: f64,
    rng: &mut R,
) -> Result<Vec<BoundingBox>> {
    sample_random_negatives_with_attempts(f, frame, count, size_range, max_overlap, DEFAULT_NEGATIVE_ATTEMPTS, rng)
}

pub fn sample_random_negatives_with_attempts<R: Rng + ?Sized>(
    f: &FrameRecord,
    frame: FrameSize,
    count: usize,
    size_range: SizeRange,
    max_overlap: f64,
    attempts_per_box: usize,
    rng: &mut R,
) -> Result<Vec<BoundingBox>> {
    if !(0.0..1.0).contains(&max_overlap) {
        return Err(Error::OutOfRange(format!("max_overlap {max_overlap} not in [0, 1)")));
    }
    if !(size_range.min_h > 0.0 && size_range.min_h <= size_range.max_h && size_range.aspect > 0.0) {
        return Err(Error::OutOfRange(format!("invalid size range {size_range:?}")));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let exhausted = |placed| Error::SamplingExhausted {
        placed,
        requested: count,
        attempts: attempts_per_box,
    };
    // Largest height whose box still fits in the frame.
    let fit_h = (frame.height as f64).min(frame.width as f64 * size_range.aspect);
    let max_h = size_range.max_h.min(fit_h);
    if max_h < size_range.min_h {
        return Err(exhausted(0));
    }
    let (log_lo, log_hi) = (libm::log(size_range.min_h), libm::log(max_h));

    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut placed = None;
        for _ in 0..attempts_per_box {
            let h = if log_hi > log_lo {
                libm::exp(rng.random_range(log_lo..=log_hi))
            } else {
                size_range.min_h
            };
            let w = h / size_range.aspect;
            let x = rng.random_range(0.0..=(frame.width as f64 - w).max(0.0));
            let y = rng.random_range(0.0..=(frame.height as f64 - h).max(0.0));
            let b = BoundingBox::new(x, y, w, h);
            if f.annotations.iter().all(|a| iou(&b, &a.bbox) <= max_overlap) {
                placed = Some(b);
                break;
            }
        }
        out.push(placed.ok_or_else(|| exhausted(out.len()))?);
    }
    Ok(out)
}
