//! Per-frame detection: propose, pad, crop/resize, extract features,
//! classify, suppress.
//!
//! Each stage is a separate function so callers can time them individually;
//! [`detect_frame`] chains them.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::classify::{FusionMode, LinearSvm};
use crate::error::{Error, Result};
use crate::evaluate::{nms, DEFAULT_NMS_IOU};
use crate::features::{extract_features, ConvNetWeights};
use crate::geometry::{clip_box, expand_box, FrameSize};
use crate::image::{crop_and_resize, FrameImage, Patch};
use crate::proposals::{sliding_windows, threshold_proposals, ScoredRegion, SlidingWindowParams};

/// Where candidate regions come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProposalSource {
    Sliding(SlidingWindowParams),
    /// Scored regions supplied per frame by an external detector.
    External,
}

/// Everything needed to run detection on a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub convnet: ConvNetWeights,
    pub svm: LinearSvm,
    pub mean_alpha: f64,
    pub fusion: FusionMode,
    pub proposals: ProposalSource,
    pub input_size: FrameSize,
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        self.convnet.validate()?;
        self.svm.validate()?;
        self.fusion.validate()?;
        let feature_len = self.convnet.spec.feature_len()?;
        if self.svm.feature_dim != feature_len {
            return Err(Error::Invariant(format!(
                "SVM expects {} features, network exports {feature_len}",
                self.svm.feature_dim
            )));
        }
        if self.svm.fused != self.fusion.is_parallel() {
            return Err(Error::Invariant(format!(
                "fusion mode {:?} with an SVM that is{} fused",
                self.fusion,
                if self.svm.fused { "" } else { " not" }
            )));
        }
        if !(self.mean_alpha >= 0.0 && self.mean_alpha.is_finite()) {
            return Err(Error::Invariant(format!(
                "padding factor {} must be >= 0",
                self.mean_alpha
            )));
        }
        if self.input_size != self.convnet.spec.input_size() {
            return Err(Error::Invariant(format!(
                "input size {:?} differs from the network input {:?}",
                self.input_size,
                self.convnet.spec.input_size()
            )));
        }
        if let ProposalSource::Sliding(p) = &self.proposals {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    pub nms_iou: f64,
    /// Detections scoring below this are dropped before suppression.
    pub score_floor: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            nms_iou: DEFAULT_NMS_IOU,
            score_floor: f64::NEG_INFINITY,
        }
    }
}

/// Candidate regions for a frame, after series-mode thresholding.
pub fn propose_stage(
    frame_id: &str,
    frame: FrameSize,
    m: &ModelBundle,
    external: Option<&[ScoredRegion]>,
) -> Result<Vec<ScoredRegion>> {
    let regions: Vec<ScoredRegion> = match (&m.proposals, external) {
        (_, Some(ext)) => ext.to_vec(),
        (ProposalSource::Sliding(p), None) => sliding_windows(frame, p)
            .into_iter()
            .map(|b| ScoredRegion {
                frame_id: String::from(frame_id),
                bbox: b,
                score: 0.0,
            })
            .collect(),
        (ProposalSource::External, None) => return Err(Error::MissingProposals(frame_id.into())),
    };
    Ok(match m.fusion {
        FusionMode::Series { threshold } => threshold_proposals(&regions, threshold),
        FusionMode::Parallel => regions,
    })
}

/// Pads each region by the model's padding factor and resamples it to the
/// network input. Regions entirely outside the frame are dropped.
pub fn preprocess_stage(
    img: &FrameImage,
    regions: Vec<ScoredRegion>,
    m: &ModelBundle,
) -> (Vec<ScoredRegion>, Vec<Patch>) {
    let mut kept = Vec::with_capacity(regions.len());
    let mut patches = Vec::with_capacity(regions.len());
    for r in regions {
        let padded = expand_box(&r.bbox, m.mean_alpha);
        if let Ok(p) = crop_and_resize(img, &padded, m.input_size) {
            kept.push(r);
            patches.push(p);
        }
    }
    (kept, patches)
}

pub fn feature_stage(patches: &[Patch], m: &ModelBundle) -> Result<Vec<Vec<f64>>> {
    patches.iter().map(|p| extract_features(&m.convnet, p)).collect()
}

/// Final SVM scores; regions below the floor are dropped and boxes are
/// clipped to the frame.
pub fn classify_stage(
    regions: Vec<ScoredRegion>,
    features: &[Vec<f64>],
    frame: FrameSize,
    m: &ModelBundle,
    cfg: &DetectionConfig,
) -> Result<Vec<ScoredRegion>> {
    let mut out = Vec::with_capacity(regions.len());
    for (r, f) in regions.into_iter().zip(features) {
        let score = m.svm.score_region(f, r.score)?;
        if score < cfg.score_floor {
            continue;
        }
        let Ok(bbox) = clip_box(&r.bbox, frame) else { continue };
        out.push(ScoredRegion {
            frame_id: r.frame_id,
            bbox,
            score,
        });
    }
    Ok(out)
}

pub fn nms_stage(regions: &[ScoredRegion], cfg: &DetectionConfig) -> Vec<ScoredRegion> {
    nms(regions, cfg.nms_iou)
}

/// Runs the full pipeline on one frame; detections by descending score.
pub fn detect_frame(
    frame_id: &str,
    img: &FrameImage,
    m: &ModelBundle,
    cfg: &DetectionConfig,
    external: Option<&[ScoredRegion]>,
) -> Result<Vec<ScoredRegion>> {
    let frame = img.size();
    let regions = propose_stage(frame_id, frame, m, external)?;
    let (regions, patches) = preprocess_stage(img, regions, m);
    let features = feature_stage(&patches, m)?;
    let scored = classify_stage(regions, &features, frame, m, cfg)?;
    Ok(nms_stage(&scored, cfg))
}
