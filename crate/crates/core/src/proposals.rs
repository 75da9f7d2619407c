//! Candidate regions: multi-scale sliding windows, externally scored
//! proposals, score thresholding and recall against ground truth.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox, FrameSize};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRegion {
    pub frame_id: String,
    pub bbox: BoundingBox,
    pub score: f64,
}

impl ScoredRegion {
    pub fn new(frame_id: impl Into<String>, bbox: BoundingBox, score: f64) -> Self {
        Self {
            frame_id: frame_id.into(),
            bbox,
            score,
        }
    }
}

/// Sliding-window grid. Defaults: 2:1 windows from 50x25 to 200x100, scale
/// step 1.1, 10 pixel stride.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlidingWindowParams {
    /// Height divided by width.
    pub aspect_ratio: f64,
    pub min_h: f64,
    pub max_h: f64,
    pub scale_step: f64,
    pub stride: f64,
    /// Multiply the stride by the scale factor at every scale instead of
    /// keeping it constant in image pixels.
    pub scale_stride: bool,
}

impl Default for SlidingWindowParams {
    fn default() -> Self {
        Self {
            aspect_ratio: 2.0,
            min_h: 50.0,
            max_h: 200.0,
            scale_step: 1.1,
            stride: 10.0,
            scale_stride: false,
        }
    }
}

impl SlidingWindowParams {
    /// Variant with the 100 pixel maximum height quoted in the text rather
    /// than the parameter table.
    pub fn short_range() -> Self {
        Self {
            max_h: 100.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.scale_step > 1.0
            && self.stride >= 1.0
            && self.min_h > 0.0
            && self.min_h <= self.max_h
            && self.aspect_ratio > 0.0
            && self.scale_step.is_finite()
            && self.max_h.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfRange(format!("invalid sliding window parameters {self:?}")))
        }
    }

    /// Window heights for every scale, smallest first.
    pub fn scales(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let limit = self.max_h * (1.0 + 1e-12);
        let mut k = 0i32;
        loop {
            let h = self.min_h * libm::pow(self.scale_step, k as f64);
            if h > limit {
                break;
            }
            out.push(h);
            k += 1;
        }
        out
    }

    pub fn stride_at(&self, scale_index: usize) -> f64 {
        if self.scale_stride {
            self.stride * libm::pow(self.scale_step, scale_index as f64)
        } else {
            self.stride
        }
    }

    /// Number of window positions along each axis at one scale.
    pub fn positions_at(&self, frame: FrameSize, scale_index: usize, h: f64) -> (usize, usize) {
        let w = h / self.aspect_ratio;
        let stride = self.stride_at(scale_index);
        let along = |extent: usize, size: f64| {
            let slack = extent as f64 - size;
            if slack < 0.0 {
                0
            } else {
                libm::floor(slack / stride + 1e-9) as usize + 1
            }
        };
        (along(frame.width, w), along(frame.height, h))
    }
}

/// Every window of every scale lying fully inside the frame, scale-major
/// then row-major.
pub fn sliding_windows(frame: FrameSize, p: &SlidingWindowParams) -> Vec<BoundingBox> {
    let mut out = Vec::new();
    for (k, h) in p.scales().into_iter().enumerate() {
        let w = h / p.aspect_ratio;
        let stride = p.stride_at(k);
        let (nx, ny) = p.positions_at(frame, k, h);
        out.reserve(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                out.push(BoundingBox::new(i as f64 * stride, j as f64 * stride, w, h));
            }
        }
    }
    out
}

/// Groups regions by frame id, preserving input order within each frame.
pub fn group_by_frame(regions: Vec<ScoredRegion>) -> BTreeMap<String, Vec<ScoredRegion>> {
    let mut map: BTreeMap<String, Vec<ScoredRegion>> = BTreeMap::new();
    for r in regions {
        map.entry(r.frame_id.clone()).or_default().push(r);
    }
    map
}

/// Regions scoring strictly above `t`, in input order.
pub fn threshold_proposals(rs: &[ScoredRegion], t: f64) -> Vec<ScoredRegion> {
    rs.iter().filter(|r| r.score > t).cloned().collect()
}

pub const DEFAULT_RECALL_IOU: f64 = 0.5;

/// Fraction of ground-truth boxes covered by some proposal with IoU strictly
/// above `iou_thresh`. Empty ground truth counts as fully recalled.
pub fn proposal_recall(proposals: &[ScoredRegion], gts: &[BoundingBox], iou_thresh: f64) -> f64 {
    if gts.is_empty() {
        return 1.0;
    }
    let covered = gts
        .iter()
        .filter(|g| proposals.iter().any(|p| iou(&p.bbox, g) > iou_thresh))
        .count();
    covered as f64 / gts.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn default_scales() {
        let p = SlidingWindowParams::default();
        p.validate().unwrap();
        let scales = p.scales();
        assert_eq!(scales.len(), 15);
        assert!(scales[14] <= 200.0 && scales[14] * 1.1 > 200.0);
        assert_eq!(SlidingWindowParams::short_range().scales().len(), 8);
    }

    #[test]
    fn smallest_scale_count() {
        let p = SlidingWindowParams::default();
        assert_eq!(p.positions_at(FrameSize::new(640, 480), 0, 50.0), (62, 44));
        let wins = sliding_windows(FrameSize::new(640, 480), &p);
        assert_eq!(wins.iter().filter(|b| b.h == 50.0).count(), 2728);
        // scale-major then row-major
        assert_eq!(wins[0], BoundingBox::new(0.0, 0.0, 25.0, 50.0));
        assert_eq!(wins[1], BoundingBox::new(10.0, 0.0, 25.0, 50.0));
        assert_eq!(wins[62], BoundingBox::new(0.0, 10.0, 25.0, 50.0));
    }

    #[test]
    fn tiny_frame_has_no_windows() {
        assert!(sliding_windows(FrameSize::new(40, 40), &SlidingWindowParams::default()).is_empty());
    }

    #[test]
    fn invalid_params() {
        let mut p = SlidingWindowParams::default();
        p.scale_step = 1.0;
        assert!(p.validate().is_err());
        let mut p = SlidingWindowParams::default();
        p.min_h = 300.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn multiplicative_stride_grows() {
        let p = SlidingWindowParams {
            scale_stride: true,
            ..Default::default()
        };
        let wins = sliding_windows(FrameSize::new(640, 480), &p);
        assert!(wins.len() < sliding_windows(FrameSize::new(640, 480), &SlidingWindowParams::default()).len());
        assert!((p.stride_at(2) - 12.1).abs() < 1e-9);
    }

    #[test]
    fn thresholding() {
        let rs: Vec<_> = [0.1, 0.5, 0.9]
            .iter()
            .map(|&s| ScoredRegion::new("f", BoundingBox::new(0.0, 0.0, 1.0, 1.0), s))
            .collect();
        assert_eq!(threshold_proposals(&rs, f64::NEG_INFINITY).len(), 3);
        assert!(threshold_proposals(&rs, 0.9).is_empty());
        let one = threshold_proposals(&rs, 0.5);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].score, 0.9);
    }

    #[test]
    fn grouping_preserves_order() {
        let rs = vec![
            ScoredRegion::new("b", BoundingBox::new(0.0, 0.0, 1.0, 1.0), 3.0),
            ScoredRegion::new("a", BoundingBox::new(0.0, 0.0, 1.0, 1.0), 1.0),
            ScoredRegion::new("b", BoundingBox::new(0.0, 0.0, 1.0, 1.0), 2.0),
        ];
        let g = group_by_frame(rs);
        assert_eq!(g.len(), 2);
        assert_eq!(g["b"].iter().map(|r| r.score).collect::<Vec<_>>(), [3.0, 2.0]);
    }

    #[test]
    fn recall_cases() {
        let gts = vec![
            BoundingBox::new(0.0, 0.0, 10.0, 20.0),
            BoundingBox::new(100.0, 0.0, 10.0, 20.0),
        ];
        let self_cover: Vec<_> = gts.iter().map(|g| ScoredRegion::new("f", *g, 0.0)).collect();
        assert_eq!(proposal_recall(&self_cover, &gts, 0.5), 1.0);
        assert_eq!(proposal_recall(&[], &gts, 0.5), 0.0);
        assert_eq!(proposal_recall(&[], &[], 0.5), 1.0);
        // Shift so that the overlap is 0.6: inter = 10*(20-d), union = 200 + 10*d
        // 0.6 = (200 - 10d) / (200 + 10d) -> d = 5
        let shifted = BoundingBox::new(0.0, 5.0, 10.0, 20.0);
        assert!((iou(&shifted, &gts[0]) - 0.6).abs() < 1e-12);
        let r = proposal_recall(&[ScoredRegion::new("f", shifted, 1.0)], &gts, 0.5);
        assert_eq!(r, 0.5);
    }
}
