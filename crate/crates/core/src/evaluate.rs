//! Caltech-style evaluation: greedy one-to-one matching at IoU > 0.5,
//! miss rate versus false positives per image, and non-maximum suppression.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::proposals::ScoredRegion;

pub const DEFAULT_MATCH_IOU: f64 = 0.5;
pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const DEFAULT_TARGET_FPPI: f64 = 0.1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `(detection index, ground-truth index)`.
    pub pairs: Vec<(usize, usize)>,
}

/// Detection indices by descending score, lower index first on ties.
fn score_order(dets: &[ScoredRegion]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap_or(Ordering::Equal));
    order
}

/// For each detection in processing order, the ground truth it claims.
fn greedy_claims(dets: &[ScoredRegion], order: &[usize], gts: &[BoundingBox], iou_thresh: f64) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    order
        .iter()
        .map(|&d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let o = iou(&dets[d].bbox, gt);
                if o > iou_thresh && best.is_none_or(|(_, bo)| o > bo) {
                    best = Some((g, o));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            best.map(|(g, _)| g)
        })
        .collect()
}

/// Detections claim, in descending score order, the unmatched ground truth
/// they overlap most, provided the IoU is strictly above `iou_thresh`.
pub fn match_detections(dets: &[ScoredRegion], gts: &[BoundingBox], iou_thresh: f64) -> MatchResult {
    let order = score_order(dets);
    let claims = greedy_claims(dets, &order, gts, iou_thresh);
    let pairs: Vec<(usize, usize)> = order
        .iter()
        .zip(&claims)
        .filter_map(|(&d, c)| c.map(|g| (d, g)))
        .collect();
    MatchResult {
        true_positives: pairs.len(),
        false_positives: dets.len() - pairs.len(),
        false_negatives: gts.len() - pairs.len(),
        pairs,
    }
}

/// `MR = FN / P`.
pub fn miss_rate(false_negatives: usize, positives: usize) -> Result<f64> {
    if positives == 0 {
        return Err(Error::OutOfRange("miss rate needs at least one positive".into()));
    }
    Ok(false_negatives as f64 / positives as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fppi: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrFppiCurve {
    /// Sorted by ascending threshold.
    pub points: Vec<CurvePoint>,
    pub frames: usize,
    pub positives: usize,
}

/// Sweeps the score threshold over every distinct detection score plus
/// `-inf` and `+inf`; detections with `score >= threshold` are kept.
///
/// Greedy matching visits detections in descending score, so the matching
/// at any threshold is a prefix of the full matching; one pass per frame is
/// enough.
pub fn mr_fppi_curve(
    per_frame_dets: &BTreeMap<String, Vec<ScoredRegion>>,
    per_frame_gts: &BTreeMap<String, Vec<BoundingBox>>,
    iou_thresh: f64,
) -> Result<MrFppiCurve> {
    if per_frame_dets.len() != per_frame_gts.len()
        || per_frame_dets.keys().zip(per_frame_gts.keys()).any(|(a, b)| a != b)
    {
        return Err(Error::Invariant("detection and ground-truth frame sets differ".into()));
    }
    let positives: usize = per_frame_gts.values().map(Vec::len).sum();
    if positives == 0 {
        return Err(Error::OutOfRange("no ground truth in any frame".into()));
    }
    let frames = per_frame_gts.len();

    // (score, is true positive) for every detection.
    let mut outcomes: Vec<(f64, bool)> = Vec::new();
    for (frame, dets) in per_frame_dets {
        if let Some(d) = dets.iter().find(|d| !d.score.is_finite()) {
            return Err(Error::OutOfRange(format!(
                "frame `{frame}`: detection score {}",
                d.score
            )));
        }
        let order = score_order(dets);
        let claims = greedy_claims(dets, &order, &per_frame_gts[frame], iou_thresh);
        outcomes.extend(order.iter().zip(&claims).map(|(&d, c)| (dets[d].score, c.is_some())));
    }
    outcomes.sort_by(|a, b| b.0.total_cmp(&a.0));

    let point = |threshold: f64, tp: usize, fp: usize| CurvePoint {
        threshold,
        fppi: fp as f64 / frames as f64,
        miss_rate: (positives - tp) as f64 / positives as f64,
    };
    let mut points = vec![point(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < outcomes.len() {
        let s = outcomes[i].0;
        while i < outcomes.len() && outcomes[i].0 == s {
            if outcomes[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(point(s, tp, fp));
    }
    points.push(point(f64::NEG_INFINITY, tp, fp));
    points.reverse();
    Ok(MrFppiCurve {
        points,
        frames,
        positives,
    })
}

/// Miss rate at `target_fppi`, interpolated linearly in `log(fppi)`.
/// Targets outside the curve's positive FPPI range take the miss rate of
/// the nearest end (the lowest-FPPI point below, the highest above).
pub fn mr_at_fppi(curve: &MrFppiCurve, target_fppi: f64) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::OutOfRange("empty curve".into()));
    }
    if !(target_fppi > 0.0) {
        return Err(Error::OutOfRange(format!("target FPPI {target_fppi} must be positive")));
    }
    // Best miss rate per distinct FPPI, ascending.
    let mut by_fppi: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fppi, p.miss_rate)).collect();
    by_fppi.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    by_fppi.dedup_by(|later, first| later.0 == first.0);

    let lowest = by_fppi[0];
    let highest = by_fppi[by_fppi.len() - 1];
    let positive: Vec<(f64, f64)> = by_fppi.iter().copied().filter(|p| p.0 > 0.0).collect();
    match positive.first() {
        None => return Ok(lowest.1),
        Some(first) if target_fppi < first.0 => return Ok(lowest.1),
        _ => {}
    }
    if target_fppi >= highest.0 {
        return Ok(highest.1);
    }
    let lt = libm::log(target_fppi);
    for pair in positive.windows(2) {
        let (f0, m0) = pair[0];
        let (f1, m1) = pair[1];
        if target_fppi >= f0 && target_fppi <= f1 {
            if target_fppi == f0 {
                return Ok(m0);
            }
            if target_fppi == f1 {
                return Ok(m1);
            }
            let t = (lt - libm::log(f0)) / (libm::log(f1) - libm::log(f0));
            return Ok(m0 + t * (m1 - m0));
        }
    }
    Ok(highest.1)
}

/// Greedy non-maximum suppression; survivors by descending score.
pub fn nms(regions: &[ScoredRegion], overlap_thresh: f64) -> Vec<ScoredRegion> {
    let order = score_order(regions);
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept
            .iter()
            .all(|&k| iou(&regions[k].bbox, &regions[i].bbox) <= overlap_thresh)
        {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| regions[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, y: f64, w: f64, h: f64, s: f64) -> ScoredRegion {
        ScoredRegion::new("f", BoundingBox::new(x, y, w, h), s)
    }

    #[test]
    fn perfect_and_weak_matches() {
        let gts = [
            BoundingBox::new(0.0, 0.0, 10.0, 20.0),
            BoundingBox::new(50.0, 0.0, 10.0, 20.0),
        ];
        let dets: Vec<_> = gts.iter().map(|g| ScoredRegion::new("f", *g, 1.0)).collect();
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (2, 0, 0));

        // shift y by d: iou = (20 - d) / (20 + d) = 0.4 -> d = 60/7
        let d = 60.0 / 7.0;
        let weak = det(0.0, d, 10.0, 20.0, 1.0);
        assert!((iou(&weak.bbox, &gts[0]) - 0.4).abs() < 1e-12);
        let m = match_detections(&[weak], &gts[..1], 0.5);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (0, 1, 1));
    }

    #[test]
    fn duplicate_detections_one_match() {
        let gt = [BoundingBox::new(0.0, 0.0, 10.0, 20.0)];
        // iou = (20 - d) / (20 + d) = 0.7 -> d = 6 / 1.7
        let d = 6.0 / 1.7;
        let dets = [det(0.0, d, 10.0, 20.0, 0.8), det(0.0, -d, 10.0, 20.0, 0.9)];
        assert!((iou(&dets[0].bbox, &gt[0]) - 0.7).abs() < 1e-12);
        let m = match_detections(&dets, &gt, 0.5);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (1, 1, 0));
        assert_eq!(m.pairs, [(1, 0)]);
    }

    #[test]
    fn miss_rate_cases() {
        assert_eq!(miss_rate(0, 5).unwrap(), 0.0);
        assert_eq!(miss_rate(3, 10).unwrap(), 0.3);
        assert_eq!(miss_rate(4, 4).unwrap(), 1.0);
        assert!(miss_rate(0, 0).is_err());
    }

    fn curve_of(points: &[(f64, f64)]) -> MrFppiCurve {
        MrFppiCurve {
            points: points
                .iter()
                .enumerate()
                .map(|(i, &(fppi, miss_rate))| CurvePoint {
                    threshold: -(i as f64),
                    fppi,
                    miss_rate,
                })
                .collect(),
            frames: 1,
            positives: 1,
        }
    }

    #[test]
    fn interpolation_cases() {
        let c = curve_of(&[(0.01, 0.5), (0.1, 0.25), (1.0, 0.1)]);
        assert_eq!(mr_at_fppi(&c, 0.1).unwrap(), 0.25);
        let c = curve_of(&[(0.01, 0.5), (1.0, 0.1)]);
        assert!((mr_at_fppi(&c, 0.1).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(mr_at_fppi(&c, 0.001).unwrap(), 0.5);
        assert_eq!(mr_at_fppi(&c, 5.0).unwrap(), 0.1);
        assert!(mr_at_fppi(&c, 0.0).is_err());
        let zero_first = curve_of(&[(0.0, 0.7), (0.5, 0.2)]);
        assert_eq!(mr_at_fppi(&zero_first, 0.1).unwrap(), 0.7);
    }

    #[test]
    fn curve_two_frames() {
        let mut dets = BTreeMap::new();
        let mut gts = BTreeMap::new();
        let g1 = BoundingBox::new(0.0, 0.0, 10.0, 20.0);
        let g2 = BoundingBox::new(0.0, 0.0, 10.0, 20.0);
        dets.insert("1".into(), alloc::vec![ScoredRegion::new("1", g1, 0.9)]);
        dets.insert("2".into(), alloc::vec![det(40.0, 40.0, 10.0, 20.0, 0.8)]);
        gts.insert("1".into(), alloc::vec![g1]);
        gts.insert("2".into(), alloc::vec![g2]);
        let c = mr_fppi_curve(&dets, &gts, 0.5).unwrap();
        let at = |t: f64| c.points.iter().find(|p| p.threshold == t).copied().unwrap();
        assert_eq!((at(0.9).fppi, at(0.9).miss_rate), (0.0, 0.5));
        assert_eq!((at(0.8).fppi, at(0.8).miss_rate), (0.5, 0.5));
        assert_eq!((at(f64::INFINITY).fppi, at(f64::INFINITY).miss_rate), (0.0, 1.0));
        assert_eq!(c.points.len(), 4);

        gts.insert("3".into(), alloc::vec![]);
        assert!(mr_fppi_curve(&dets, &gts, 0.5).is_err());
        let empty: BTreeMap<String, Vec<BoundingBox>> = dets.keys().map(|k| (k.clone(), Vec::new())).collect();
        assert!(mr_fppi_curve(&dets, &empty, 0.5).is_err());
    }

    #[test]
    fn nms_cases() {
        let one = [det(0.0, 0.0, 10.0, 10.0, 0.3)];
        assert_eq!(nms(&one, 0.5), one);
        let twins = [det(0.0, 0.0, 10.0, 10.0, 0.8), det(0.0, 0.0, 10.0, 10.0, 0.9)];
        let kept = nms(&twins, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);

        // Chain of equal boxes shifted by a quarter width: A-B and B-C
        // overlap 0.6, A-C only 1/3 (equal boxes on a line cannot reach 0.1
        // at both 0.6 links).
        let a = det(0.0, 0.0, 10.0, 1.0, 0.9);
        let b = det(2.5, 0.0, 10.0, 1.0, 0.8);
        let c = det(5.0, 0.0, 10.0, 1.0, 0.7);
        assert!((iou(&a.bbox, &b.bbox) - 0.6).abs() < 1e-12);
        assert!((iou(&b.bbox, &c.bbox) - 0.6).abs() < 1e-12);
        assert!((iou(&a.bbox, &c.bbox) - 1.0 / 3.0).abs() < 1e-12);
        let kept = nms(&[c.clone(), a.clone(), b], 0.5);
        assert_eq!(kept, [a, c]);
    }
}
