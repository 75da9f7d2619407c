//! Per-stage wall-clock benchmark of the detection pipeline.

use std::time::{Duration, Instant};

use pedestrian_core::pipeline::{
    classify_stage, feature_stage, nms_stage, preprocess_stage, propose_stage, DetectionConfig, ModelBundle,
};
use pedestrian_core::{FrameImage, ScoredRegion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STAGES: [&str; 5] = ["proposal", "preprocess", "features", "classify", "nms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub stages: Vec<StageTiming>,
    /// Frames measured per repetition.
    pub frames: usize,
    /// Repetitions that entered the statistics.
    pub repetitions: usize,
    /// Mean wall-clock time of a whole frame.
    pub frame_mean_ms: f64,
    pub fps: f64,
}

impl TimingReport {
    pub fn stage(&self, name: &str) -> Option<&StageTiming> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn stage_mean_sum_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.mean_ms).sum()
    }
}

/// One frame to benchmark, with its external proposals if the bundle needs
/// them.
pub struct BenchFrame {
    pub frame_id: String,
    pub image: FrameImage,
    pub proposals: Option<Vec<ScoredRegion>>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Runs the pipeline on every frame `repetitions` times on the calling
/// thread. The first repetition is a warm-up and is excluded from the
/// statistics unless it is the only one.
pub fn run_benchmark(
    frames: &[BenchFrame],
    m: &ModelBundle,
    cfg: &DetectionConfig,
    repetitions: usize,
) -> Result<TimingReport> {
    if repetitions == 0 || frames.is_empty() {
        return Err(Error::Usage(
            "benchmark needs at least one frame and one repetition".into(),
        ));
    }
    m.validate()?;
    let mut samples: Vec<[f64; 5]> = Vec::new();
    let mut totals: Vec<f64> = Vec::new();
    for rep in 0..repetitions {
        for f in frames {
            let size = f.image.size();
            let t0 = Instant::now();
            let regions = propose_stage(&f.frame_id, size, m, f.proposals.as_deref())?;
            let t1 = Instant::now();
            let (regions, patches) = preprocess_stage(&f.image, regions, m);
            let t2 = Instant::now();
            let features = feature_stage(&patches, m)?;
            let t3 = Instant::now();
            let scored = classify_stage(regions, &features, size, m, cfg)?;
            let t4 = Instant::now();
            let kept = nms_stage(&scored, cfg);
            let t5 = Instant::now();
            std::hint::black_box(kept);
            if rep > 0 || repetitions == 1 {
                samples.push([t1 - t0, t2 - t1, t3 - t2, t4 - t3, t5 - t4].map(ms));
                totals.push(ms(t5 - t0));
            }
        }
    }
    let n = samples.len() as f64;
    let stages: Vec<StageTiming> = STAGES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let vals = samples.iter().map(|s| s[k]);
            StageTiming {
                stage: (*name).to_string(),
                mean_ms: vals.clone().sum::<f64>() / n,
                min_ms: vals.clone().fold(f64::INFINITY, f64::min),
                max_ms: vals.fold(0.0, f64::max),
            }
        })
        .collect();
    let sum: f64 = stages.iter().map(|s| s.mean_ms).sum();
    Ok(TimingReport {
        stages,
        frames: frames.len(),
        repetitions: if repetitions == 1 { 1 } else { repetitions - 1 },
        frame_mean_ms: totals.iter().sum::<f64>() / n,
        fps: if sum > 0.0 { 1000.0 / sum } else { f64::INFINITY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pedestrian_core::classify::{FusionMode, LinearSvm};
    use pedestrian_core::features::{ConvNetSpec, ConvNetWeights};
    use pedestrian_core::pipeline::ProposalSource;
    use pedestrian_core::proposals::SlidingWindowParams;

    #[test]
    fn accounting_identities() {
        let convnet = ConvNetWeights::seeded(ConvNetSpec::compact(), 1).unwrap();
        let d = convnet.spec.feature_len().unwrap();
        let m = ModelBundle {
            svm: LinearSvm {
                weights: vec![0.01; d],
                bias: 0.0,
                c: 1e-2,
                fused: false,
                feature_dim: d,
                score_mean: 0.0,
                score_std: 1.0,
            },
            input_size: convnet.spec.input_size(),
            convnet,
            mean_alpha: 0.1,
            fusion: FusionMode::Series {
                threshold: f64::NEG_INFINITY,
            },
            proposals: ProposalSource::Sliding(SlidingWindowParams {
                min_h: 40.0,
                max_h: 60.0,
                ..Default::default()
            }),
        };
        let frames: Vec<BenchFrame> = (0..2)
            .map(|i| BenchFrame {
                frame_id: format!("f{i}"),
                image: FrameImage::filled(80, 64, 3, 40.0 * i as f32).unwrap(),
                proposals: None,
            })
            .collect();
        let r = run_benchmark(&frames, &m, &DetectionConfig::default(), 3).unwrap();
        assert_eq!(r.repetitions, 2);
        assert_eq!(r.stages.len(), 5);
        for s in &r.stages {
            assert!(
                0.0 <= s.min_ms && s.min_ms <= s.mean_ms && s.mean_ms <= s.max_ms,
                "{s:?}"
            );
        }
        assert!(r.stage_mean_sum_ms() <= r.frame_mean_ms * (1.0 + 1e-9));
        assert!((r.fps - 1000.0 / r.stage_mean_sum_ms()).abs() < 1e-9 * r.fps);
        assert!(run_benchmark(&frames, &m, &DetectionConfig::default(), 0).is_err());
    }
}
