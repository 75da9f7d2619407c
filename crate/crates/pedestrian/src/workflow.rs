//! The command-line workflows as library functions: proposal generation,
//! training-data preparation, training, detection, evaluation and
//! benchmarking.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use pedestrian_core::classify::{train_fused_svm, train_svm, FusionMode, LinearSvm, SvmTrainConfig, DEFAULT_C};
use pedestrian_core::dataset::{
    drop_ignored_detections, evaluation_targets, extract_positives, sample_frames, sample_random_negatives,
    DatasetManifest, FrameRecord, SizeRange, Split, DEFAULT_MIN_HEIGHT,
};
use pedestrian_core::evaluate::{mr_at_fppi, mr_fppi_curve, MrFppiCurve};
use pedestrian_core::features::{
    crossval_stop_iteration, extract_features, finetune_full, session_folds, ConvNetSpec, ConvNetWeights,
    CrossValidation, LabeledPatch, TrainConfig,
};
use pedestrian_core::geometry::expand_box;
use pedestrian_core::image::crop_and_resize;
use pedestrian_core::mining::{
    estimate_padding, random_crops, select_diverse_negatives, DistanceMode, GreedyReference, PaddingStat,
};
use pedestrian_core::pipeline::{detect_frame, DetectionConfig, ModelBundle, ProposalSource};
use pedestrian_core::proposals::{sliding_windows, SlidingWindowParams};
use pedestrian_core::{iou, seeded_rng, BoundingBox, Error as CoreError, FrameImage, FrameSize, ScoredRegion};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};
use crate::imageio::load_image;
use crate::manifest::{default_step, load_manifest, resolve_image_path};
use crate::timing::{run_benchmark, BenchFrame, TimingReport};

/// Network architecture preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Arch {
    #[default]
    Desk,
    Compact,
}

impl Arch {
    pub fn spec(self) -> ConvNetSpec {
        match self {
            Arch::Desk => ConvNetSpec::desk(),
            Arch::Compact => ConvNetSpec::compact(),
        }
    }
}

/// A manifest together with its location, so image paths can be resolved.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub path: std::path::PathBuf,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self {
            manifest: load_manifest(path)?,
            path: path.to_path_buf(),
        })
    }

    pub fn image(&self, f: &FrameRecord) -> Result<FrameImage> {
        load_image(&resolve_image_path(&self.path, &f.image_path))
    }

    pub fn frames(&self, split: Split, step: Option<usize>) -> Vec<&FrameRecord> {
        let step = step.unwrap_or_else(|| default_step(&self.manifest, split));
        sample_frames(&self.manifest, split, step)
    }
}

/// Proposals for every frame of the manifest, in manifest order. External
/// proposals are restricted to the manifest's frames.
pub fn propose(
    ds: &Dataset,
    source: ProposalSource,
    external: Option<&BTreeMap<String, Vec<ScoredRegion>>>,
) -> Result<Vec<ScoredRegion>> {
    let mut out = Vec::new();
    for f in &ds.manifest.frames {
        match source {
            ProposalSource::Sliding(p) => {
                p.validate()?;
                let size = ds.image(f)?.size();
                out.extend(
                    sliding_windows(size, &p)
                        .into_iter()
                        .map(|b| ScoredRegion::new(f.frame_id.clone(), b, 0.0)),
                );
            }
            ProposalSource::External => {
                let ext = external.ok_or_else(|| Error::Usage("external mode needs a proposals file".into()))?;
                let rs = ext
                    .get(&f.frame_id)
                    .ok_or_else(|| CoreError::MissingProposals(f.frame_id.clone()))?;
                out.extend(rs.iter().cloned());
            }
        }
    }
    Ok(out)
}

/// A labeled proposal used to train the final classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmRegion {
    pub frame_id: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
    pub pedestrian: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRegion {
    pub frame_id: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl TrainingRegion {
    fn new(frame_id: &str, b: &BoundingBox) -> Self {
        Self {
            frame_id: frame_id.to_string(),
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }
}

impl SvmRegion {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }
}

/// Output of `prep`: the padding factor, the network's training regions
/// (unpadded; the network sees them padded by `mean_alpha`) and the
/// classifier's labeled proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepStats {
    pub mean_alpha: f64,
    pub padding_samples: Vec<f64>,
    pub positives: Vec<TrainingRegion>,
    pub negatives: Vec<TrainingRegion>,
    pub svm_regions: Vec<SvmRegion>,
    pub delta: u32,
    pub seed: u64,
}

impl PrepStats {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_slice(&error::read(path)?).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string(self).map_err(|e| Error::parse(path, e.to_string()))?;
        s.push('\n');
        error::write(path, s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepConfig {
    pub delta: u32,
    /// Random negatives sampled across all training frames.
    pub neg_pool: usize,
    /// Negatives kept by histogram decorrelation.
    pub neg_keep: usize,
    /// Jittered crops per ground-truth box.
    pub crops: usize,
    pub seed: u64,
    pub step: Option<usize>,
    pub min_height: f64,
    /// Random negatives overlap every annotation by at most this IoU.
    pub neg_max_overlap: f64,
    /// Classifier labels: proposals above `pos_iou` are pedestrians, below
    /// `neg_iou` background, the rest unused.
    pub pos_iou: f64,
    pub neg_iou: f64,
    /// Pedestrian proposals kept for the classifier (random subset).
    pub svm_max_positives: usize,
    /// Background proposals kept per pedestrian proposal.
    pub svm_neg_ratio: f64,
    pub distance: DistanceMode,
    pub reference: GreedyReference,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            delta: pedestrian_core::mining::DEFAULT_DELTA,
            neg_pool: 2000,
            neg_keep: 1000,
            crops: pedestrian_core::mining::DEFAULT_CROPS,
            seed: 0,
            step: None,
            min_height: DEFAULT_MIN_HEIGHT,
            neg_max_overlap: 0.3,
            pos_iou: 0.5,
            neg_iou: 0.3,
            svm_max_positives: 1500,
            svm_neg_ratio: 5.0,
            distance: DistanceMode::Direct,
            reference: GreedyReference::RemainingPool,
        }
    }
}

/// Size at which negative candidates are compared by color histogram.
const HISTOGRAM_PATCH: FrameSize = FrameSize::new(32, 64);

pub fn prep(ds: &Dataset, proposals: &BTreeMap<String, Vec<ScoredRegion>>, cfg: &PrepConfig) -> Result<PrepStats> {
    if cfg.neg_keep == 0 || cfg.neg_keep > cfg.neg_pool {
        return Err(Error::Usage(format!(
            "--neg-keep {} must be between 1 and --neg-pool {}",
            cfg.neg_keep, cfg.neg_pool
        )));
    }
    let frames = ds.frames(Split::Train, cfg.step);
    if frames.is_empty() {
        return Err(Error::Usage("no training frames in the manifest".into()));
    }
    let mut rng = seeded_rng(cfg.seed);

    // Padding: every ground-truth box against its frame's proposals.
    let mut stats = Vec::new();
    for f in &frames {
        let gts = extract_positives(f, cfg.min_height, false);
        let props: Vec<BoundingBox> = proposals
            .get(&f.frame_id)
            .into_iter()
            .flatten()
            .map(|r| r.bbox)
            .collect();
        if !gts.is_empty() && !props.is_empty() {
            stats.push(estimate_padding(&gts, &props)?);
        }
    }
    let padding = PaddingStat::merge(stats);
    if padding.samples.is_empty() {
        return Err(Error::Usage(
            "no training frame has both ground truth and proposals".into(),
        ));
    }
    let alpha = padding.mean_alpha;

    let mut positives = Vec::new();
    for f in &frames {
        for g in extract_positives(f, cfg.min_height, false) {
            for c in random_crops(&g, alpha, cfg.crops, &mut rng) {
                positives.push(TrainingRegion::new(&f.frame_id, &c));
            }
        }
    }

    // Negative pool spread evenly over the frames, then decorrelated.
    let per_frame = cfg.neg_pool.div_ceil(frames.len());
    let mut pool: Vec<TrainingRegion> = Vec::new();
    let mut pool_patches: Vec<FrameImage> = Vec::new();
    for f in &frames {
        if pool.len() >= cfg.neg_pool {
            break;
        }
        let img = ds.image(f)?;
        let want = per_frame.min(cfg.neg_pool - pool.len());
        let range = SizeRange {
            min_h: cfg.min_height,
            ..SizeRange::default()
        };
        let boxes = sample_random_negatives(f, img.size(), want, range, cfg.neg_max_overlap, &mut rng)?;
        for b in boxes {
            pool_patches.push(crop_and_resize(&img, &expand_box(&b, alpha), HISTOGRAM_PATCH)?);
            pool.push(TrainingRegion::new(&f.frame_id, &b));
        }
    }
    let keep = cfg.neg_keep.min(pool.len());
    let chosen = select_diverse_negatives(&pool_patches, keep, cfg.delta, cfg.distance, cfg.reference)?;
    let negatives = chosen.into_iter().map(|i| pool[i].clone()).collect();

    let mut svm_pos = Vec::new();
    let mut svm_neg = Vec::new();
    for f in &frames {
        let gts = extract_positives(f, cfg.min_height, false);
        let all: Vec<BoundingBox> = f.annotations.iter().map(|a| a.bbox).collect();
        for r in proposals.get(&f.frame_id).into_iter().flatten() {
            let best_pos = gts.iter().map(|g| iou(&r.bbox, g)).fold(0.0, f64::max);
            let best_any = all.iter().map(|g| iou(&r.bbox, g)).fold(0.0, f64::max);
            let rec = |pedestrian| SvmRegion {
                frame_id: f.frame_id.clone(),
                x: r.bbox.x,
                y: r.bbox.y,
                w: r.bbox.w,
                h: r.bbox.h,
                score: r.score,
                pedestrian,
            };
            if best_pos > cfg.pos_iou {
                svm_pos.push(rec(true));
            } else if best_any < cfg.neg_iou {
                svm_neg.push(rec(false));
            }
        }
    }
    let svm_pos = subsample(svm_pos, cfg.svm_max_positives, &mut rng);
    let max_neg = ((svm_pos.len().max(1) as f64) * cfg.svm_neg_ratio).ceil() as usize;
    let svm_neg = subsample(svm_neg, max_neg, &mut rng);
    let mut svm_regions = svm_pos;
    svm_regions.extend(svm_neg);

    Ok(PrepStats {
        mean_alpha: alpha,
        padding_samples: padding.samples,
        positives,
        negatives,
        svm_regions,
        delta: cfg.delta,
        seed: cfg.seed,
    })
}

/// A random subset of at most `n` items, in their original order.
fn subsample<T>(items: Vec<T>, n: usize, rng: &mut pedestrian_core::SeededRng) -> Vec<T> {
    if items.len() <= n {
        return items;
    }
    let mut keep = vec![false; items.len()];
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(rng);
    for &i in &idx[..n] {
        keep[i] = true;
    }
    items
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(t, _)| t)
        .collect()
}

/// Loads each training frame at most once.
struct ImageCache<'a> {
    ds: &'a Dataset,
    images: HashMap<String, FrameImage>,
}

impl<'a> ImageCache<'a> {
    fn new(ds: &'a Dataset) -> Self {
        Self {
            ds,
            images: HashMap::new(),
        }
    }

    fn get(&mut self, frame_id: &str) -> Result<&FrameImage> {
        if !self.images.contains_key(frame_id) {
            let f = self
                .ds
                .manifest
                .frame(frame_id)
                .ok_or_else(|| Error::Usage(format!("frame `{frame_id}` is not in the manifest")))?;
            let img = self.ds.image(f)?;
            self.images.insert(frame_id.to_string(), img);
        }
        Ok(&self.images[frame_id])
    }
}

/// Network training patches from the prepared regions, padded by
/// `mean_alpha`; folds follow the frames' sessions.
pub fn training_patches(ds: &Dataset, stats: &PrepStats, input: FrameSize, folds: usize) -> Result<Vec<LabeledPatch>> {
    let mut cache = ImageCache::new(ds);
    let mut out = Vec::new();
    let mut sessions = Vec::new();
    let labeled = stats
        .positives
        .iter()
        .map(|r| (r, true))
        .chain(stats.negatives.iter().map(|r| (r, false)));
    for (r, pedestrian) in labeled {
        let img = cache.get(&r.frame_id)?;
        let patch = crop_and_resize(img, &expand_box(&r.bbox(), stats.mean_alpha), input)?;
        sessions.push(ds.manifest.frame(&r.frame_id).expect("cached frame exists").session);
        out.push(LabeledPatch {
            patch,
            pedestrian,
            fold: 0,
        });
    }
    for (s, fold) in out.iter_mut().zip(session_folds(&sessions, folds)) {
        s.fold = fold;
    }
    Ok(out)
}

pub struct NetworkTraining {
    pub weights: ConvNetWeights,
    pub crossval: CrossValidation,
}

/// Cross-validates the stopping iteration, retrains on every sample for
/// that many iterations and rounds the weights to storage precision.
pub fn train_network(spec: ConvNetSpec, data: &[LabeledPatch], cfg: &TrainConfig) -> Result<NetworkTraining> {
    let initial = ConvNetWeights::seeded(spec, cfg.seed)?;
    let crossval = crossval_stop_iteration(&initial, data, cfg)?;
    let mut weights = finetune_full(&initial, data, crossval.stop_iteration, cfg)?;
    weights.round_to_f32();
    Ok(NetworkTraining { weights, crossval })
}

/// Network features of every classifier region, padded by `mean_alpha`.
pub fn region_features(ds: &Dataset, stats: &PrepStats, net: &ConvNetWeights) -> Result<Vec<Vec<f64>>> {
    let mut cache = ImageCache::new(ds);
    let input = net.spec.input_size();
    let mut out = Vec::with_capacity(stats.svm_regions.len());
    for r in &stats.svm_regions {
        let img = cache.get(&r.frame_id)?;
        let patch = crop_and_resize(img, &expand_box(&r.bbox(), stats.mean_alpha), input)?;
        out.push(extract_features(net, &patch)?);
    }
    Ok(out)
}

/// Trains the final classifier. In series mode only regions whose proposal
/// score passes the threshold take part, as at detection time.
pub fn train_classifier(
    regions: &[SvmRegion],
    features: &[Vec<f64>],
    fusion: FusionMode,
    cfg: &SvmTrainConfig,
) -> Result<LinearSvm> {
    fusion.validate()?;
    let label = |r: &SvmRegion| if r.pedestrian { 1.0 } else { -1.0 };
    match fusion {
        FusionMode::Series { threshold } => {
            let (xs, ys): (Vec<Vec<f64>>, Vec<f64>) = regions
                .iter()
                .zip(features)
                .filter(|(r, _)| r.score > threshold)
                .map(|(r, f)| (f.clone(), label(r)))
                .unzip();
            Ok(train_svm(&xs, &ys, cfg)?)
        }
        FusionMode::Parallel => {
            let scores: Vec<f64> = regions.iter().map(|r| r.score).collect();
            let ys: Vec<f64> = regions.iter().map(label).collect();
            Ok(train_fused_svm(features, &scores, &ys, cfg)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub arch: Arch,
    pub net: TrainConfig,
    pub fusion: FusionMode,
    pub svm: SvmTrainConfig,
    pub proposals: ProposalSource,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            arch: Arch::Desk,
            net: TrainConfig::default(),
            fusion: FusionMode::Parallel,
            svm: SvmTrainConfig {
                c: DEFAULT_C,
                ..Default::default()
            },
            proposals: ProposalSource::External,
        }
    }
}

pub fn assemble_bundle(
    convnet: ConvNetWeights,
    svm: LinearSvm,
    mean_alpha: f64,
    fusion: FusionMode,
    proposals: ProposalSource,
) -> Result<ModelBundle> {
    let m = ModelBundle {
        input_size: convnet.spec.input_size(),
        convnet,
        svm,
        mean_alpha,
        fusion,
        proposals,
    };
    m.validate()?;
    Ok(m)
}

/// The whole `train` command: network, classifier, bundle.
pub fn train(ds: &Dataset, stats: &PrepStats, opts: &TrainOptions) -> Result<(ModelBundle, CrossValidation)> {
    let spec = opts.arch.spec();
    let data = training_patches(ds, stats, spec.input_size(), opts.net.folds)?;
    let net = train_network(spec, &data, &opts.net)?;
    let features = region_features(ds, stats, &net.weights)?;
    let svm = train_classifier(&stats.svm_regions, &features, opts.fusion, &opts.svm)?;
    let bundle = assemble_bundle(net.weights, svm, stats.mean_alpha, opts.fusion, opts.proposals)?;
    Ok((bundle, net.crossval))
}

fn frame_proposals<'a>(
    m: &ModelBundle,
    f: &FrameRecord,
    external: Option<&'a BTreeMap<String, Vec<ScoredRegion>>>,
) -> Result<Option<&'a [ScoredRegion]>> {
    match (m.proposals, external) {
        (ProposalSource::External, None) => Err(Error::Usage("the bundle needs an external proposals file".into())),
        (ProposalSource::External, Some(ext)) => Ok(Some(
            ext.get(&f.frame_id)
                .ok_or_else(|| CoreError::MissingProposals(f.frame_id.clone()))?,
        )),
        (ProposalSource::Sliding(_), _) => Ok(None),
    }
}

/// Detections on the sampled test frames, in manifest order. Frames are
/// spread over `workers` threads; the output does not depend on the count.
pub fn detect(
    ds: &Dataset,
    m: &ModelBundle,
    cfg: &DetectionConfig,
    step: Option<usize>,
    external: Option<&BTreeMap<String, Vec<ScoredRegion>>>,
    workers: usize,
) -> Result<Vec<ScoredRegion>> {
    m.validate()?;
    let frames = ds.frames(Split::Test, step);
    let run = |f: &&FrameRecord| -> Result<Vec<ScoredRegion>> {
        let img = ds.image(f)?;
        let props = frame_proposals(m, f, external)?;
        Ok(detect_frame(&f.frame_id, &img, m, cfg, props)?)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("worker pool: {e}")))?;
    let per_frame: Vec<Vec<ScoredRegion>> = pool.install(|| frames.par_iter().map(run).collect::<Result<_>>())?;
    Ok(per_frame.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou: f64,
    pub fppi: f64,
    pub step: Option<usize>,
    pub min_height: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou: pedestrian_core::evaluate::DEFAULT_MATCH_IOU,
            fppi: pedestrian_core::evaluate::DEFAULT_TARGET_FPPI,
            step: None,
            min_height: DEFAULT_MIN_HEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub target_fppi: f64,
    pub miss_rate: f64,
    pub frames: usize,
    pub positives: usize,
}

impl EvalSummary {
    /// `{"mr_at_<fppi>_fppi": .., "frames": .., "positives": ..}`.
    pub fn to_json(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert(format!("mr_at_{}_fppi", self.target_fppi), self.miss_rate.into());
        obj.insert("frames".into(), self.frames.into());
        obj.insert("positives".into(), self.positives.into());
        serde_json::to_string(&serde_json::Value::Object(obj)).expect("summary serializes") + "\n"
    }
}

/// Scores detections on the sampled test frames. Detections on ignored
/// (occluded or small) pedestrians are dropped before matching; detections
/// on frames outside the sample are not counted.
pub fn evaluate(
    ds: &Dataset,
    detections: &BTreeMap<String, Vec<ScoredRegion>>,
    cfg: &EvalConfig,
) -> Result<(MrFppiCurve, EvalSummary)> {
    if let Some(id) = detections.keys().find(|id| ds.manifest.frame(id).is_none()) {
        return Err(Error::Usage(format!(
            "detections for frame `{id}` which is not in the manifest"
        )));
    }
    let mut dets = BTreeMap::new();
    let mut gts = BTreeMap::new();
    for f in ds.frames(Split::Test, cfg.step) {
        let targets = evaluation_targets(f, cfg.min_height);
        let d = detections.get(&f.frame_id).cloned().unwrap_or_default();
        dets.insert(
            f.frame_id.clone(),
            drop_ignored_detections(d, &targets, cfg.iou, |r: &ScoredRegion| r.bbox),
        );
        gts.insert(f.frame_id.clone(), targets.positives);
    }
    let curve = mr_fppi_curve(&dets, &gts, cfg.iou)?;
    let summary = EvalSummary {
        target_fppi: cfg.fppi,
        miss_rate: mr_at_fppi(&curve, cfg.fppi)?,
        frames: curve.frames,
        positives: curve.positives,
    };
    Ok((curve, summary))
}

/// Loads the sampled test frames (at most `limit`) and benchmarks the bundle
/// on them.
pub fn bench(
    ds: &Dataset,
    m: &ModelBundle,
    cfg: &DetectionConfig,
    step: Option<usize>,
    limit: Option<usize>,
    external: Option<&BTreeMap<String, Vec<ScoredRegion>>>,
    repetitions: usize,
) -> Result<TimingReport> {
    let mut frames = Vec::new();
    for f in ds
        .frames(Split::Test, step)
        .into_iter()
        .take(limit.unwrap_or(usize::MAX))
    {
        frames.push(BenchFrame {
            frame_id: f.frame_id.clone(),
            image: ds.image(f)?,
            proposals: frame_proposals(m, f, external)?.map(<[ScoredRegion]>::to_vec),
        });
    }
    run_benchmark(&frames, m, cfg, repetitions)
}

/// Sliding-window parameters with optional overrides.
pub fn window_params(
    stride: Option<f64>,
    min_h: Option<f64>,
    max_h: Option<f64>,
    aspect: Option<f64>,
    scale_step: Option<f64>,
) -> Result<SlidingWindowParams> {
    let d = SlidingWindowParams::default();
    let p = SlidingWindowParams {
        stride: stride.unwrap_or(d.stride),
        min_h: min_h.unwrap_or(d.min_h),
        max_h: max_h.unwrap_or(d.max_h),
        aspect_ratio: aspect.unwrap_or(d.aspect_ratio),
        scale_step: scale_step.unwrap_or(d.scale_step),
        scale_stride: false,
    };
    p.validate()?;
    Ok(p)
}
