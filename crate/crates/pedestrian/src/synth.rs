//! Seeded synthetic dataset: textured 2:1 "pedestrian" rectangles over
//! cluttered backgrounds, plus a scored proposal file whose scores are the
//! windows' best overlap with the ground truth blurred by Gaussian noise.

use std::path::{Path, PathBuf};

use pedestrian_core::dataset::{Annotation, DatasetManifest, FrameRecord, Split, LAST_TRAIN_SESSION, MAX_SESSION};
use pedestrian_core::proposals::{sliding_windows, SlidingWindowParams};
use pedestrian_core::{iou, seeded_rng, BoundingBox, FrameImage, FrameSize, ScoredRegion, SeededRng};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::imageio::save_image;
use crate::manifest::save_manifest;
use crate::regions::save_regions;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROPOSALS_FILE: &str = "proposals.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub train_frames: usize,
    pub test_frames: usize,
    pub frame: FrameSize,
    /// Pedestrian heights are drawn from this range (even values only, so
    /// widths are exact halves).
    pub min_height: u32,
    pub max_height: u32,
    pub max_pedestrians: usize,
    /// Number of background clutter shapes per frame.
    pub clutter: (usize, usize),
    /// Standard deviation of the noise added to proposal scores.
    pub score_noise: f64,
    pub windows: SlidingWindowParams,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train_frames: 200,
            test_frames: 50,
            frame: FrameSize::new(160, 128),
            min_height: 56,
            max_height: 100,
            max_pedestrians: 2,
            clutter: (6, 14),
            score_noise: 0.1,
            windows: SlidingWindowParams::default(),
            seed: 0,
        }
    }
}

pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<FrameImage>,
    pub proposals: Vec<ScoredRegion>,
}

/// RGB canvas with values clamped to `[0, 255]` on write.
struct Canvas {
    w: usize,
    h: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn put(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.w + x) * 3;
        for c in 0..3 {
            self.px[i + c] = rgb[c].clamp(0.0, 255.0);
        }
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, w: i64, h: i64, mut color: impl FnMut(usize, usize) -> [f32; 3]) {
        for y in y0.max(0)..(y0 + h).min(self.h as i64) {
            for x in x0.max(0)..(x0 + w).min(self.w as i64) {
                let rgb = color((x - x0) as usize, (y - y0) as usize);
                self.put(x as usize, y as usize, rgb);
            }
        }
    }
}

fn random_color(rng: &mut SeededRng, lo: f32, hi: f32) -> [f32; 3] {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

fn background(rng: &mut SeededRng, size: FrameSize) -> Canvas {
    let top = random_color(rng, 40.0, 200.0);
    let bottom = random_color(rng, 40.0, 200.0);
    let noise = Normal::new(0.0f32, 6.0).expect("valid sigma");
    let mut c = Canvas {
        w: size.width,
        h: size.height,
        px: vec![0.0; size.width * size.height * 3],
    };
    for y in 0..size.height {
        let t = y as f32 / (size.height - 1).max(1) as f32;
        for x in 0..size.width {
            let rgb = [0, 1, 2].map(|k| top[k] * (1.0 - t) + bottom[k] * t + noise.sample(rng));
            c.put(x, y, rgb);
        }
    }
    c
}

/// Smooth shapes of arbitrary aspect ratio: rectangles and discs.
fn clutter(rng: &mut SeededRng, c: &mut Canvas, count: usize) {
    let noise = Normal::new(0.0f32, 5.0).expect("valid sigma");
    for _ in 0..count {
        let color = random_color(rng, 0.0, 255.0);
        let w = rng.random_range(8..70i64);
        let h = rng.random_range(8..70i64);
        let x = rng.random_range(-10..c.w as i64);
        let y = rng.random_range(-10..c.h as i64);
        if rng.random_bool(0.3) {
            let r = w.min(h) as f32 / 2.0;
            for yy in y.max(0)..(y + h).min(c.h as i64) {
                for xx in x.max(0)..(x + w).min(c.w as i64) {
                    let dx = (xx - x) as f32 - w as f32 / 2.0;
                    let dy = (yy - y) as f32 - h as f32 / 2.0;
                    if dx * dx + dy * dy <= r * r {
                        let rgb = color.map(|v| v + noise.sample(rng));
                        c.put(xx as usize, yy as usize, rgb);
                    }
                }
            }
        } else {
            c.fill_rect(x, y, w, h, |_, _| color.map(|v| v + noise.sample(rng)));
        }
    }
}

/// A "pedestrian": solid body color with strong per-pixel texture, a
/// darker head band over the top sixth and a dark two-pixel outline.
fn draw_pedestrian(rng: &mut SeededRng, c: &mut Canvas, b: &BoundingBox) {
    let body = random_color(rng, 60.0, 230.0);
    let texture = Normal::new(0.0f32, 35.0).expect("valid sigma");
    let head_rows = (b.h / 6.0).round() as usize;
    let mut draws: Vec<f32> = Vec::with_capacity((b.w * b.h) as usize);
    for _ in 0..(b.w * b.h) as usize {
        draws.push(texture.sample(rng));
    }
    let w = b.w as usize;
    let h = b.h as usize;
    c.fill_rect(b.x as i64, b.y as i64, b.w as i64, b.h as i64, |dx, dy| {
        let n = draws[dy * w + dx];
        let edge = dx < 2 || dy < 2 || dx + 2 >= w || dy + 2 >= h;
        let shade = if edge {
            0.15
        } else if dy < head_rows {
            0.45
        } else {
            1.0
        };
        body.map(|v| v * shade + n)
    });
}

fn place_pedestrians(rng: &mut SeededRng, cfg: &SynthConfig) -> Vec<BoundingBox> {
    // About one frame in ten has nobody in it.
    let count = if rng.random_bool(0.1) {
        0
    } else {
        rng.random_range(1..=cfg.max_pedestrians)
    };
    let mut out: Vec<BoundingBox> = Vec::new();
    let mut attempts = 0;
    while out.len() < count && attempts < 200 {
        attempts += 1;
        let h = 2 * rng.random_range(cfg.min_height / 2..=cfg.max_height / 2);
        let w = h / 2;
        if h as usize > cfg.frame.height || w as usize > cfg.frame.width {
            continue;
        }
        let x = rng.random_range(0..=(cfg.frame.width as u32 - w));
        let y = rng.random_range(0..=(cfg.frame.height as u32 - h));
        let b = BoundingBox::new(x as f64, y as f64, w as f64, h as f64);
        if out.iter().all(|o| b.intersection_area(o) == 0.0) {
            out.push(b);
        }
    }
    out
}

/// Session of the `i`-th of `n` frames when spread evenly over
/// `first..=last`.
fn session_of(i: usize, n: usize, first: u32, last: u32) -> u32 {
    let sessions = (last - first + 1) as usize;
    first + (i * sessions / n.max(1)) as u32
}

/// Generates the dataset in memory. Training frames use sessions 0-5, test
/// frames sessions 6-10; image paths are `images/<frame_id>.png`.
pub fn generate(cfg: &SynthConfig) -> SynthDataset {
    let mut rng = seeded_rng(cfg.seed);
    let score_noise = Normal::new(0.0, cfg.score_noise.max(0.0)).expect("valid sigma");
    let windows = sliding_windows(cfg.frame, &cfg.windows);
    let mut frames = Vec::new();
    let mut images = Vec::new();
    let mut proposals = Vec::new();
    let mut person_id = 0i64;
    let total = cfg.train_frames + cfg.test_frames;
    for i in 0..total {
        let (split, session) = if i < cfg.train_frames {
            (Split::Train, session_of(i, cfg.train_frames, 0, LAST_TRAIN_SESSION))
        } else {
            (
                Split::Test,
                session_of(
                    i - cfg.train_frames,
                    cfg.test_frames,
                    LAST_TRAIN_SESSION + 1,
                    MAX_SESSION,
                ),
            )
        };
        let frame_id = format!("{}_s{session:02}_f{i:04}", split.as_str());
        let mut canvas = background(&mut rng, cfg.frame);
        let n_clutter = rng.random_range(cfg.clutter.0..=cfg.clutter.1);
        clutter(&mut rng, &mut canvas, n_clutter);
        let peds = place_pedestrians(&mut rng, cfg);
        for b in &peds {
            draw_pedestrian(&mut rng, &mut canvas, b);
        }
        let annotations = peds
            .iter()
            .map(|b| {
                person_id += 1;
                Annotation {
                    bbox: *b,
                    occluded: false,
                    person_id,
                }
            })
            .collect();
        for w in &windows {
            let best = peds.iter().map(|g| iou(w, g)).fold(0.0, f64::max);
            proposals.push(ScoredRegion::new(
                frame_id.clone(),
                *w,
                best + score_noise.sample(&mut rng),
            ));
        }
        images.push(FrameImage::new(cfg.frame.width, cfg.frame.height, 3, canvas.px).expect("canvas in range"));
        frames.push(FrameRecord {
            image_path: format!("images/{frame_id}.png"),
            frame_id,
            session,
            split,
            annotations,
        });
    }
    let mut manifest = DatasetManifest {
        frames,
        ..Default::default()
    };
    manifest.metadata.insert("generator".into(), "\"synthetic\"".into());
    manifest.metadata.insert("seed".into(), cfg.seed.to_string());
    SynthDataset {
        manifest,
        images,
        proposals,
    }
}

/// Paths of a dataset written by [`write_dataset`].
pub struct SynthPaths {
    pub manifest: PathBuf,
    pub proposals: PathBuf,
}

pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> Result<SynthPaths> {
    for (f, img) in ds.manifest.frames.iter().zip(&ds.images) {
        save_image(img, &dir.join(&f.image_path))?;
    }
    let paths = SynthPaths {
        manifest: dir.join(MANIFEST_FILE),
        proposals: dir.join(PROPOSALS_FILE),
    };
    save_manifest(&ds.manifest, &paths.manifest)?;
    save_regions(&paths.proposals, &ds.proposals)?;
    Ok(paths)
}
