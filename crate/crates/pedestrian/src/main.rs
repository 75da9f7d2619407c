use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pedestrian::bundle::{load_bundle, save_bundle};
use pedestrian::core::classify::{FusionMode, SvmTrainConfig};
use pedestrian::core::features::TrainConfig;
use pedestrian::core::pipeline::{DetectionConfig, ProposalSource};
use pedestrian::error::{self, Error, Result};
use pedestrian::regions::{curve_to_csv, load_regions, save_regions};
use pedestrian::synth::{generate, write_dataset, SynthConfig};
use pedestrian::workflow::{self, Arch, Dataset, EvalConfig, PrepConfig, PrepStats, TrainOptions};

#[derive(Parser)]
#[command(
    name = "pedestrian",
    version,
    about = "Region-proposal + CNN + SVM pedestrian detection toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sliding,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fuse {
    Series,
    Parallel,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Desk,
    Compact,
}

#[derive(clap::Args)]
struct WindowArgs {
    #[arg(long)]
    stride: Option<f64>,
    #[arg(long)]
    min_h: Option<f64>,
    #[arg(long)]
    max_h: Option<f64>,
    /// Window height divided by width.
    #[arg(long)]
    aspect: Option<f64>,
    #[arg(long)]
    scale_step: Option<f64>,
}

impl WindowArgs {
    fn params(&self) -> Result<pedestrian::core::proposals::SlidingWindowParams> {
        workflow::window_params(self.stride, self.min_h, self.max_h, self.aspect, self.scale_step)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write proposals for every manifest frame.
    Propose {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Scored proposals to pass through (external mode).
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        windows: WindowArgs,
    },
    /// Estimate padding and mine network and classifier training regions.
    Prep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        proposals: PathBuf,
        #[arg(long)]
        out_stats: PathBuf,
        #[arg(long, default_value_t = 32)]
        delta: u32,
        #[arg(long, default_value_t = 2000)]
        neg_pool: usize,
        #[arg(long, default_value_t = 1000)]
        neg_keep: usize,
        #[arg(long, default_value_t = 5)]
        crops: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep every n-th training frame per session.
        #[arg(long)]
        step: Option<usize>,
    },
    /// Train the network and the final classifier into a model bundle.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        out_bundle: PathBuf,
        #[arg(long, default_value_t = 6)]
        folds: usize,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 12)]
        batch: usize,
        #[arg(long, default_value_t = 5.0)]
        neg_pos_ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "parallel")]
        fuse: Fuse,
        /// Proposal score threshold in series mode; none means keep all.
        #[arg(long, allow_negative_numbers = true)]
        series_thresh: Option<f64>,
        #[arg(long, value_enum, default_value = "desk")]
        arch: ArchArg,
        #[arg(long, default_value_t = 50)]
        validation_interval: usize,
        #[arg(long, default_value_t = pedestrian::core::classify::DEFAULT_C)]
        svm_c: f64,
        /// Where detection proposals come from.
        #[arg(long, value_enum, default_value = "external")]
        proposal_mode: Mode,
        #[command(flatten)]
        windows: WindowArgs,
    },
    /// Run the bundle on the sampled test frames.
    Detect {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        nms_iou: f64,
        #[arg(long, allow_negative_numbers = true)]
        score_floor: Option<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Scored proposals, required by bundles using external proposals.
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long)]
        step: Option<usize>,
    },
    /// Miss rate against false positives per image.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_curve: PathBuf,
        #[arg(long)]
        out_summary: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = 0.1)]
        fppi: f64,
        #[arg(long)]
        step: Option<usize>,
    },
    /// Per-stage timing of the detection pipeline.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long)]
        step: Option<usize>,
        /// Benchmark at most this many frames.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Write a seeded synthetic dataset (images, manifest, scored proposals).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train_frames: usize,
        #[arg(long, default_value_t = 50)]
        test_frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        score_noise: f64,
    },
}

fn optional_regions(
    path: Option<&PathBuf>,
) -> Result<Option<std::collections::BTreeMap<String, Vec<pedestrian::core::ScoredRegion>>>> {
    path.map(|p| load_regions(p)).transpose()
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Propose {
            manifest,
            mode,
            proposals,
            out,
            windows,
        } => {
            let ds = Dataset::load(&manifest)?;
            let source = match mode {
                Mode::Sliding => ProposalSource::Sliding(windows.params()?),
                Mode::External => ProposalSource::External,
            };
            let ext = optional_regions(proposals.as_ref())?;
            let regions = workflow::propose(&ds, source, ext.as_ref())?;
            save_regions(&out, &regions)?;
            println!("proposals={} frames={}", regions.len(), ds.manifest.frames.len());
        }
        Command::Prep {
            manifest,
            proposals,
            out_stats,
            delta,
            neg_pool,
            neg_keep,
            crops,
            seed,
            step,
        } => {
            let ds = Dataset::load(&manifest)?;
            let props = load_regions(&proposals)?;
            let cfg = PrepConfig {
                delta,
                neg_pool,
                neg_keep,
                crops,
                seed,
                step,
                ..PrepConfig::default()
            };
            let stats = workflow::prep(&ds, &props, &cfg)?;
            stats.save(&out_stats)?;
            println!(
                "mean_alpha={} positives={} negatives={} svm_regions={}",
                stats.mean_alpha,
                stats.positives.len(),
                stats.negatives.len(),
                stats.svm_regions.len()
            );
        }
        Command::Train {
            manifest,
            stats,
            out_bundle,
            folds,
            iters,
            lr,
            batch,
            neg_pos_ratio,
            seed,
            fuse,
            series_thresh,
            arch,
            validation_interval,
            svm_c,
            proposal_mode,
            windows,
        } => {
            let fusion = match fuse {
                Fuse::Series => FusionMode::Series {
                    threshold: series_thresh.unwrap_or(f64::NEG_INFINITY),
                },
                Fuse::Parallel if series_thresh.is_some() => {
                    return Err(Error::Usage("--series-thresh needs --fuse series".into()))
                }
                Fuse::Parallel => FusionMode::Parallel,
            };
            let ds = Dataset::load(&manifest)?;
            let stats = PrepStats::load(&stats)?;
            let opts = TrainOptions {
                arch: match arch {
                    ArchArg::Desk => Arch::Desk,
                    ArchArg::Compact => Arch::Compact,
                },
                net: TrainConfig {
                    learning_rate: lr,
                    batch_size: batch,
                    neg_pos_ratio,
                    max_iterations: iters,
                    seed,
                    folds,
                    validation_interval,
                    ..TrainConfig::default()
                },
                fusion,
                svm: SvmTrainConfig {
                    c: svm_c,
                    seed,
                    ..SvmTrainConfig::default()
                },
                proposals: match proposal_mode {
                    Mode::Sliding => ProposalSource::Sliding(windows.params()?),
                    Mode::External => ProposalSource::External,
                },
            };
            let (bundle, cv) = workflow::train(&ds, &stats, &opts)?;
            save_bundle(&bundle, &out_bundle)?;
            println!("stop_iteration={} runs={}", cv.stop_iteration, cv.runs);
        }
        Command::Detect {
            manifest,
            bundle,
            out,
            nms_iou,
            score_floor,
            workers,
            proposals,
            step,
        } => {
            let ds = Dataset::load(&manifest)?;
            let m = load_bundle(&bundle)?;
            let cfg = detection_config(nms_iou, score_floor)?;
            let ext = optional_regions(proposals.as_ref())?;
            let dets = workflow::detect(&ds, &m, &cfg, step, ext.as_ref(), workers)?;
            save_regions(&out, &dets)?;
            println!("detections={}", dets.len());
        }
        Command::Eval {
            detections,
            manifest,
            out_curve,
            out_summary,
            iou,
            fppi,
            step,
        } => {
            let ds = Dataset::load(&manifest)?;
            let dets = load_regions(&detections)?;
            let cfg = EvalConfig {
                iou,
                fppi,
                step,
                ..EvalConfig::default()
            };
            let (curve, summary) = workflow::evaluate(&ds, &dets, &cfg)?;
            error::write(&out_curve, curve_to_csv(&curve))?;
            let json = summary.to_json();
            error::write(&out_summary, &json)?;
            print!("{json}");
        }
        Command::Bench {
            manifest,
            bundle,
            reps,
            out,
            proposals,
            step,
            frames,
        } => {
            let ds = Dataset::load(&manifest)?;
            let m = load_bundle(&bundle)?;
            let ext = optional_regions(proposals.as_ref())?;
            let report = workflow::bench(&ds, &m, &DetectionConfig::default(), step, frames, ext.as_ref(), reps)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            error::write(&out, &json)?;
            println!("fps={} frames={}", report.fps, report.frames);
        }
        Command::Synth {
            out,
            train_frames,
            test_frames,
            seed,
            score_noise,
        } => {
            let cfg = SynthConfig {
                train_frames,
                test_frames,
                seed,
                score_noise,
                ..SynthConfig::default()
            };
            let ds = generate(&cfg);
            let paths = write_dataset(&ds, &out)?;
            println!(
                "manifest={} proposals={}",
                paths.manifest.display(),
                paths.proposals.display()
            );
        }
    }
    Ok(())
}

fn detection_config(nms_iou: f64, score_floor: Option<f64>) -> Result<DetectionConfig> {
    if !(nms_iou > 0.0 && nms_iou < 1.0) {
        return Err(Error::Usage(format!("--nms-iou {nms_iou} must be in (0, 1)")));
    }
    Ok(DetectionConfig {
        nms_iou,
        score_floor: score_floor.unwrap_or(f64::NEG_INFINITY),
    })
}

/// One JSON object per line on stderr: `{"error":kind,"message":text}`.
fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            e.exit()
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            report("usage", first);
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            if matches!(e, Error::Usage(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
