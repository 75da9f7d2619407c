//! Model bundle directory: `convnet.ppcn` (network weights), `svm.json` and
//! `bundle.json` (padding, fusion, proposal source, input size).
//!
//! Weight file layout, all little-endian: magic `PPCN`, `u32` format
//! version, `u32` byte length of the UTF-8 JSON network spec, the spec, then
//! for every parameterized layer its weight and bias tensors, each as a
//! `u32` rank, `rank` `u32` dimensions and the values as `f32`.

use std::path::Path;

use pedestrian_core::classify::{FusionMode, LinearSvm};
use pedestrian_core::features::{ConvNetSpec, ConvNetWeights, Layer, LayerParams, Shape, Tensor, WEIGHTS_VERSION};
use pedestrian_core::pipeline::{ModelBundle, ProposalSource};
use pedestrian_core::proposals::SlidingWindowParams;
use pedestrian_core::FrameSize;
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};

pub const MAGIC: &[u8; 4] = b"PPCN";
pub const BUNDLE_VERSION: u32 = 1;
pub const WEIGHTS_FILE: &str = "convnet.ppcn";
pub const SVM_FILE: &str = "svm.json";
pub const BUNDLE_FILE: &str = "bundle.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum LayerDto {
    Conv {
        kernel: usize,
        out_channels: usize,
        stride: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    FullyConnected {
        out: usize,
    },
    Softmax,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDto {
    input: [usize; 3],
    layers: Vec<LayerDto>,
    feature_layer: usize,
}

impl From<&ConvNetSpec> for SpecDto {
    fn from(s: &ConvNetSpec) -> Self {
        let layers = s
            .layers
            .iter()
            .map(|l| match *l {
                Layer::Conv {
                    kernel,
                    out_channels,
                    stride,
                } => LayerDto::Conv {
                    kernel,
                    out_channels,
                    stride,
                },
                Layer::Relu => LayerDto::Relu,
                Layer::MaxPool { window, stride } => LayerDto::MaxPool { window, stride },
                Layer::FullyConnected { out } => LayerDto::FullyConnected { out },
                Layer::Softmax => LayerDto::Softmax,
            })
            .collect();
        Self {
            input: [s.input.channels, s.input.height, s.input.width],
            layers,
            feature_layer: s.feature_layer,
        }
    }
}

impl From<SpecDto> for ConvNetSpec {
    fn from(d: SpecDto) -> Self {
        let layers = d
            .layers
            .into_iter()
            .map(|l| match l {
                LayerDto::Conv {
                    kernel,
                    out_channels,
                    stride,
                } => Layer::Conv {
                    kernel,
                    out_channels,
                    stride,
                },
                LayerDto::Relu => Layer::Relu,
                LayerDto::MaxPool { window, stride } => Layer::MaxPool { window, stride },
                LayerDto::FullyConnected { out } => Layer::FullyConnected { out },
                LayerDto::Softmax => Layer::Softmax,
            })
            .collect();
        ConvNetSpec {
            input: Shape::new(d.input[0], d.input[1], d.input[2]),
            layers,
            feature_layer: d.feature_layer,
        }
    }
}

/// Serializes network weights; values are stored as `f32`.
pub fn encode_weights(w: &ConvNetWeights) -> Vec<u8> {
    let spec = serde_json::to_vec(&SpecDto::from(&w.spec)).expect("spec serializes");
    let mut out = Vec::with_capacity(16 + spec.len() + 4 * w.num_params() + 64 * w.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&w.version.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    for t in w.params.iter().flat_map(|p| [&p.weight, &p.bias]) {
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| {
                Error::corrupt(
                    self.path,
                    format!(
                        "truncated while reading {what} at byte {} (file has {})",
                        self.pos,
                        self.data.len()
                    ),
                )
            })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Parses a weight file, checking the version, every tensor's dimensions
/// against the embedded spec and the total length.
pub fn decode_weights(data: &[u8], path: &Path) -> Result<ConvNetWeights> {
    let mut c = Cursor { data, pos: 0, path };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::corrupt(path, "bad magic, not a PPCN weight file"));
    }
    let version = c.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let spec_len = c.u32("spec length")? as usize;
    let spec_dto: SpecDto = serde_json::from_slice(c.take(spec_len, "spec")?)
        .map_err(|e| Error::corrupt(path, format!("network spec: {e}")))?;
    let spec = ConvNetSpec::from(spec_dto);
    spec.validate()?;
    let template = ConvNetWeights::zeros(spec)?;
    let mut params = Vec::with_capacity(template.params.len());
    for (i, p) in template.params.iter().enumerate() {
        let mut read_tensor = |expected: &Tensor, what: &str| -> Result<Tensor> {
            let what = format!("{what} of parameter block {i}");
            let rank = c.u32(&what)? as usize;
            if rank != expected.dims.len() {
                return Err(Error::corrupt(
                    path,
                    format!("{what}: rank {rank}, expected {}", expected.dims.len()),
                ));
            }
            let dims = (0..rank)
                .map(|_| c.u32(&what).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if dims != expected.dims {
                return Err(Error::corrupt(
                    path,
                    format!("{what}: dimensions {dims:?}, expected {:?}", expected.dims),
                ));
            }
            let raw = c.take(4 * expected.len(), &what)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect();
            Ok(Tensor { dims, data })
        };
        let weight = read_tensor(&p.weight, "weight")?;
        let bias = read_tensor(&p.bias, "bias")?;
        params.push(LayerParams { weight, bias });
    }
    if c.pos != data.len() {
        return Err(Error::corrupt(path, format!("{} trailing bytes", data.len() - c.pos)));
    }
    let w = ConvNetWeights {
        spec: template.spec,
        version,
        params,
    };
    w.validate()?;
    Ok(w)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SvmDto {
    weights: Vec<f64>,
    bias: f64,
    #[serde(rename = "C")]
    c: f64,
    fused: bool,
    score_mean: f64,
    score_std: f64,
    feature_dim: usize,
}

pub fn svm_to_json(m: &LinearSvm) -> String {
    let dto = SvmDto {
        weights: m.weights.clone(),
        bias: m.bias,
        c: m.c,
        fused: m.fused,
        score_mean: m.score_mean,
        score_std: m.score_std,
        feature_dim: m.feature_dim,
    };
    serde_json::to_string(&dto).expect("finite SVM serializes")
}

pub fn svm_from_json(text: &[u8], path: &Path) -> Result<LinearSvm> {
    let d: SvmDto = serde_json::from_slice(text).map_err(|e| Error::parse(path, e.to_string()))?;
    let m = LinearSvm {
        weights: d.weights,
        bias: d.bias,
        c: d.c,
        fused: d.fused,
        feature_dim: d.feature_dim,
        score_mean: d.score_mean,
        score_std: d.score_std,
    };
    m.validate()?;
    Ok(m)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
enum FusionDto {
    /// A missing threshold means no thresholding (`-inf`).
    Series {
        threshold: Option<f64>,
    },
    Parallel,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
enum ProposalDto {
    Sliding {
        aspect_ratio: f64,
        min_h: f64,
        max_h: f64,
        scale_step: f64,
        stride: f64,
        scale_stride: bool,
    },
    External,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleDto {
    version: u32,
    mean_alpha: f64,
    fusion: FusionDto,
    proposals: ProposalDto,
    input_size: [usize; 2],
}

fn bundle_dto(m: &ModelBundle) -> BundleDto {
    BundleDto {
        version: BUNDLE_VERSION,
        mean_alpha: m.mean_alpha,
        fusion: match m.fusion {
            FusionMode::Series { threshold } => FusionDto::Series {
                threshold: threshold.is_finite().then_some(threshold),
            },
            FusionMode::Parallel => FusionDto::Parallel,
        },
        proposals: match m.proposals {
            ProposalSource::Sliding(p) => ProposalDto::Sliding {
                aspect_ratio: p.aspect_ratio,
                min_h: p.min_h,
                max_h: p.max_h,
                scale_step: p.scale_step,
                stride: p.stride,
                scale_stride: p.scale_stride,
            },
            ProposalSource::External => ProposalDto::External,
        },
        input_size: [m.input_size.width, m.input_size.height],
    }
}

/// Writes the three bundle files. Network weights are stored as `f32`;
/// call [`ConvNetWeights::round_to_f32`] first for a bit-exact round trip.
pub fn save_bundle(m: &ModelBundle, dir: &Path) -> Result<()> {
    m.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    error::write(&dir.join(WEIGHTS_FILE), encode_weights(&m.convnet))?;
    error::write(&dir.join(SVM_FILE), svm_to_json(&m.svm))?;
    let meta = serde_json::to_string_pretty(&bundle_dto(m)).expect("bundle metadata serializes");
    error::write(&dir.join(BUNDLE_FILE), meta + "\n")
}

/// Reads a bundle and checks it for internal consistency.
pub fn load_bundle(dir: &Path) -> Result<ModelBundle> {
    let meta_path = dir.join(BUNDLE_FILE);
    let meta: BundleDto =
        serde_json::from_slice(&error::read(&meta_path)?).map_err(|e| Error::parse(&meta_path, e.to_string()))?;
    if meta.version != BUNDLE_VERSION {
        return Err(Error::Version {
            path: meta_path,
            found: meta.version,
            expected: BUNDLE_VERSION,
        });
    }
    let weights_path = dir.join(WEIGHTS_FILE);
    let convnet = decode_weights(&error::read(&weights_path)?, &weights_path)?;
    let svm_path = dir.join(SVM_FILE);
    let svm = svm_from_json(&error::read(&svm_path)?, &svm_path)?;
    let m = ModelBundle {
        convnet,
        svm,
        mean_alpha: meta.mean_alpha,
        fusion: match meta.fusion {
            FusionDto::Series { threshold } => FusionMode::Series {
                threshold: threshold.unwrap_or(f64::NEG_INFINITY),
            },
            FusionDto::Parallel => FusionMode::Parallel,
        },
        proposals: match meta.proposals {
            ProposalDto::Sliding {
                aspect_ratio,
                min_h,
                max_h,
                scale_step,
                stride,
                scale_stride,
            } => ProposalSource::Sliding(SlidingWindowParams {
                aspect_ratio,
                min_h,
                max_h,
                scale_step,
                stride,
                scale_stride,
            }),
            ProposalDto::External => ProposalSource::External,
        },
        input_size: FrameSize::new(meta.input_size[0], meta.input_size[1]),
    };
    m.validate()?;
    Ok(m)
}
