use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{ConvNetSpec, Layer, Shape};
use crate::error::{Error, Result};
use crate::image::Patch;

pub const WEIGHTS_VERSION: u32 = 1;

/// Dense tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Weight and bias of one parameterized layer. Convolutions use
/// `[out, in, k, k]`, fully-connected layers `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetWeights {
    pub spec: ConvNetSpec,
    pub version: u32,
    /// One entry per parameterized layer, in declaration order.
    pub params: Vec<LayerParams>,
}

/// Gradients share the weights' layout.
pub type Gradients = Vec<LayerParams>;

fn expected_dims(spec: &ConvNetSpec) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let shapes = spec.layer_shapes()?;
    let mut out = Vec::new();
    let mut input = spec.input;
    for (layer, shape) in spec.layers.iter().zip(&shapes) {
        match *layer {
            Layer::Conv {
                kernel, out_channels, ..
            } => out.push((vec![out_channels, input.channels, kernel, kernel], vec![out_channels])),
            Layer::FullyConnected { out: o } => out.push((vec![o, input.len()], vec![o])),
            _ => {}
        }
        input = *shape;
    }
    Ok(out)
}

impl ConvNetWeights {
    pub fn zeros(spec: ConvNetSpec) -> Result<Self> {
        let params = expected_dims(&spec)?
            .into_iter()
            .map(|(w, b)| LayerParams {
                weight: Tensor::zeros(w),
                bias: Tensor::zeros(b),
            })
            .collect();
        Ok(Self {
            spec,
            version: WEIGHTS_VERSION,
            params,
        })
    }

    /// He-normal weights (`sqrt(2 / fan_in)`), zero biases.
    pub fn he_init<R: Rng + ?Sized>(spec: ConvNetSpec, rng: &mut R) -> Result<Self> {
        let mut w = Self::zeros(spec)?;
        for p in &mut w.params {
            let fan_in: usize = p.weight.dims[1..].iter().product();
            let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in as f64))
                .map_err(|e| Error::NumericalFailure(format!("{e}")))?;
            for v in &mut p.weight.data {
                *v = normal.sample(rng);
            }
        }
        Ok(w)
    }

    pub fn seeded(spec: ConvNetSpec, seed: u64) -> Result<Self> {
        Self::he_init(spec, &mut crate::seeded_rng(seed))
    }

    /// Checks tensor shapes against the spec and that every value is finite.
    pub fn validate(&self) -> Result<()> {
        let dims = expected_dims(&self.spec)?;
        if dims.len() != self.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "spec has {} parameterized layers, weights have {}",
                dims.len(),
                self.params.len()
            )));
        }
        for (i, ((wd, bd), p)) in dims.iter().zip(&self.params).enumerate() {
            if *wd != p.weight.dims || *bd != p.bias.dims {
                return Err(Error::ShapeMismatch(format!(
                    "parameter block {i} has the wrong dimensions"
                )));
            }
            if p.weight.len() != wd.iter().product::<usize>() || p.bias.len() != bd[0] {
                return Err(Error::ShapeMismatch(format!(
                    "parameter block {i} has the wrong length"
                )));
            }
        }
        if self.iter_values().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn iter_values(&self) -> impl Iterator<Item = &f64> {
        self.params
            .iter()
            .flat_map(|p| p.weight.data.iter().chain(&p.bias.data))
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    /// Rounds every parameter to the nearest `f32`, the precision used on disk.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            for v in p.weight.data.iter_mut().chain(p.bias.data.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.params
            .iter()
            .map(|p| LayerParams {
                weight: Tensor::zeros(p.weight.dims.clone()),
                bias: Tensor::zeros(p.bias.dims.clone()),
            })
            .collect()
    }
}

/// Converts an interleaved patch to a channels-first network input, mapping
/// intensities `[0, 255]` to `[-0.5, 0.5]`.
pub fn patch_to_input(patch: &Patch, spec: &ConvNetSpec) -> Result<Vec<f64>> {
    let s = spec.input;
    if patch.width() != s.width || patch.height() != s.height || patch.channels() != s.channels {
        return Err(Error::ShapeMismatch(format!(
            "patch {}x{}x{} does not match network input {}x{}x{}",
            patch.height(),
            patch.width(),
            patch.channels(),
            s.height,
            s.width,
            s.channels
        )));
    }
    let mut out = vec![0.0; s.len()];
    let plane = s.height * s.width;
    for (i, px) in patch.pixels().chunks_exact(s.channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            out[c * plane + i] = v as f64 / 255.0 - 0.5;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub features: Vec<f64>,
    /// `[background, pedestrian]`.
    pub probabilities: [f64; 2],
}

impl ForwardOutput {
    pub fn pedestrian_probability(&self) -> f64 {
        self.probabilities[1]
    }
}

/// Every layer's output plus the bookkeeping backpropagation needs.
#[derive(Debug, Clone)]
pub struct Activations {
    pub input: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
    /// For each pooling layer, the flat input index that won each output.
    pool_argmax: Vec<Vec<usize>>,
    /// Pre-softmax scores.
    pub logits: [f64; 2],
}

/// Unrolls receptive fields into a `(in_channels * k * k) x (out_h * out_w)`
/// row-major matrix.
fn im2col(input: &[f64], ins: Shape, outs: Shape, k: usize, stride: usize) -> Vec<f64> {
    let (ih, iw) = (ins.height, ins.width);
    let (oh, ow) = (outs.height, outs.width);
    let plen = oh * ow;
    let mut cols = vec![0.0; ins.channels * k * k * plen];
    for ic in 0..ins.channels {
        let src = &input[ic * ih * iw..(ic + 1) * ih * iw];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ic * k + ky) * k + kx;
                let dst = &mut cols[r * plen..(r + 1) * plen];
                for oy in 0..oh {
                    let row = &src[(oy * stride + ky) * iw + kx..];
                    let d = &mut dst[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        d.copy_from_slice(&row[..ow]);
                    } else {
                        for (ox, v) in d.iter_mut().enumerate() {
                            *v = row[ox * stride];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Inverse scatter of [`im2col`]: accumulates column gradients into the input.
fn col2im(cols: &[f64], ins: Shape, outs: Shape, k: usize, stride: usize, grad_in: &mut [f64]) {
    let (ih, iw) = (ins.height, ins.width);
    let (oh, ow) = (outs.height, outs.width);
    let plen = oh * ow;
    for ic in 0..ins.channels {
        let dst = &mut grad_in[ic * ih * iw..(ic + 1) * ih * iw];
        for ky in 0..k {
            for kx in 0..k {
                let r = (ic * k + ky) * k + kx;
                let src = &cols[r * plen..(r + 1) * plen];
                for oy in 0..oh {
                    let s = &src[oy * ow..(oy + 1) * ow];
                    let base = (oy * stride + ky) * iw + kx;
                    if stride == 1 {
                        for (d, v) in dst[base..base + ow].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (ox, v) in s.iter().enumerate() {
                            dst[base + ox * stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c (m x n) = beta * c + a (m x k) . b (k x n)`, each operand given with
/// explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the assertion above bounds every index the kernel touches for
    // the dense layouts used by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_forward(input: &[f64], ins: Shape, outs: Shape, k: usize, stride: usize, p: &LayerParams) -> Vec<f64> {
    let cols = im2col(input, ins, outs, k, stride);
    let plen = outs.height * outs.width;
    let rows = ins.channels * k * k;
    let mut out = vec![0.0; outs.len()];
    for oc in 0..outs.channels {
        out[oc * plen..(oc + 1) * plen]
            .iter_mut()
            .for_each(|v| *v = p.bias.data[oc]);
    }
    let (r, pl) = (rows as isize, plen as isize);
    gemm(
        outs.channels,
        rows,
        plen,
        &p.weight.data,
        (r, 1),
        &cols,
        (pl, 1),
        1.0,
        &mut out,
    );
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    grad_out: &[f64],
    ins: Shape,
    outs: Shape,
    k: usize,
    stride: usize,
    p: &LayerParams,
    g: &mut LayerParams,
    grad_in: Option<&mut [f64]>,
) {
    let cols = im2col(input, ins, outs, k, stride);
    let plen = outs.height * outs.width;
    let rows = ins.channels * k * k;
    let (r, pl) = (rows as isize, plen as isize);
    for oc in 0..outs.channels {
        g.bias.data[oc] += grad_out[oc * plen..(oc + 1) * plen].iter().sum::<f64>();
    }
    // dW (oc x rows) += dY (oc x plen) . cols^T
    gemm(
        outs.channels,
        plen,
        rows,
        grad_out,
        (pl, 1),
        &cols,
        (1, pl),
        1.0,
        &mut g.weight.data,
    );
    if let Some(gi) = grad_in {
        // dcols (rows x plen) = W^T . dY
        let mut grad_cols = vec![0.0; cols.len()];
        gemm(
            rows,
            outs.channels,
            plen,
            &p.weight.data,
            (1, r),
            grad_out,
            (pl, 1),
            0.0,
            &mut grad_cols,
        );
        col2im(&grad_cols, ins, outs, k, stride, gi);
    }
}

fn pool_forward(input: &[f64], ins: Shape, outs: Shape, k: usize, stride: usize) -> (Vec<f64>, Vec<usize>) {
    let mut out = vec![0.0; outs.len()];
    let mut arg = vec![0usize; outs.len()];
    for c in 0..outs.channels {
        for oy in 0..outs.height {
            for ox in 0..outs.width {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = (c * ins.height + oy * stride + ky) * ins.width + ox * stride + kx;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * outs.height + oy) * outs.width + ox;
                out[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    (out, arg)
}

fn fc_forward(input: &[f64], p: &LayerParams) -> Vec<f64> {
    let n_in = input.len();
    p.bias
        .data
        .iter()
        .enumerate()
        .map(|(o, b)| {
            let row = &p.weight.data[o * n_in..(o + 1) * n_in];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}

fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = libm::exp(z[0] - m);
    let e1 = libm::exp(z[1] - m);
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Runs the network, keeping every intermediate output. Stops after layer
/// `until` when given.
pub fn forward_activations(w: &ConvNetWeights, input: Vec<f64>, until: Option<usize>) -> Result<Activations> {
    let shapes = w.spec.layer_shapes()?;
    if input.len() != w.spec.input.len() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} values, network expects {}",
            input.len(),
            w.spec.input.len()
        )));
    }
    let last = until.unwrap_or(w.spec.layers.len() - 1);
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(last + 1);
    let mut pool_argmax = Vec::new();
    let mut logits = [0.0; 2];
    let mut param_idx = 0;
    let mut ins = w.spec.input;
    for (i, layer) in w.spec.layers.iter().enumerate().take(last + 1) {
        let x: &[f64] = if i == 0 { &input } else { &outputs[i - 1] };
        let outs = shapes[i];
        let y = match *layer {
            Layer::Conv { kernel, stride, .. } => {
                let y = conv_forward(x, ins, outs, kernel, stride, &w.params[param_idx]);
                param_idx += 1;
                y
            }
            Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            Layer::MaxPool { window, stride } => {
                let (y, arg) = pool_forward(x, ins, outs, window, stride);
                pool_argmax.push(arg);
                y
            }
            Layer::FullyConnected { .. } => {
                let y = fc_forward(x, &w.params[param_idx]);
                param_idx += 1;
                y
            }
            Layer::Softmax => {
                logits = [x[0], x[1]];
                softmax2(logits).to_vec()
            }
        };
        outputs.push(y);
        ins = outs;
    }
    Ok(Activations {
        input,
        outputs,
        pool_argmax,
        logits,
    })
}

/// Class probabilities and the configured layer's activations for one patch.
pub fn forward(w: &ConvNetWeights, patch: &Patch) -> Result<ForwardOutput> {
    let acts = forward_activations(w, patch_to_input(patch, &w.spec)?, None)?;
    let probs = acts.outputs.last().expect("non-empty network");
    let probabilities = [probs[0], probs[1]];
    if !(probabilities[0].is_finite() && probabilities[1].is_finite()) {
        return Err(Error::NumericalFailure("non-finite class probability".into()));
    }
    Ok(ForwardOutput {
        features: acts.outputs[w.spec.feature_layer].clone(),
        probabilities,
    })
}

/// Feature vector only; skips the layers after the feature layer.
pub fn extract_features(w: &ConvNetWeights, patch: &Patch) -> Result<Vec<f64>> {
    let f = w.spec.feature_layer;
    let mut acts = forward_activations(w, patch_to_input(patch, &w.spec)?, Some(f))?;
    Ok(acts.outputs.swap_remove(f))
}

/// Negative log-likelihood of `label` (1 = pedestrian) from the logits.
pub fn nll(logits: [f64; 2], label: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + libm::log(libm::exp(logits[0] - m) + libm::exp(logits[1] - m));
    lse - logits[label]
}

/// Accumulates the gradient of the sample's NLL into `grads`.
fn backward(w: &ConvNetWeights, acts: &Activations, label: usize, grads: &mut Gradients) -> Result<()> {
    let shapes = w.spec.layer_shapes()?;
    let n = w.spec.layers.len();
    let probs = &acts.outputs[n - 1];
    // d(NLL)/d(logits) = p - onehot
    let mut grad: Vec<f64> = vec![
        probs[0] - (label == 0) as u8 as f64,
        probs[1] - (label == 1) as u8 as f64,
    ];
    let mut param_idx = w.params.len();
    let mut pool_idx = acts.pool_argmax.len();
    for i in (0..n - 1).rev() {
        let layer = w.spec.layers[i];
        let x: &[f64] = if i == 0 { &acts.input } else { &acts.outputs[i - 1] };
        let ins = if i == 0 { w.spec.input } else { shapes[i - 1] };
        let outs = shapes[i];
        let need_input_grad = i > 0;
        grad = match layer {
            Layer::Softmax => unreachable!("softmax is last"),
            Layer::Relu => grad
                .iter()
                .zip(&acts.outputs[i])
                .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                .collect(),
            Layer::MaxPool { .. } => {
                pool_idx -= 1;
                let mut gi = vec![0.0; ins.len()];
                for (o, g) in grad.iter().enumerate() {
                    gi[acts.pool_argmax[pool_idx][o]] += g;
                }
                gi
            }
            Layer::FullyConnected { .. } => {
                param_idx -= 1;
                let p = &w.params[param_idx];
                let g = &mut grads[param_idx];
                let n_in = x.len();
                let mut gi = vec![0.0; if need_input_grad { n_in } else { 0 }];
                for (o, go) in grad.iter().enumerate() {
                    g.bias.data[o] += go;
                    let row = &p.weight.data[o * n_in..(o + 1) * n_in];
                    let grow = &mut g.weight.data[o * n_in..(o + 1) * n_in];
                    for (gw, xv) in grow.iter_mut().zip(x) {
                        *gw += go * xv;
                    }
                    if need_input_grad {
                        for (d, wv) in gi.iter_mut().zip(row) {
                            *d += go * wv;
                        }
                    }
                }
                gi
            }
            Layer::Conv { kernel, stride, .. } => {
                param_idx -= 1;
                let mut gi = vec![0.0; if need_input_grad { ins.len() } else { 0 }];
                conv_backward(
                    x,
                    &grad,
                    ins,
                    outs,
                    kernel,
                    stride,
                    &w.params[param_idx],
                    &mut grads[param_idx],
                    need_input_grad.then_some(gi.as_mut_slice()),
                );
                gi
            }
        };
    }
    Ok(())
}

/// Mean negative log-likelihood over `batch` (label 1 = pedestrian) and its
/// exact gradient with respect to every parameter.
pub fn loss_and_gradients(w: &ConvNetWeights, batch: &[(&Patch, usize)]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::OutOfRange("empty batch".into()));
    }
    let mut grads = w.zero_gradients();
    let mut total = 0.0;
    for (patch, label) in batch {
        if *label > 1 {
            return Err(Error::OutOfRange(format!("label {label} is not 0 or 1")));
        }
        let acts = forward_activations(w, patch_to_input(patch, &w.spec)?, None)?;
        total += nll(acts.logits, *label);
        backward(w, &acts, *label, &mut grads)?;
    }
    let scale = 1.0 / batch.len() as f64;
    for g in &mut grads {
        g.weight
            .data
            .iter_mut()
            .chain(g.bias.data.iter_mut())
            .for_each(|v| *v *= scale);
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::NumericalFailure(format!("loss became {loss}")));
    }
    Ok((loss, grads))
}

/// Mean negative log-likelihood without gradients.
pub fn mean_loss(w: &ConvNetWeights, samples: &[(&Patch, usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::OutOfRange("no samples".into()));
    }
    let mut total = 0.0;
    for (patch, label) in samples {
        let acts = forward_activations(w, patch_to_input(patch, &w.spec)?, None)?;
        total += nll(acts.logits, *label);
    }
    Ok(total / samples.len() as f64)
}
