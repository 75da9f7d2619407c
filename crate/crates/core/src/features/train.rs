use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::net::{loss_and_gradients, mean_loss, ConvNetWeights, Gradients};
use crate::error::{Error, Result};
use crate::image::Patch;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub patch: Patch,
    pub pedestrian: bool,
    /// Cross-validation fold (session) this sample belongs to.
    pub fold: usize,
}

impl LabeledPatch {
    pub fn label(&self) -> usize {
        self.pedestrian as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Negatives per positive in every batch.
    pub neg_pos_ratio: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub folds: usize,
    /// Width of the centered moving average applied to validation curves.
    pub smoothing_window: usize,
    /// Iterations between validation-loss evaluations during cross-validation.
    pub validation_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 12,
            neg_pos_ratio: 5.0,
            max_iterations: 3000,
            seed: 0,
            folds: 6,
            smoothing_window: 5,
            validation_interval: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.batch_size >= 2
            && self.neg_pos_ratio > 0.0
            && self.neg_pos_ratio.is_finite()
            && self.max_iterations >= 1
            && self.smoothing_window >= 1
            && self.validation_interval >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfRange(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Draws class-balanced batches: each class is visited in reshuffled passes,
/// and the number of positives per batch is chosen so that the running
/// negative:positive ratio tracks the configured one.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    positives: ClassCycle,
    negatives: ClassCycle,
    batch_size: usize,
    pos_fraction: f64,
    batches: usize,
    positives_drawn: usize,
}

#[derive(Debug, Clone)]
struct ClassCycle {
    members: Vec<usize>,
    cursor: usize,
}

impl ClassCycle {
    fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.cursor == 0 {
            self.members.shuffle(rng);
        }
        let v = self.members[self.cursor];
        self.cursor = (self.cursor + 1) % self.members.len();
        v
    }
}

impl BatchSampler {
    pub fn new(labels: &[bool], batch_size: usize, neg_pos_ratio: f64) -> Result<Self> {
        let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
        let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::SingleClass("training data needs both classes".into()));
        }
        Ok(Self {
            positives: ClassCycle {
                members: pos,
                cursor: 0,
            },
            negatives: ClassCycle {
                members: neg,
                cursor: 0,
            },
            batch_size,
            pos_fraction: 1.0 / (1.0 + neg_pos_ratio),
            batches: 0,
            positives_drawn: 0,
        })
    }

    /// Indices of the next batch, positives first.
    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        self.batches += 1;
        let target = libm::round(self.batches as f64 * self.batch_size as f64 * self.pos_fraction) as usize;
        let n_pos = target
            .saturating_sub(self.positives_drawn)
            .clamp(1, self.batch_size - 1);
        self.positives_drawn += n_pos;
        let mut out = Vec::with_capacity(self.batch_size);
        for _ in 0..n_pos {
            out.push(self.positives.next(rng));
        }
        for _ in n_pos..self.batch_size {
            out.push(self.negatives.next(rng));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: ConvNetWeights,
    /// Batch loss at every iteration, before that iteration's update.
    pub trace: Vec<f64>,
    /// `(iteration, loss)` on the validation set, when one was given.
    pub validation: Vec<(usize, f64)>,
}

fn apply_momentum(w: &mut ConvNetWeights, velocity: &mut Gradients, grads: &Gradients, lr: f64, momentum: f64) {
    for ((p, v), g) in w.params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        let pairs = p
            .weight
            .data
            .iter_mut()
            .zip(v.weight.data.iter_mut())
            .zip(&g.weight.data)
            .chain(p.bias.data.iter_mut().zip(v.bias.data.iter_mut()).zip(&g.bias.data));
        for ((pv, vv), gv) in pairs {
            *vv = momentum * *vv - lr * gv;
            *pv += *vv;
        }
    }
}

/// Momentum gradient descent over ratio-balanced batches.
pub fn train(w: &ConvNetWeights, data: &[LabeledPatch], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let refs: Vec<&LabeledPatch> = data.iter().collect();
    train_with_validation(w, &refs, &[], cfg)
}

/// Like [`train`], additionally evaluating the mean loss on `validation`
/// every `cfg.validation_interval` iterations and after the last one.
pub fn train_with_validation(
    w: &ConvNetWeights,
    data: &[&LabeledPatch],
    validation: &[&LabeledPatch],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    w.validate()?;
    let labels: Vec<bool> = data.iter().map(|s| s.pedestrian).collect();
    let mut sampler = BatchSampler::new(&labels, cfg.batch_size, cfg.neg_pos_ratio)?;
    let mut rng = crate::seeded_rng(cfg.seed);
    let mut weights = w.clone();
    let mut velocity = weights.zero_gradients();
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    let mut curve = Vec::new();
    let val: Vec<(&Patch, usize)> = validation.iter().map(|s| (&s.patch, s.label())).collect();

    for it in 1..=cfg.max_iterations {
        let batch: Vec<(&Patch, usize)> = sampler
            .next_batch(&mut rng)
            .into_iter()
            .map(|i| (&data[i].patch, data[i].label()))
            .collect();
        let (loss, grads) = loss_and_gradients(&weights, &batch).map_err(|e| match e {
            Error::NumericalFailure(m) => Error::NumericalFailure(format!("diverged at iteration {it}: {m}")),
            other => other,
        })?;
        trace.push(loss);
        apply_momentum(&mut weights, &mut velocity, &grads, cfg.learning_rate, cfg.momentum);
        if !val.is_empty() && (it % cfg.validation_interval == 0 || it == cfg.max_iterations) {
            let l = mean_loss(&weights, &val)?;
            if !l.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "validation loss {l} at iteration {it}"
                )));
            }
            curve.push((it, l));
        }
    }
    if weights.iter_values().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite weights after training".into()));
    }
    Ok(TrainOutcome {
        weights,
        trace,
        validation: curve,
    })
}

/// Centered moving average; windows are truncated at the ends.
pub fn smooth_curve(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let left = window / 2;
    let right = window - 1 - left;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(left);
            let hi = (i + right).min(values.len() - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Earliest iteration at which the smoothed curve reaches its minimum.
pub fn select_stop_iteration(curve: &[(usize, f64)], window: usize) -> Option<usize> {
    let values: Vec<f64> = curve.iter().map(|(_, v)| *v).collect();
    let smoothed = smooth_curve(&values, window);
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in smoothed.iter().enumerate() {
        if best.is_none_or(|(_, b)| *v < b) {
            best = Some((i, *v));
        }
    }
    best.map(|(i, _)| curve[i].0)
}

/// One held-out training run: given the training and validation indices,
/// produce the validation-loss curve as `(iteration, loss)` points.
pub trait FoldRunner {
    fn run_fold(&mut self, fold: usize, train: &[usize], validation: &[usize]) -> Result<Vec<(usize, f64)>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub stop_iteration: usize,
    /// Validation loss averaged over folds.
    pub curve: Vec<(usize, f64)>,
    pub smoothed: Vec<f64>,
    pub runs: usize,
}

/// Runs one training per fold with that fold held out, averages the
/// validation curves point-wise and picks the smoothed minimum.
pub fn crossval_with<F: FoldRunner>(
    fold_of: &[usize],
    labels: &[bool],
    folds: usize,
    smoothing_window: usize,
    runner: &mut F,
) -> Result<CrossValidation> {
    if folds < 2 {
        return Err(Error::OutOfRange(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    if fold_of.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: fold_of.len(),
            actual: labels.len(),
        });
    }
    if let Some(bad) = fold_of.iter().find(|&&f| f >= folds) {
        return Err(Error::OutOfRange(format!("fold index {bad} with {folds} folds")));
    }
    let mut splits = Vec::with_capacity(folds);
    for k in 0..folds {
        let (val, tr): (Vec<usize>, Vec<usize>) = (0..fold_of.len()).partition(|&i| fold_of[i] == k);
        for (name, set) in [("validation", &val), ("training", &tr)] {
            let pos = set.iter().filter(|&&i| labels[i]).count();
            if pos == 0 || pos == set.len() {
                return Err(Error::SingleClass(format!("fold {k}: {name} part has a single class")));
            }
        }
        splits.push((tr, val));
    }

    let mut sum: Vec<(usize, f64)> = Vec::new();
    let mut runs = 0;
    for (k, (tr, val)) in splits.iter().enumerate() {
        let curve = runner.run_fold(k, tr, val)?;
        runs += 1;
        if k == 0 {
            sum = curve;
        } else {
            sum.truncate(curve.len());
            for (acc, (it, v)) in sum.iter_mut().zip(&curve) {
                if acc.0 != *it {
                    return Err(Error::ShapeMismatch(format!(
                        "fold {k} reports iteration {it} where earlier folds report {}",
                        acc.0
                    )));
                }
                acc.1 += v;
            }
        }
    }
    if sum.is_empty() {
        return Err(Error::OutOfRange("folds produced empty validation curves".into()));
    }
    let curve: Vec<(usize, f64)> = sum.into_iter().map(|(it, v)| (it, v / runs as f64)).collect();
    let values: Vec<f64> = curve.iter().map(|(_, v)| *v).collect();
    let smoothed = smooth_curve(&values, smoothing_window);
    let stop_iteration = select_stop_iteration(&curve, smoothing_window).expect("non-empty curve");
    Ok(CrossValidation {
        stop_iteration,
        curve,
        smoothed,
        runs,
    })
}

/// Trains the network once per fold starting from the same initial weights.
pub struct ConvNetFoldRunner<'a> {
    pub initial: &'a ConvNetWeights,
    pub data: &'a [LabeledPatch],
    pub cfg: &'a TrainConfig,
}

impl FoldRunner for ConvNetFoldRunner<'_> {
    fn run_fold(&mut self, _fold: usize, train: &[usize], validation: &[usize]) -> Result<Vec<(usize, f64)>> {
        let tr: Vec<&LabeledPatch> = train.iter().map(|&i| &self.data[i]).collect();
        let val: Vec<&LabeledPatch> = validation.iter().map(|&i| &self.data[i]).collect();
        Ok(train_with_validation(self.initial, &tr, &val, self.cfg)?.validation)
    }
}

/// Selects the stopping iteration by k-fold cross-validation over the
/// samples' fold assignments.
pub fn crossval_stop_iteration(
    initial: &ConvNetWeights,
    data: &[LabeledPatch],
    cfg: &TrainConfig,
) -> Result<CrossValidation> {
    cfg.validate()?;
    let fold_of: Vec<usize> = data.iter().map(|s| s.fold).collect();
    let labels: Vec<bool> = data.iter().map(|s| s.pedestrian).collect();
    let mut runner = ConvNetFoldRunner { initial, data, cfg };
    crossval_with(&fold_of, &labels, cfg.folds, cfg.smoothing_window, &mut runner)
}

/// Retrains on the whole set for exactly `stop_iteration` iterations.
pub fn finetune_full(
    initial: &ConvNetWeights,
    data: &[LabeledPatch],
    stop_iteration: usize,
    cfg: &TrainConfig,
) -> Result<ConvNetWeights> {
    if stop_iteration == 0 {
        return Err(Error::OutOfRange("stop iteration must be at least 1".into()));
    }
    let cfg = TrainConfig {
        max_iterations: stop_iteration,
        ..cfg.clone()
    };
    Ok(train(initial, data, &cfg)?.weights)
}

/// Fraction of samples whose most probable class matches the label.
pub fn accuracy(w: &ConvNetWeights, data: &[LabeledPatch]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for s in data {
        let out = super::net::forward(w, &s.patch)?;
        if (out.probabilities[1] > out.probabilities[0]) == s.pedestrian {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Fold per sample from a session id per sample: sessions are mapped to
/// folds round-robin in ascending order.
pub fn session_folds(sessions: &[u32], folds: usize) -> Vec<usize> {
    let mut distinct: Vec<u32> = sessions.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let folds = folds.max(1);
    if distinct.len() >= folds {
        sessions
            .iter()
            .map(|s| distinct.binary_search(s).expect("present") % folds)
            .collect()
    } else {
        // Not enough sessions: interleave samples instead.
        (0..sessions.len()).map(|i| i % folds).collect()
    }
}
