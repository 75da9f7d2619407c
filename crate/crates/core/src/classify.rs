//! Linear SVM over convolutional features, optionally fused with the
//! proposal score.
//!
//! Training minimizes `0.5 * |w|^2 + C * sum(max(0, 1 - y (w.x + b)))`.
//! Two solvers are available:
//!
//! * [`SvmSolver::Dual`] (default): sequential minimal optimization on the
//!   dual with second-order working-set selection.
//! * [`SvmSolver::Subgradient`]: stochastic subgradient steps with a `1/t`
//!   schedule over seeded epoch permutations, suffix-averaged. It is cheap
//!   per step but converges slowly when C is large.
//!
//! Either way the bias is finally set to its exact minimizer for the learned
//! weights (the objective is piecewise linear in the bias).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};

pub const DEFAULT_C: f64 = 1e-2;
const MIN_STEPS_PER_INV_LAMBDA: f64 = 200.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    /// The last weight applies to the standardized proposal score.
    pub fused: bool,
    /// Length of the convolutional feature vector (without the fused score).
    pub feature_dim: usize,
    pub score_mean: f64,
    pub score_std: f64,
}

/// How proposal scores take part in classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionMode {
    /// Proposals scoring at or below the threshold never reach the network.
    Series { threshold: f64 },
    /// The proposal score is appended to the network features.
    Parallel,
}

impl FusionMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            FusionMode::Series { threshold } if threshold.is_nan() || *threshold == f64::INFINITY => {
                Err(Error::OutOfRange(format!("series threshold {threshold}")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_parallel(&self) -> bool {
        matches!(self, FusionMode::Parallel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SvmSolver {
    #[default]
    Dual,
    Subgradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmTrainConfig {
    pub c: f64,
    pub solver: SvmSolver,
    /// Subgradient solver: minimum number of passes over the data.
    pub epochs: usize,
    /// Subgradient solver: permutation seed.
    pub seed: u64,
    /// Dual solver: stop once the maximal KKT violation falls below this.
    pub tolerance: f64,
}

impl Default for SvmTrainConfig {
    fn default() -> Self {
        Self {
            c: DEFAULT_C,
            solver: SvmSolver::Dual,
            epochs: 300,
            seed: 0,
            tolerance: 1e-6,
        }
    }
}

impl LinearSvm {
    pub fn expected_len(&self) -> usize {
        self.feature_dim + self.fused as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.expected_len() {
            return Err(Error::DimensionMismatch {
                expected: self.expected_len(),
                actual: self.weights.len(),
            });
        }
        let finite = self.weights.iter().all(|v| v.is_finite())
            && self.bias.is_finite()
            && self.c.is_finite()
            && self.score_mean.is_finite()
            && self.score_std.is_finite()
            && self.score_std > 0.0;
        if !finite {
            return Err(Error::NumericalFailure("non-finite SVM parameter".into()));
        }
        Ok(())
    }

    /// Score of a region given its network features and proposal score.
    pub fn score_region(&self, features: &[f64], proposal_score: f64) -> Result<f64> {
        if self.fused {
            svm_score(
                self,
                &fuse_features(features, proposal_score, self.score_mean, self.score_std),
            )
        } else {
            svm_score(self, features)
        }
    }
}

/// `w . x + b`.
pub fn svm_score(m: &LinearSvm, x: &[f64]) -> Result<f64> {
    if x.len() != m.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: m.weights.len(),
            actual: x.len(),
        });
    }
    Ok(m.bias + dot(&m.weights, x))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Appends the standardized proposal score to the feature vector.
pub fn fuse_features(cnn_features: &[f64], proposal_score: f64, mean: f64, std: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(cnn_features.len() + 1);
    out.extend_from_slice(cnn_features);
    out.push((proposal_score - mean) / std);
    out
}

/// Mean and population standard deviation of the training proposal scores;
/// a zero deviation is replaced by 1.
pub fn score_moments(scores: &[f64]) -> (f64, f64) {
    if scores.is_empty() {
        return (0.0, 1.0);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    let std = libm::sqrt(var);
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

/// Primal objective value.
pub fn svm_objective(w: &[f64], b: f64, c: f64, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
        .sum();
    0.5 * dot(w, w) + c * hinge
}

/// Exact minimizer over `b` of `sum(max(0, 1 - y (s + b)))` for fixed
/// margins `s`; the midpoint of the optimal segment when it is flat.
fn optimal_bias(scores: &[f64], ys: &[f64]) -> f64 {
    // Positive i is active while b < 1 - s_i; negative j while b > -1 - s_j.
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (s, y) in scores.iter().zip(ys) {
        if *y > 0.0 {
            pos.push(1.0 - s);
        } else {
            neg.push(-1.0 - s);
        }
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    // Right derivative at b: -#(pos thresholds > b) + #(neg thresholds <= b).
    let right_slope = |b: f64| -> i64 {
        let pos_above = pos.len() - pos.partition_point(|t| *t <= b);
        let neg_at_or_below = neg.partition_point(|t| *t <= b);
        neg_at_or_below as i64 - pos_above as i64
    };
    let first = candidates.iter().position(|&b| right_slope(b) >= 0);
    let Some(i) = first else {
        return candidates.last().copied().unwrap_or(0.0);
    };
    let lo = candidates[i];
    if right_slope(lo) > 0 {
        return lo;
    }
    // Flat to the right: the segment ends at the next breakpoint after
    // which the objective rises.
    let hi = candidates[i + 1..]
        .iter()
        .copied()
        .find(|&b| right_slope(b) > 0)
        .unwrap_or(lo);
    0.5 * (lo + hi)
}

/// Trains a linear SVM on `features` with labels `+1` / `-1`.
pub fn train_svm(features: &[Vec<f64>], labels: &[f64], cfg: &SvmTrainConfig) -> Result<LinearSvm> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: labels.len(),
        });
    }
    if !(cfg.c >= 0.0 && cfg.c.is_finite()) {
        return Err(Error::OutOfRange(format!("C = {}", cfg.c)));
    }
    let Some(dim) = features.first().map(Vec::len) else {
        return Err(Error::SingleClass("no training samples".into()));
    };
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    if labels.iter().any(|y| *y != 1.0 && *y != -1.0) {
        return Err(Error::OutOfRange("labels must be +1 or -1".into()));
    }
    let n_pos = labels.iter().filter(|y| **y > 0.0).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass("SVM training needs both classes".into()));
    }

    let mut model = LinearSvm {
        weights: vec![0.0; dim],
        bias: 0.0,
        c: cfg.c,
        fused: false,
        feature_dim: dim,
        score_mean: 0.0,
        score_std: 1.0,
    };
    if cfg.c == 0.0 {
        return Ok(model);
    }

    let weights = match cfg.solver {
        SvmSolver::Dual => dual_weights(features, labels, cfg.c, cfg.tolerance),
        SvmSolver::Subgradient => subgradient_weights(features, labels, cfg),
    };
    let margins: Vec<f64> = features.iter().map(|x| dot(&weights, x)).collect();
    model.bias = optimal_bias(&margins, labels);
    model.weights = weights;
    if !svm_objective(&model.weights, model.bias, cfg.c, features, labels).is_finite() {
        return Err(Error::NumericalFailure("SVM objective is not finite".into()));
    }
    Ok(model)
}

/// SMO on `min 0.5 a'Qa - sum(a)` s.t. `y'a = 0`, `0 <= a <= C`, with
/// `Q_ij = y_i y_j x_i.x_j`. Returns `w = sum(a_i y_i x_i)`.
fn dual_weights(xs: &[Vec<f64>], ys: &[f64], c: f64, tol: f64) -> Vec<f64> {
    const TAU: f64 = 1e-12;
    let n = xs.len();
    let dim = xs[0].len();
    let sq: Vec<f64> = xs.iter().map(|x| dot(x, x)).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    // Gradient y_t (w.x_t) - 1.
    let mut grad = vec![-1.0; n];
    let mut ki = vec![0.0; n];
    let max_iter = 100_000 + 50 * n;
    let up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);

    for _ in 0..max_iter {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        for t in 0..n {
            let v = -ys[t] * grad[t];
            if up(alpha[t], ys[t]) && v > gmax {
                gmax = v;
                i = t;
            }
        }
        if i == usize::MAX {
            break;
        }
        for (k, x) in ki.iter_mut().zip(xs) {
            *k = dot(&xs[i], x);
        }
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], ys[t]) {
                continue;
            }
            let v = -ys[t] * grad[t];
            gmin = gmin.min(v);
            let b = gmax - v;
            if b > 0.0 {
                let a = (sq[i] + sq[t] - 2.0 * ki[t]).max(TAU);
                let gain = -b * b / a;
                if gain < best {
                    best = gain;
                    j = t;
                }
            }
        }
        if j == usize::MAX || gmax - gmin < tol {
            break;
        }
        // Step s along a_i += y_i s, a_j -= y_j s.
        let a = (sq[i] + sq[j] - 2.0 * ki[j]).max(TAU);
        let room_i = if ys[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let room_j = if ys[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        let s = ((gmax + ys[j] * grad[j]) / a).min(room_i).min(room_j);
        if s <= 0.0 {
            break;
        }
        alpha[i] = (alpha[i] + ys[i] * s).clamp(0.0, c);
        alpha[j] = (alpha[j] - ys[j] * s).clamp(0.0, c);
        // w changes by s (x_i - x_j).
        for ((wv, xi), xj) in w.iter_mut().zip(&xs[i]).zip(&xs[j]) {
            *wv += s * (xi - xj);
        }
        for t in 0..n {
            grad[t] += ys[t] * s * (ki[t] - dot(&xs[j], &xs[t]));
        }
    }
    w
}

/// Suffix-averaged stochastic subgradient descent on the scaled objective
/// `lambda/2 |w|^2 + mean hinge`, `lambda = 1 / (C n)`.
fn subgradient_weights(features: &[Vec<f64>], labels: &[f64], cfg: &SvmTrainConfig) -> Vec<f64> {
    let n = features.len();
    let dim = features[0].len();
    let lambda = 1.0 / (cfg.c * n as f64);
    let radius = 1.0 / libm::sqrt(lambda);
    let mut rng = crate::seeded_rng(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut avg = vec![0.0; dim];
    let mut averaged = 0usize;
    // Small lambda (large C) slows the 1/t schedule down; give it a budget
    // proportional to 1/lambda.
    let min_steps = libm::ceil(MIN_STEPS_PER_INV_LAMBDA / lambda) as usize;
    let epochs = cfg.epochs.max(1).max(min_steps.div_ceil(n));
    let total = epochs * n;
    let mut t = 0usize;
    let mut margins = vec![0.0; n];

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &features[i];
            let y = labels[i];
            let active = y * (dot(&w, x) + b) < 1.0;
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if active {
                for (wv, xv) in w.iter_mut().zip(x) {
                    *wv += eta * y * xv;
                }
            }
            let norm = libm::sqrt(dot(&w, &w));
            if norm > radius {
                w.iter_mut().for_each(|v| *v *= radius / norm);
            }
            if 2 * t > total {
                averaged += 1;
                let k = averaged as f64;
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += (v - *a) / k;
                }
            }
        }
        for (m, x) in margins.iter_mut().zip(features) {
            *m = dot(&w, x);
        }
        b = optimal_bias(&margins, labels);
    }

    // Whichever of the averaged and last iterate scores better.
    let score = |cand: &[f64]| {
        let m: Vec<f64> = features.iter().map(|x| dot(cand, x)).collect();
        svm_objective(cand, optimal_bias(&m, labels), cfg.c, features, labels)
    };
    if score(&w) < score(&avg) {
        w
    } else {
        avg
    }
}

/// Trains on fused features; proposal scores are standardized with the
/// training-set moments, which are stored in the model.
pub fn train_fused_svm(
    features: &[Vec<f64>],
    proposal_scores: &[f64],
    labels: &[f64],
    cfg: &SvmTrainConfig,
) -> Result<LinearSvm> {
    if features.len() != proposal_scores.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: proposal_scores.len(),
        });
    }
    let (mean, std) = score_moments(proposal_scores);
    let fused: Vec<Vec<f64>> = features
        .iter()
        .zip(proposal_scores)
        .map(|(f, s)| fuse_features(f, *s, mean, std))
        .collect();
    let mut m = train_svm(&fused, labels, cfg)?;
    m.fused = true;
    m.feature_dim = m.weights.len() - 1;
    m.score_mean = mean;
    m.score_std = std;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn hand(w: Vec<f64>, b: f64) -> LinearSvm {
        let d = w.len();
        LinearSvm {
            weights: w,
            bias: b,
            c: DEFAULT_C,
            fused: false,
            feature_dim: d,
            score_mean: 0.0,
            score_std: 1.0,
        }
    }

    #[test]
    fn scoring() {
        let m = hand(vec![1.0, 2.0], -1.0);
        assert_eq!(svm_score(&m, &[3.0, 4.0]).unwrap(), 10.0);
        assert_eq!(svm_score(&m, &[0.0, 0.0]).unwrap(), -1.0);
        let x = [0.3, -1.7];
        let s1 = svm_score(&m, &x).unwrap() - m.bias;
        let s2 = svm_score(&m, &[2.5 * x[0], 2.5 * x[1]]).unwrap() - m.bias;
        assert!((s2 - 2.5 * s1).abs() < 1e-12);
        assert!(matches!(svm_score(&m, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn fusion_shape() {
        let f = fuse_features(&[0.0; 4], 3.0, 1.0, 2.0);
        assert_eq!(f, [0.0, 0.0, 0.0, 0.0, 1.0]);
        let scores = [1.0, 2.0, 3.0, 10.0];
        let (m, s) = score_moments(&scores);
        let z: Vec<f64> = scores.iter().map(|v| fuse_features(&[], *v, m, s)[0]).collect();
        let mean = z.iter().sum::<f64>() / 4.0;
        let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert_eq!(score_moments(&[2.0, 2.0]), (2.0, 1.0));
    }

    #[test]
    fn bias_minimizer() {
        // Single pair symmetric around zero.
        assert_eq!(optimal_bias(&[1.0, -1.0], &[1.0, -1.0]), 0.0);
        // Wide flat segment [-4, 4]: its midpoint.
        assert_eq!(optimal_bias(&[5.0, -5.0], &[1.0, -1.0]), 0.0);
        assert_eq!(optimal_bias(&[7.0, -3.0], &[1.0, -1.0]), -2.0);
        // Brute force on a grid for a random-ish case.
        let s = [0.3, -0.2, 1.4, -2.0, 0.1, 0.0];
        let y = [1.0, -1.0, 1.0, -1.0, -1.0, 1.0];
        let g = |b: f64| -> f64 { s.iter().zip(&y).map(|(s, y)| (1.0 - y * (s + b)).max(0.0)).sum() };
        let b = optimal_bias(&s, &y);
        let best = (-4000..4000).map(|i| g(i as f64 * 1e-3)).fold(f64::INFINITY, f64::min);
        assert!(g(b) <= best + 1e-9);
    }

    #[test]
    fn degenerate_training_inputs() {
        let xs = vec![vec![1.0], vec![2.0]];
        let cfg = SvmTrainConfig::default();
        assert!(matches!(train_svm(&xs, &[1.0, 1.0], &cfg), Err(Error::SingleClass(_))));
        assert!(train_svm(&[vec![1.0], vec![1.0, 2.0]], &[1.0, -1.0], &cfg).is_err());
        let zero = train_svm(&xs, &[1.0, -1.0], &SvmTrainConfig { c: 0.0, ..cfg.clone() }).unwrap();
        assert_eq!(zero.weights, [0.0]);
        assert_eq!(svm_score(&zero, &[5.0]).unwrap(), svm_score(&zero, &[-3.0]).unwrap());
    }

    #[test]
    fn two_point_max_margin() {
        let xs = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let m = train_svm(
            &xs,
            &[1.0, -1.0],
            &SvmTrainConfig {
                c: 1e3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-2, "{:?}", m.weights);
        assert!(m.weights[1].abs() < 1e-2);
        assert!(m.bias.abs() < 1e-2);
    }

    #[test]
    fn separable_training() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..20 {
            let t = i as f64 * 0.37;
            xs.push(vec![1.5 + (t % 1.0), libm::sin(t) * 3.0]);
            ys.push(1.0);
            xs.push(vec![-1.5 - (t % 1.3), libm::cos(t) * 3.0]);
            ys.push(-1.0);
        }
        let m = train_svm(
            &xs,
            &ys,
            &SvmTrainConfig {
                c: 10.0,
                ..Default::default()
            },
        )
        .unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!(y * svm_score(&m, x).unwrap() >= 0.99);
        }
        let zero_obj = svm_objective(&[0.0, 0.0], 0.0, 10.0, &xs, &ys);
        assert!(svm_objective(&m.weights, m.bias, 10.0, &xs, &ys) <= zero_obj);
    }

    #[test]
    fn fused_model_dimensions() {
        let xs = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.5, 0.5]];
        let m = train_fused_svm(&xs, &[0.9, 0.1, 0.7], &[1.0, -1.0, 1.0], &SvmTrainConfig::default()).unwrap();
        assert!(m.fused);
        assert_eq!(m.feature_dim, 2);
        assert_eq!(m.weights.len(), 3);
        m.validate().unwrap();
        assert!(m.score_region(&[1.0, 0.0], 0.9).is_ok());
        assert!(m.score_region(&[1.0, 0.0, 0.0], 0.9).is_err());
    }

    #[test]
    fn series_threshold_must_be_usable() {
        assert!(FusionMode::Series { threshold: f64::NAN }.validate().is_err());
        assert!(FusionMode::Series {
            threshold: f64::NEG_INFINITY
        }
        .validate()
        .is_ok());
        assert!(FusionMode::Parallel.validate().is_ok());
    }
}
