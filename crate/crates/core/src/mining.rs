//! Training-data preparation.
//!
//! * Padding estimation: how much a proposal has to grow before it fully
//!   contains the ground truth it is closest to, averaged over the training
//!   set.
//! * Random crops of padded regions, simulating proposal jitter.
//! * Negative decorrelation: quantized color histograms and a greedy
//!   max-average-distance selection over a pool of background regions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{expand_box, iou, BoundingBox};
use crate::image::FrameImage;

pub const DEFAULT_DELTA: u32 = 32;
pub const DEFAULT_CROPS: usize = 5;

fn bins_for(delta: u32) -> usize {
    256usize.div_ceil(delta as usize)
}

fn check_delta(delta: u32) -> Result<()> {
    if delta == 0 || delta > 256 {
        return Err(Error::OutOfRange(format!("quantization step {delta} not in (0, 256]")));
    }
    Ok(())
}

/// Per-channel bin indices `floor(I / delta)`, same layout as the source.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub bins_per_channel: usize,
    pub values: Vec<u16>,
}

pub fn quantize_image(img: &FrameImage, delta: u32) -> Result<QuantizedImage> {
    check_delta(delta)?;
    let d = delta as f32;
    let values = img.pixels().iter().map(|&v| libm::floorf(v / d) as u16).collect();
    Ok(QuantizedImage {
        width: img.width(),
        height: img.height(),
        channels: img.channels(),
        bins_per_channel: bins_for(delta),
        values,
    })
}

/// Occurrence counts of quantized color vectors, indexed lexicographically
/// with the first channel most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorHistogram {
    pub delta: u32,
    pub channels: usize,
    pub bins_per_channel: usize,
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl ColorHistogram {
    pub fn counts(img: &FrameImage, delta: u32) -> Result<Self> {
        let q = quantize_image(img, delta)?;
        let b = q.bins_per_channel;
        let len = b
            .checked_pow(q.channels as u32)
            .filter(|&n| n <= 1 << 24)
            .ok_or_else(|| Error::HistogramShape(format!("{b}^{} bins is too many", q.channels)))?;
        let mut values = vec![0.0; len];
        for px in q.values.chunks_exact(q.channels) {
            let idx = px.iter().fold(0usize, |acc, &v| acc * b + v as usize);
            values[idx] += 1.0;
        }
        Ok(Self {
            delta,
            channels: q.channels,
            bins_per_channel: b,
            values,
            normalized: false,
        })
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
        self.normalized = true;
    }

    /// Running sums over the lexicographic bin order.
    pub fn cumulative(&self) -> Vec<f64> {
        self.values
            .iter()
            .scan(0.0, |acc, &v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.delta == other.delta && self.channels == other.channels && self.values.len() == other.values.len()
    }
}

/// L2-normalized color histogram.
pub fn color_histogram(img: &FrameImage, delta: u32) -> Result<ColorHistogram> {
    let mut h = ColorHistogram::counts(img, delta)?;
    h.normalize();
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMode {
    /// Euclidean distance between histogram vectors.
    #[default]
    Direct,
    /// Euclidean distance between lexicographic prefix sums.
    Cumulative,
}

pub fn histogram_distance(h1: &ColorHistogram, h2: &ColorHistogram, mode: DistanceMode) -> Result<f64> {
    if !h1.same_shape(h2) {
        return Err(Error::HistogramShape(format!(
            "delta {} / {} channels vs delta {} / {} channels",
            h1.delta, h1.channels, h2.delta, h2.channels
        )));
    }
    let sq: f64 = match mode {
        DistanceMode::Direct => h1.values.iter().zip(&h2.values).map(|(a, b)| (a - b) * (a - b)).sum(),
        DistanceMode::Cumulative => {
            let (mut a, mut b, mut acc) = (0.0, 0.0, 0.0);
            for (x, y) in h1.values.iter().zip(&h2.values) {
                a += x;
                b += y;
                acc += (a - b) * (a - b);
            }
            acc
        }
    };
    Ok(libm::sqrt(sq))
}

/// Which set the greedy step averages distances over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GreedyReference {
    /// Other members still in the pool.
    #[default]
    RemainingPool,
    /// Regions already selected; the first pick falls back to the full pool.
    Selected,
}

/// Symmetric pairwise distance matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_histograms(hs: &[ColorHistogram], mode: DistanceMode) -> Result<Self> {
        let n = hs.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = histogram_distance(&hs[i], &hs[j], mode)?;
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Ok(Self { n, values })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = f(i, j);
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Self { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }
}

/// Relative gap below which two greedy candidates are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Greedy selection of `k` indices: each step takes the candidate with the
/// highest average distance to the reference set, lowest index on ties.
///
/// All candidates share the same reference-set size at a given step, so
/// comparing running distance sums is equivalent to comparing averages.
/// Sums within [`TIE_TOLERANCE`] (relative) count as ties: disjoint
/// histograms sit at exactly sqrt(2) from each other, and the order in which
/// the sums accumulate must not decide between them.
pub fn greedy_select(dist: &DistanceMatrix, k: usize, reference: GreedyReference) -> Result<Vec<usize>> {
    let n = dist.len();
    if k == 0 || k > n {
        return Err(Error::OutOfRange(format!("K = {k} with a pool of {n}")));
    }
    let mut in_pool = vec![true; n];
    // Distance sum from each candidate to the whole pool.
    let mut pool_sum: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dist.get(i, j)).sum()).collect();
    let mut selected_sum = vec![0.0; n];
    let mut selected = Vec::with_capacity(k);
    while selected.len() < k {
        let sums = match reference {
            GreedyReference::Selected if !selected.is_empty() => &selected_sum,
            _ => &pool_sum,
        };
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| in_pool[i]) {
            if best.is_none_or(|(_, b)| sums[i] > b + TIE_TOLERANCE * b.abs().max(1.0)) {
                best = Some((i, sums[i]));
            }
        }
        let (s, _) = best.expect("remaining pool is non-empty");
        in_pool[s] = false;
        selected.push(s);
        for i in 0..n {
            pool_sum[i] -= dist.get(i, s);
            selected_sum[i] += dist.get(i, s);
        }
    }
    Ok(selected)
}

/// Picks `k` mutually diverse regions from `pool` by color histogram.
pub fn select_diverse_negatives(
    pool: &[FrameImage],
    k: usize,
    delta: u32,
    mode: DistanceMode,
    reference: GreedyReference,
) -> Result<Vec<usize>> {
    if k == 0 || k > pool.len() {
        return Err(Error::OutOfRange(format!("K = {k} with a pool of {}", pool.len())));
    }
    let hs = pool
        .iter()
        .map(|p| color_histogram(p, delta))
        .collect::<Result<Vec<_>>>()?;
    greedy_select(&DistanceMatrix::from_histograms(&hs, mode)?, k, reference)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaddingStat {
    pub samples: Vec<f64>,
    pub mean_alpha: f64,
}

/// Smallest `alpha >= 0` with `gt` inside `expand_box(proposal, alpha)`.
pub fn minimal_padding(gt: &BoundingBox, proposal: &BoundingBox) -> f64 {
    let (cx, cy) = proposal.center();
    let need_x = 2.0 * (cx - gt.x).max(gt.right() - cx) / proposal.w;
    let need_y = 2.0 * (cy - gt.y).max(gt.bottom() - cy) / proposal.h;
    (need_x.max(need_y) - 1.0).max(0.0)
}

/// Index of the proposal closest to `gt`: maximum IoU, then smaller center
/// distance, then lower index.
pub fn closest_proposal(gt: &BoundingBox, proposals: &[BoundingBox]) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, p) in proposals.iter().enumerate() {
        let o = iou(gt, p);
        let d = gt.center_distance(p);
        let better = match best {
            None => true,
            Some((_, bo, bd)) => o > bo || (o == bo && d < bd),
        };
        if better {
            best = Some((i, o, d));
        }
    }
    best.map(|(i, _, _)| i)
}

pub fn estimate_padding(gts: &[BoundingBox], proposals: &[BoundingBox]) -> Result<PaddingStat> {
    if gts.is_empty() || proposals.is_empty() {
        return Err(Error::OutOfRange(
            "padding estimation needs ground truth and proposals".into(),
        ));
    }
    let samples: Vec<f64> = gts
        .iter()
        .map(|g| {
            let p = &proposals[closest_proposal(g, proposals).expect("non-empty proposals")];
            minimal_padding(g, p)
        })
        .collect();
    Ok(PaddingStat::from_samples(samples))
}

impl PaddingStat {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let mean_alpha = if samples.is_empty() {
            0.0
        } else {
            samples.iter().sum::<f64>() / samples.len() as f64
        };
        Self { samples, mean_alpha }
    }

    /// Merges per-frame statistics into one.
    pub fn merge(stats: impl IntoIterator<Item = PaddingStat>) -> Self {
        Self::from_samples(stats.into_iter().flat_map(|s| s.samples).collect())
    }
}

/// `n` boxes of `b`'s size placed uniformly inside `expand_box(b, alpha)`.
pub fn random_crops<R: Rng + ?Sized>(b: &BoundingBox, alpha: f64, n: usize, rng: &mut R) -> Vec<BoundingBox> {
    let padded = expand_box(b, alpha.max(0.0));
    let slack_x = alpha.max(0.0) * b.w;
    let slack_y = alpha.max(0.0) * b.h;
    (0..n)
        .map(|_| {
            if slack_x == 0.0 && slack_y == 0.0 {
                return *b;
            }
            let x = padded.x + slack_x * rng.random::<f64>();
            let y = padded.y + slack_y * rng.random::<f64>();
            BoundingBox::new(x, y, b.w, b.h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: usize, h: usize, rgb: [f32; 3]) -> FrameImage {
        let px: Vec<f32> = (0..w * h).flat_map(|_| rgb).collect();
        FrameImage::new(w, h, 3, px).unwrap()
    }

    #[test]
    fn quantization_cases() {
        let img = FrameImage::new(3, 1, 1, vec![130.0, 255.0, 0.0]).unwrap();
        let q = quantize_image(&img, 64).unwrap();
        assert_eq!(q.values, [2, 3, 0]);
        assert_eq!(q.bins_per_channel, 4);
        let q = quantize_image(&img, 256).unwrap();
        assert_eq!(q.values, [0, 0, 0]);
        assert_eq!(q.bins_per_channel, 1);
        assert!(quantize_image(&img, 0).is_err());
        assert!(quantize_image(&img, 257).is_err());
        assert_eq!(quantize_image(&img, 100).unwrap().bins_per_channel, 3);
    }

    #[test]
    fn histogram_single_and_split_colors() {
        let h = color_histogram(&solid(5, 4, [10.0, 200.0, 90.0]), 32).unwrap();
        assert_eq!(h.values.len(), 512);
        let nz: Vec<_> = h.values.iter().enumerate().filter(|(_, v)| **v != 0.0).collect();
        assert_eq!(nz.len(), 1);
        // (0, 6, 2) -> 0 * 64 + 6 * 8 + 2
        assert_eq!(nz[0].0, 50);
        assert!((nz[0].1 - 1.0).abs() < 1e-12);

        let mut px = Vec::new();
        for i in 0..8 {
            px.extend(if i < 4 { [0.0, 0.0, 0.0] } else { [255.0, 255.0, 255.0] });
        }
        let h = color_histogram(&FrameImage::new(4, 2, 3, px).unwrap(), 32).unwrap();
        let r = 1.0 / libm::sqrt(2.0);
        assert!((h.values[0] - r).abs() < 1e-12);
        assert!((h.values[511] - r).abs() < 1e-12);
        assert!((h.norm() - 1.0).abs() < 1e-12);

        let h = color_histogram(
            &FrameImage::new(4, 2, 3, (0..24).map(|v| v as f32 * 10.0).collect()).unwrap(),
            256,
        )
        .unwrap();
        assert_eq!(h.values, [1.0]);
    }

    #[test]
    fn distance_cases() {
        let a = color_histogram(&solid(3, 3, [0.0, 0.0, 0.0]), 64).unwrap();
        let b = color_histogram(&solid(3, 3, [255.0, 0.0, 0.0]), 64).unwrap();
        for mode in [DistanceMode::Direct, DistanceMode::Cumulative] {
            assert_eq!(histogram_distance(&a, &a, mode).unwrap(), 0.0);
        }
        let d = histogram_distance(&a, &b, DistanceMode::Direct).unwrap();
        assert!((d - libm::sqrt(2.0)).abs() < 1e-12);
        // prefix sums differ by 1 on bins [0, 48): sqrt(48)
        let c = histogram_distance(&a, &b, DistanceMode::Cumulative).unwrap();
        assert!((c - libm::sqrt(48.0)).abs() < 1e-12);

        let other = color_histogram(&solid(3, 3, [0.0, 0.0, 0.0]), 32).unwrap();
        assert!(matches!(
            histogram_distance(&a, &other, DistanceMode::Direct),
            Err(Error::HistogramShape(_))
        ));
    }

    #[test]
    fn greedy_k_bounds_and_exhaustion() {
        let pool: Vec<_> = (0..4).map(|i| solid(2, 2, [i as f32 * 60.0, 0.0, 0.0])).collect();
        assert!(select_diverse_negatives(&pool, 0, 32, DistanceMode::Direct, GreedyReference::RemainingPool).is_err());
        assert!(select_diverse_negatives(&pool, 5, 32, DistanceMode::Direct, GreedyReference::RemainingPool).is_err());
        let mut all =
            select_diverse_negatives(&pool, 4, 32, DistanceMode::Direct, GreedyReference::RemainingPool).unwrap();
        all.sort_unstable();
        assert_eq!(all, [0, 1, 2, 3]);
    }

    #[test]
    fn greedy_pool_vs_selected_semantics() {
        // Points on a line at 0, 1, 2, 10.
        let pos = [0.0, 1.0, 2.0, 10.0];
        let d = DistanceMatrix::from_fn(4, |i, j| (pos[i] - pos[j]) as f64);
        let d = DistanceMatrix::from_fn(4, |i, j| d.get(i, j).abs());
        // pool: 3 (avg 9) -> then among {0,1,2}: 0 and 2 tie at 1.5, lowest index 0
        assert_eq!(greedy_select(&d, 2, GreedyReference::RemainingPool).unwrap(), [3, 0]);
        // selected: 3 first, then farthest from {3} is 0, then 1 and 2 tie at
        // an average of 5 against {3, 0}: lowest index wins
        assert_eq!(greedy_select(&d, 3, GreedyReference::Selected).unwrap(), [3, 0, 1]);
        assert_eq!(
            greedy_select(&d, 4, GreedyReference::RemainingPool).unwrap(),
            [3, 0, 1, 2]
        );
    }

    #[test]
    fn greedy_rounding_noise_is_a_tie() {
        // All pairs at sqrt(2) up to an ulp: the lowest index must win each step.
        let r2 = libm::sqrt(2.0);
        let d = DistanceMatrix::from_fn(5, |i, j| {
            if (i + j) % 2 == 0 {
                r2
            } else {
                r2 * (1.0 + f64::EPSILON)
            }
        });
        assert_eq!(
            greedy_select(&d, 5, GreedyReference::RemainingPool).unwrap(),
            [0, 1, 2, 3, 4]
        );
    }

    #[test]
    fn padding_cases() {
        let gts = [
            BoundingBox::new(10.0, 10.0, 20.0, 40.0),
            BoundingBox::new(100.0, 10.0, 20.0, 40.0),
        ];
        let s = estimate_padding(&gts, &gts).unwrap();
        assert_eq!(s.samples, [0.0, 0.0]);
        assert_eq!(s.mean_alpha, 0.0);

        let p = BoundingBox::new(50.0, 50.0, 20.0, 40.0);
        let g = expand_box(&p, 0.2);
        let s = estimate_padding(&[g], &[p, BoundingBox::new(300.0, 0.0, 5.0, 5.0)]).unwrap();
        assert!((s.mean_alpha - 0.2).abs() < 1e-12);

        assert_eq!(PaddingStat::from_samples(vec![0.0, 0.4]).mean_alpha, 0.2);
        assert!(estimate_padding(&[], &gts).is_err());
        assert!(estimate_padding(&gts, &[]).is_err());
    }

    #[test]
    fn padding_for_disjoint_ground_truth_is_finite() {
        let g = BoundingBox::new(500.0, 500.0, 10.0, 20.0);
        let p = BoundingBox::new(0.0, 0.0, 10.0, 20.0);
        let a = minimal_padding(&g, &p);
        assert!(a.is_finite() && a > 0.0);
        assert!(expand_box(&p, a).contains_with_tolerance(&g, 1e-9));
    }

    #[test]
    fn closest_proposal_tie_breaks() {
        let g = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        // neither overlaps; the nearer center wins
        let far = BoundingBox::new(100.0, 0.0, 10.0, 10.0);
        let near = BoundingBox::new(30.0, 0.0, 10.0, 10.0);
        assert_eq!(closest_proposal(&g, &[far, near]), Some(1));
        // exact duplicates: lower index
        assert_eq!(closest_proposal(&g, &[near, near]), Some(0));
    }

    #[test]
    fn crops_cases() {
        let b = BoundingBox::new(20.0, 30.0, 16.0, 32.0);
        let mut rng = crate::seeded_rng(3);
        assert!(random_crops(&b, 0.3, 0, &mut rng).is_empty());
        assert!(random_crops(&b, 0.0, 7, &mut rng).iter().all(|c| *c == b));
        let padded = expand_box(&b, 0.3);
        let crops = random_crops(&b, 0.3, 1000, &mut rng);
        for c in &crops {
            assert_eq!((c.w, c.h), (b.w, b.h));
            assert!(padded.contains_with_tolerance(c, 1e-9));
        }
        assert_eq!(crops, {
            let mut r = crate::seeded_rng(3);
            let _ = random_crops(&b, 0.0, 7, &mut r);
            random_crops(&b, 0.3, 1000, &mut r)
        });
    }

    #[test]
    fn identical_proposals_give_exact_crops() {
        let gts = [BoundingBox::new(5.0, 7.0, 12.0, 24.0)];
        let s = estimate_padding(&gts, &gts).unwrap();
        let crops = random_crops(&gts[0], s.mean_alpha, 5, &mut crate::seeded_rng(0));
        assert!(crops.iter().all(|c| *c == gts[0]));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn any_box() -> impl Strategy<Value = BoundingBox> {
            (-20.0..120.0f64, -20.0..120.0f64, 2.0..60.0f64, 2.0..60.0f64)
                .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h))
        }

        proptest! {
            #[test]
            fn padding_is_minimal(g in any_box(), p in any_box()) {
                let a = minimal_padding(&g, &p);
                prop_assert!(a >= 0.0);
                prop_assert!(expand_box(&p, a).contains_with_tolerance(&g, 1e-9));
                if a > 1e-6 {
                    prop_assert!(!expand_box(&p, a - 1e-6).contains_with_tolerance(&g, 1e-9));
                }
            }

            #[test]
            fn distance_is_a_metric(
                seeds in proptest::collection::vec(0u8..=255, 3 * 3 * 4 * 3),
                mode in prop_oneof![Just(DistanceMode::Direct), Just(DistanceMode::Cumulative)],
            ) {
                let imgs: Vec<_> = seeds
                    .chunks(3 * 4 * 3)
                    .map(|c| FrameImage::from_u8(3, 4, 3, c).unwrap())
                    .collect();
                let hs: Vec<_> = imgs.iter().map(|i| color_histogram(i, 64).unwrap()).collect();
                let d = |a: usize, b: usize| histogram_distance(&hs[a], &hs[b], mode).unwrap();
                for h in &hs {
                    prop_assert!((h.norm() - 1.0).abs() < 1e-9);
                }
                prop_assert!(d(0, 1) >= 0.0);
                prop_assert_eq!(d(0, 1), d(1, 0));
                prop_assert_eq!(d(2, 2), 0.0);
                prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
            }
        }
    }
}
