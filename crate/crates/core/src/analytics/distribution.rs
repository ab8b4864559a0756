//! Weighted PSM distributions: quantiles, histograms, the per-spot weighted
//! merge and the eight sign/quartile ranges.

use serde::{Deserialize, Serialize};

use super::AnalyticsError;

/// Smallest sample value whose cumulative weight reaches `p` of the total.
/// `pairs` must be sorted by value.
fn sorted_quantile(pairs: &[(f64, f64)], p: f64) -> Option<f64> {
    let total: f64 = pairs.iter().map(|x| x.1).sum();
    if pairs.is_empty() || !(total > 0.0) {
        return None;
    }
    let target = p * total;
    let mut cum = 0.0;
    for &(x, w) in pairs {
        cum += w;
        if cum >= target * (1.0 - 1e-12) {
            return Some(x);
        }
    }
    pairs.last().map(|x| x.0)
}

fn sorted_pairs(samples: &[f64], weights: &[f64]) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = samples
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(&x, &w)| (x, w))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// Lower weighted quantile.
pub fn weighted_quantile(samples: &[f64], weights: &[f64], p: f64) -> Option<f64> {
    sorted_quantile(&sorted_pairs(samples, weights), p)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    /// Summed sample weight per bin.
    pub mass: Vec<f64>,
    /// `mass` scaled to sum to one.
    pub fraction: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

const MAX_BINS: usize = 1000;

/// Freedman-Diaconis histogram of a weighted sample.
///
/// The width is `2 * IQR / n^(1/3)` with the weighted interquartile range and
/// `n` the number of distinct values, so repeating every sample leaves the
/// bins unchanged.
pub fn freedman_diaconis(samples: &[f64], weights: &[f64]) -> Histogram {
    let pairs = sorted_pairs(samples, weights);
    let (Some(lo), Some(hi)) = (pairs.first().map(|p| p.0), pairs.last().map(|p| p.0)) else {
        return Histogram::default();
    };
    let mut distinct = 1usize;
    for w in pairs.windows(2) {
        if w[1].0 != w[0].0 {
            distinct += 1;
        }
    }
    let iqr = match (sorted_quantile(&pairs, 0.75), sorted_quantile(&pairs, 0.25)) {
        (Some(q3), Some(q1)) => q3 - q1,
        _ => 0.0,
    };
    let span = hi - lo;
    let bins = if span > 0.0 && iqr > 0.0 {
        let width = 2.0 * iqr / (distinct as f64).cbrt();
        ((span / width).ceil() as usize).clamp(1, MAX_BINS)
    } else if span > 0.0 {
        // Sturges when the quartiles coincide.
        ((distinct as f64).log2().ceil() as usize + 1).clamp(1, MAX_BINS)
    } else {
        1
    };
    let width = if span > 0.0 { span / bins as f64 } else { 1.0 };
    let (lo, width) = if span > 0.0 { (lo, width) } else { (lo - 0.5, width) };
    let edges: Vec<f64> = (0..=bins).map(|j| lo + j as f64 * width).collect();
    let mut mass = vec![0.0; bins];
    for &(x, w) in &pairs {
        let j = (((x - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        mass[j] += w;
    }
    let total: f64 = mass.iter().sum();
    let fraction = mass.iter().map(|m| m / total).collect();
    Histogram { edges, mass, fraction }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotWeight {
    pub spot_id: String,
    pub scenes: usize,
    pub weight: f64,
}

/// A (possibly weighted) PSM sample with its histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsmDistribution {
    pub group: String,
    pub samples: Vec<f64>,
    pub weights: Vec<f64>,
    pub spot_weights: Vec<SpotWeight>,
    /// Set when the merge formula gives no usable weights (fewer than two
    /// spots); unit weights are used instead.
    pub degenerate: bool,
    pub histogram: Histogram,
}

impl PsmDistribution {
    /// Every sample at weight one.
    pub fn unweighted(group: impl Into<String>, samples: Vec<f64>) -> Self {
        let weights = vec![1.0; samples.len()];
        let histogram = freedman_diaconis(&samples, &weights);
        Self {
            group: group.into(),
            samples,
            weights,
            spot_weights: Vec::new(),
            degenerate: false,
            histogram,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Per-spot merge weights, `1 - |D_i| / |D|`.
pub fn merge_weights(sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0.0; sizes.len()];
    }
    sizes
        .iter()
        .map(|&n| (total - n) as f64 / total as f64)
        .collect()
}

/// Merges per-spot samples, each spot's frequencies scaled by its weight.
pub fn weighted_merge(group: impl Into<String>, spots: &[(String, Vec<f64>)]) -> PsmDistribution {
    let sizes: Vec<usize> = spots.iter().map(|s| s.1.len()).collect();
    let spot_w = merge_weights(&sizes);
    let degenerate = spots.len() < 2 || spot_w.iter().all(|w| *w <= 0.0);
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    for ((_, s), &w) in spots.iter().zip(&spot_w) {
        samples.extend_from_slice(s);
        weights.extend(std::iter::repeat_n(if degenerate { 1.0 } else { w }, s.len()));
    }
    let histogram = freedman_diaconis(&samples, &weights);
    PsmDistribution {
        group: group.into(),
        samples,
        weights,
        spot_weights: spots
            .iter()
            .zip(&spot_w)
            .map(|((id, s), &w)| SpotWeight {
                spot_id: id.clone(),
                scenes: s.len(),
                weight: w,
            })
            .collect(),
        degenerate,
        histogram,
    }
}

/// Seven cut points splitting PSM into eight ranges: three negative-side
/// quartiles, zero, three positive-side quartiles. Zero belongs to range 5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsmRanges {
    pub boundaries: [f64; 7],
}

impl PsmRanges {
    pub fn new(negative: [f64; 3], positive: [f64; 3]) -> Self {
        let [a, b, c] = negative;
        let [d, e, f] = positive;
        Self {
            boundaries: [a, b, c, 0.0, d, e, f],
        }
    }

    /// Range number, 1 to 8; each range is closed below.
    pub fn range_of(&self, psm: f64) -> usize {
        1 + self.boundaries.iter().filter(|&&b| psm >= b).count()
    }

    pub fn bounds(&self, range: usize) -> (f64, f64) {
        let lo = if range <= 1 { f64::NEG_INFINITY } else { self.boundaries[range - 2] };
        let hi = if range >= 8 { f64::INFINITY } else { self.boundaries[range - 1] };
        (lo, hi)
    }

    pub fn label(&self, range: usize) -> String {
        match self.bounds(range) {
            (lo, hi) if lo.is_infinite() => format!("under {hi}"),
            (lo, hi) if hi.is_infinite() => format!("over {lo}"),
            (lo, hi) => format!("{lo} to {hi}"),
        }
    }
}

/// Quartile cut points of each sign of the merged distribution.
pub fn psm_ranges(dist: &PsmDistribution) -> Result<PsmRanges, AnalyticsError> {
    let mut neg = (Vec::new(), Vec::new());
    let mut pos = (Vec::new(), Vec::new());
    for (&x, &w) in dist.samples.iter().zip(&dist.weights) {
        let side = if x < 0.0 { &mut neg } else { &mut pos };
        side.0.push(x);
        side.1.push(w);
    }
    let quartiles = |(s, w): &(Vec<f64>, Vec<f64>)| -> Option<[f64; 3]> {
        let pairs = sorted_pairs(s, w);
        Some([
            sorted_quantile(&pairs, 0.25)?,
            sorted_quantile(&pairs, 0.5)?,
            sorted_quantile(&pairs, 0.75)?,
        ])
    };
    match (quartiles(&neg), quartiles(&pos)) {
        (Some(n), Some(p)) => Ok(PsmRanges::new(n, p)),
        _ => Err(AnalyticsError::OneSidedDistribution),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_two_spot_weights() {
        assert_eq!(merge_weights(&[100, 800]), vec![8.0 / 9.0, 1.0 / 9.0]);
        let w = merge_weights(&[50, 50, 50]);
        assert!(w.iter().all(|x| *x == w[0]));
        assert_eq!(merge_weights(&[10]), vec![0.0]);
    }

    #[test]
    fn single_spot_merge_is_degenerate() {
        let d = weighted_merge("g", &[("A".into(), vec![1.0, 2.0])]);
        assert!(d.degenerate);
        assert_eq!(d.spot_weights[0].weight, 0.0);
        assert_eq!(d.total_weight(), 2.0);
    }

    #[test]
    fn ranges_from_paper_boundaries() {
        let r = PsmRanges::new([-4.92, -3.04, -2.03], [1.25, 2.29, 3.91]);
        assert_eq!(r.range_of(-1.5), 4);
        assert_eq!(r.range_of(-10.0), 1);
        assert_eq!(r.range_of(0.0), 5);
        assert_eq!(r.range_of(1.0), 5);
        assert_eq!(r.range_of(9.0), 8);
        assert_eq!(r.label(1), "under -4.92");
        assert_eq!(r.label(4), "-2.03 to 0");
        assert_eq!(r.label(8), "over 3.91");
    }

    #[test]
    fn one_sided_is_rejected() {
        let d = PsmDistribution::unweighted("g", vec![1.0, 2.0, 3.0]);
        assert!(matches!(psm_ranges(&d), Err(AnalyticsError::OneSidedDistribution)));
    }

    #[test]
    fn symmetric_sample_mirrors_boundaries() {
        let pos: Vec<f64> = (1..=40).map(|j| j as f64 * 0.37).collect();
        let mut all: Vec<f64> = pos.iter().map(|x| -x).collect();
        all.extend(&pos);
        let r = psm_ranges(&PsmDistribution::unweighted("g", all)).unwrap();
        // The lower quantile of the mirror is the mirror of the upper side's
        // next sample, one step over.
        let [a, b, c, _, d, e, f] = r.boundaries;
        for (n, p) in [(a, f), (b, e), (c, d)] {
            assert!((n + p).abs() <= 0.37 + 1e-12);
        }
    }

    #[test]
    fn histogram_rows_match_bins() {
        let s: Vec<f64> = (0..100).map(|j| (j as f64).sqrt()).collect();
        let h = freedman_diaconis(&s, &vec![1.0; 100]);
        assert_eq!(h.edges.len(), h.bins() + 1);
        assert!((h.mass.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        assert!((h.fraction.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(freedman_diaconis(&[], &[]).bins() == 0);
        assert_eq!(freedman_diaconis(&[2.0, 2.0], &[1.0, 1.0]).bins(), 1);
    }

    proptest! {
        #[test]
        fn quartile_bins_hold_a_quarter(
            raw in prop::collection::btree_set(-100_000i64..100_000, 8..200),
        ) {
            let samples: Vec<f64> = raw.iter().map(|&v| v as f64 / 100.0).collect();
            let d = PsmDistribution::unweighted("g", samples.clone());
            prop_assume!(samples.iter().any(|x| *x < 0.0) && samples.iter().any(|x| *x >= 0.0));
            let r = psm_ranges(&d).unwrap();
            for negative in [true, false] {
                let side: Vec<f64> = samples.iter().copied().filter(|x| (*x < 0.0) == negative).collect();
                let n = side.len() as f64;
                let offset = if negative { 1 } else { 5 };
                for range in offset..offset + 4 {
                    let count = side.iter().filter(|x| r.range_of(**x) == range).count() as f64;
                    prop_assert!((count - n / 4.0).abs() <= 1.0, "range {} holds {} of {}", range, count, n);
                }
            }
        }

        #[test]
        fn quartiles_invariant_under_duplication(
            raw in prop::collection::vec(-1000i64..1000, 4..80),
            k in 2usize..6,
        ) {
            let s: Vec<f64> = raw.iter().map(|&v| v as f64 / 10.0).collect();
            prop_assume!(s.iter().any(|x| *x < 0.0) && s.iter().any(|x| *x >= 0.0));
            let dup: Vec<f64> = s.iter().flat_map(|&x| std::iter::repeat_n(x, k)).collect();
            let a = psm_ranges(&PsmDistribution::unweighted("g", s)).unwrap();
            let b = psm_ranges(&PsmDistribution::unweighted("g", dup)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn equal_sizes_match_unweighted_shape(
            a in prop::collection::vec(-50.0f64..50.0, 5..30),
            b in prop::collection::vec(-50.0f64..50.0, 5..30),
        ) {
            let n = a.len().min(b.len());
            let (a, b) = (a[..n].to_vec(), b[..n].to_vec());
            let merged = weighted_merge("g", &[("A".into(), a.clone()), ("B".into(), b.clone())]);
            let plain = PsmDistribution::unweighted("g", [a, b].concat());
            prop_assert_eq!(&merged.histogram.edges, &plain.histogram.edges);
            for (x, y) in merged.histogram.fraction.iter().zip(&plain.histogram.fraction) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
