//! 256-bin histograms and per-channel histogram matching.

use super::io::to_byte;
use super::Image;
use crate::error::{Error, Result};

pub const BINS: usize = 256;

/// Bin index of an intensity: its 8-bit quantization level.
#[inline]
pub fn quantize_level(v: f64) -> usize {
    to_byte(v) as usize
}

/// Per-channel bin counts and normalized cumulative counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<[u64; BINS]>,
    pub cdf: Vec<[f64; BINS]>,
}

impl Histogram {
    pub fn of(img: &Image) -> Self {
        let channels = img.channels();
        let mut bins = vec![[0u64; BINS]; channels];
        for (i, &v) in img.data().iter().enumerate() {
            bins[i % channels][quantize_level(v)] += 1;
        }
        let cdf = bins.iter().map(cumulative).collect();
        Histogram { bins, cdf }
    }

    pub fn channels(&self) -> usize {
        self.bins.len()
    }
}

fn cumulative(counts: &[u64; BINS]) -> [f64; BINS] {
    let total: u64 = counts.iter().sum();
    let mut cdf = [0.0; BINS];
    if total == 0 {
        return cdf;
    }
    let mut running = 0u64;
    for (slot, &c) in cdf.iter_mut().zip(counts) {
        running += c;
        *slot = running as f64 / total as f64;
    }
    cdf
}

fn cumulative_counts(counts: &[u64; BINS]) -> Vec<u128> {
    counts
        .iter()
        .scan(0u128, |acc, &c| {
            *acc += u128::from(c);
            Some(*acc)
        })
        .collect()
}

/// Remaps each channel of `source` so its distribution follows `reference`.
///
/// A source value with empirical CDF `p` (fraction of source values at or
/// below it, on the raw values) goes to the lowest reference level whose
/// 256-bin CDF reaches `p`. Equal source values map together, comparisons
/// are exact on integer counts, and output values lie on the 8-bit grid
/// within the per-channel `[min, max]` of the reference.
pub fn histogram_match(source: &Image, reference: &Image) -> Result<Image> {
    if source.channels() != reference.channels() {
        return Err(Error::Image(format!(
            "histogram_match channel mismatch: source has {}, reference has {}",
            source.channels(),
            reference.channels()
        )));
    }
    let refh = Histogram::of(reference);
    let channels = source.channels();
    let mut out = source.clone();
    for c in 0..channels {
        let ref_cum = cumulative_counts(&refh.bins[c]);
        let ref_total = ref_cum[BINS - 1];
        let mut sorted: Vec<f64> = source.data().iter().skip(c).step_by(channels).copied().collect();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as u128;
        for v in out.data_mut().iter_mut().skip(c).step_by(channels) {
            let at_or_below = sorted.partition_point(|u| u.total_cmp(v).is_le()) as u128;
            let level = ref_cum.partition_point(|&k| k * n < at_or_below * ref_total).min(BINS - 1);
            *v = level as f64 / 255.0;
        }
    }
    Ok(out)
}
