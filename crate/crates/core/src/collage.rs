//! Color descriptors and sequential collage selection.
//!
//! A collage is built by scanning tissue patches in raster order. The first
//! patch that has not been excluded becomes the reference of a new pass. Its
//! descriptor distance to every other remaining patch is measured, the k-th
//! percentile of those distances becomes the pass threshold, and every patch
//! closer than the threshold is excluded. Passes repeat until each patch is a
//! reference or excluded.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyramid::PatchRef;

/// Per-channel RGB histogram followed by per-channel standard deviations.
///
/// Layout: `B` red bins, `B` green bins, `B` blue bins, then `σR, σG, σB`,
/// each standard deviation divided by 255.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorDescriptor {
    bins_per_channel: usize,
    values: Vec<f64>,
}

impl ColorDescriptor {
    pub fn from_values(bins_per_channel: usize, values: Vec<f64>) -> Result<Self> {
        if bins_per_channel == 0 || values.len() != 3 * bins_per_channel + 3 {
            return Err(Error::invalid(format!(
                "descriptor of length {} does not match {bins_per_channel} bins per channel",
                values.len()
            )));
        }
        Ok(Self {
            bins_per_channel,
            values,
        })
    }

    pub fn bins_per_channel(&self) -> usize {
        self.bins_per_channel
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn histogram(&self) -> &[f64] {
        &self.values[..3 * self.bins_per_channel]
    }

    pub fn channel_histogram(&self, channel: usize) -> &[f64] {
        let b = self.bins_per_channel;
        &self.values[channel * b..(channel + 1) * b]
    }

    pub fn stds(&self) -> &[f64] {
        &self.values[3 * self.bins_per_channel..]
    }
}

/// Maps an 8-bit intensity to its bin, where bin `i` covers
/// `[floor(256 i / B), floor(256 (i + 1) / B))`.
pub(crate) fn bin_table(bins: usize) -> [usize; 256] {
    let mut table = [0usize; 256];
    for i in 0..bins {
        let lo = 256 * i / bins;
        let hi = 256 * (i + 1) / bins;
        for slot in &mut table[lo..hi] {
            *slot = i;
        }
    }
    table
}

pub fn color_descriptor(pixels: &RgbImage, bins_per_channel: usize) -> Result<ColorDescriptor> {
    let n = pixels.width() as u64 * pixels.height() as u64;
    if n == 0 {
        return Err(Error::invalid("cannot describe an empty raster"));
    }
    if bins_per_channel == 0 || bins_per_channel > 256 {
        return Err(Error::invalid(format!(
            "bins per channel must be in 1..=256, got {bins_per_channel}"
        )));
    }
    let table = bin_table(bins_per_channel);
    let mut counts = vec![0u64; 3 * bins_per_channel];
    let mut sum = [0u64; 3];
    let mut sum_sq = [0u128; 3];
    for p in pixels.pixels() {
        for c in 0..3 {
            let v = p[c] as u64;
            counts[c * bins_per_channel + table[v as usize]] += 1;
            sum[c] += v;
            sum_sq[c] += (v * v) as u128;
        }
    }
    let mut values: Vec<f64> = counts.iter().map(|&k| k as f64 / n as f64).collect();
    for c in 0..3 {
        // n² · var = n · Σv² − (Σv)², exact in integers.
        let scaled = n as u128 * sum_sq[c] - sum[c] as u128 * sum[c] as u128;
        let var = scaled as f64 / (n as f64 * n as f64);
        values.push(var.sqrt() / 255.0);
    }
    Ok(ColorDescriptor {
        bins_per_channel,
        values,
    })
}

pub fn descriptor_distance(a: &ColorDescriptor, b: &ColorDescriptor) -> Result<f64> {
    euclidean(a.as_slice(), b.as_slice())
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Linear-interpolation percentile: rank `(n - 1) k / 100` into the sorted values.
pub fn percentile(values: &[f64], k: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty list"));
    }
    if !(0.0..=100.0).contains(&k) {
        return Err(Error::invalid(format!("percentile {k} outside [0, 100]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("percentile input contains NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (sorted.len() - 1) as f64 * k / 100.0;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= sorted.len() {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpliceConfig {
    pub percentile_k: f64,
    pub patch_size: u32,
    pub magnification: f64,
    pub bins_per_channel: usize,
    pub dup_epsilon: f64,
}

impl Default for SpliceConfig {
    fn default() -> Self {
        Self {
            percentile_k: 30.0,
            patch_size: 32,
            magnification: 0.625,
            bins_per_channel: 8,
            dup_epsilon: 1e-12,
        }
    }
}

impl SpliceConfig {
    pub fn new(
        percentile_k: f64,
        patch_size: u32,
        magnification: f64,
        bins_per_channel: usize,
        dup_epsilon: f64,
    ) -> Result<Self> {
        let cfg = Self {
            percentile_k,
            patch_size,
            magnification,
            bins_per_channel,
            dup_epsilon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_percentile(self, percentile_k: f64) -> Result<Self> {
        Self::new(
            percentile_k,
            self.patch_size,
            self.magnification,
            self.bins_per_channel,
            self.dup_epsilon,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.percentile_k > 0.0 && self.percentile_k < 100.0) {
            return Err(Error::invalid(format!(
                "percentile must lie in (0, 100), got {}",
                self.percentile_k
            )));
        }
        if self.patch_size == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        if !(self.magnification.is_finite() && self.magnification > 0.0) {
            return Err(Error::invalid(format!(
                "selection magnification must be positive, got {}",
                self.magnification
            )));
        }
        if self.bins_per_channel == 0 || self.bins_per_channel > 256 {
            return Err(Error::invalid(format!(
                "bins per channel must be in 1..=256, got {}",
                self.bins_per_channel
            )));
        }
        if !(self.dup_epsilon >= 0.0 && self.dup_epsilon.is_finite()) {
            return Err(Error::invalid("duplicate epsilon must be a non-negative number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollageEntry {
    #[serde(flatten)]
    pub patch: PatchRef,
    pub pass_index: u32,
    pub n_excluded: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collage {
    pub wsi_id: String,
    /// Objective power of level 0, needed to map selections to other magnifications.
    pub base_magnification: f64,
    pub config: SpliceConfig,
    pub entries: Vec<CollageEntry>,
}

/// What one pass did, by index into the input list.
#[derive(Debug, Clone, PartialEq)]
pub struct PassTrace {
    pub reference: usize,
    pub threshold: f64,
    pub excluded: Vec<usize>,
}

impl Collage {
    pub fn patches(&self) -> impl Iterator<Item = &PatchRef> {
        self.entries.iter().map(|e| &e.patch)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of tissue patches the collage was selected from.
    pub fn input_len(&self) -> usize {
        self.entries.len() + self.entries.iter().map(|e| e.n_excluded as usize).sum::<usize>()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Collage = serde_json::from_str(s)?;
        c.config.validate()?;
        Ok(c)
    }
}

pub fn splice_select(
    wsi_id: &str,
    base_magnification: f64,
    descriptors: &[(PatchRef, ColorDescriptor)],
    cfg: &SpliceConfig,
) -> Result<Collage> {
    splice_select_traced(wsi_id, base_magnification, descriptors, cfg).map(|(c, _)| c)
}

/// Same as [`splice_select`] but also returns the per-pass provenance.
pub fn splice_select_traced(
    wsi_id: &str,
    base_magnification: f64,
    descriptors: &[(PatchRef, ColorDescriptor)],
    cfg: &SpliceConfig,
) -> Result<(Collage, Vec<PassTrace>)> {
    cfg.validate()?;
    let expected_len = 3 * cfg.bins_per_channel + 3;
    if let Some((p, d)) = descriptors.iter().find(|(_, d)| d.as_slice().len() != expected_len) {
        return Err(Error::invalid(format!(
            "descriptor for {p:?} has length {}, config expects {expected_len}",
            d.as_slice().len()
        )));
    }

    let n = descriptors.len();
    // `alive[j]` is false once patch j has been used as a reference or excluded.
    let mut alive = vec![true; n];
    let mut entries = Vec::new();
    let mut traces = Vec::new();
    let mut distances = Vec::with_capacity(n);

    for i in 0..n {
        if !alive[i] {
            continue;
        }
        alive[i] = false;
        let reference = descriptors[i].1.as_slice();

        distances.clear();
        for (j, (_, d)) in descriptors.iter().enumerate().skip(i + 1) {
            if alive[j] {
                distances.push((j, euclidean(reference, d.as_slice())?));
            }
        }

        let mut trace = PassTrace {
            reference: i,
            threshold: 0.0,
            excluded: Vec::new(),
        };
        if !distances.is_empty() {
            let values: Vec<f64> = distances.iter().map(|&(_, d)| d).collect();
            let t = percentile(&values, cfg.percentile_k)?;
            trace.threshold = t;
            for &(j, d) in &distances {
                if d < t || d <= cfg.dup_epsilon {
                    alive[j] = false;
                    trace.excluded.push(j);
                }
            }
        }

        entries.push(CollageEntry {
            patch: descriptors[i].0,
            pass_index: entries.len() as u32 + 1,
            n_excluded: trace.excluded.len() as u32,
        });
        traces.push(trace);
    }

    let collage = Collage {
        wsi_id: wsi_id.to_string(),
        base_magnification,
        config: *cfg,
        entries,
    };
    assert_eq!(collage.input_len(), n, "every patch is either a reference or excluded");
    Ok((collage, traces))
}

/// Maps each selected patch to the pyramid level for `target_magnification`.
pub fn collage_to_highmag(c: &Collage, target_magnification: f64) -> Result<Vec<PatchRef>> {
    let factor = factor_for(c.base_magnification, c.config.magnification, target_magnification)?;
    c.entries.iter().map(|e| e.patch.map_to_factor(factor)).collect()
}

/// Integer downsample factor for `target` given the level-0 magnification.
pub(crate) fn factor_for(base: f64, selection: f64, target: f64) -> Result<u32> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::invalid(format!("target magnification must be positive, got {target}")));
    }
    if target < selection * (1.0 - 1e-9) {
        return Err(Error::invalid(format!(
            "target magnification {target} is below the selection magnification {selection}"
        )));
    }
    if target > base * (1.0 + 1e-9) {
        return Err(Error::invalid(format!(
            "target magnification {target} exceeds base magnification {base}"
        )));
    }
    let ratio = base / target;
    let factor = ratio.round();
    if (ratio - factor).abs() > 1e-6 * ratio || factor < 1.0 {
        return Err(Error::invalid(format!(
            "base {base} / target {target} is not an integer downsample factor"
        )));
    }
    Ok(factor as u32)
}
