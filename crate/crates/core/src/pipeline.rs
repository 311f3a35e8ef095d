//! End-to-end glue: slide → tissue lattice → selection → features → barcodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barcode::{minmax_binarize, Archive, BarcodeSet};
use crate::collage::{color_descriptor, factor_for, splice_select, Collage, ColorDescriptor, SpliceConfig};
use crate::embedding::{embed_histogram, FeatureVector};
use crate::error::{Error, Result};
use crate::mosaic::{mosaic_select, Mosaic, MosaicConfig};
use crate::pyramid::{ImagePyramid, LevelChoice, PatchRef};
use crate::segmentation::{enumerate_patches, segment_tissue, SegmentationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Splice,
    Mosaic,
    /// Every tissue patch; the uncompressed reference.
    Lattice,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Splice => "splice",
            Method::Mosaic => "mosaic",
            Method::Lattice => "lattice",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "splice" => Ok(Method::Splice),
            "mosaic" => Ok(Method::Mosaic),
            "lattice" => Ok(Method::Lattice),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub segmentation: SegmentationConfig,
    pub min_tissue_fraction: f64,
    pub splice: SpliceConfig,
    pub mosaic: MosaicConfig,
    /// Magnification for feature extraction; `None` uses the slide's base magnification.
    pub feature_magnification: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            segmentation: SegmentationConfig::default(),
            min_tissue_fraction: 0.5,
            splice: SpliceConfig::default(),
            mosaic: MosaicConfig::default(),
            feature_magnification: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.splice.validate()?;
        self.mosaic.validate()?;
        if !(0.0..=1.0).contains(&self.min_tissue_fraction) {
            return Err(Error::invalid("min tissue fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Flat key/value view, stored alongside archives and reports.
    pub fn describe(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("s_min", self.segmentation.s_min.to_string());
        put("v_max", self.segmentation.v_max.to_string());
        put("min_tissue_fraction", self.min_tissue_fraction.to_string());
        put("percentile", self.splice.percentile_k.to_string());
        put("patch_size", self.splice.patch_size.to_string());
        put("magnification", self.splice.magnification.to_string());
        put("bins", self.splice.bins_per_channel.to_string());
        put("dup_epsilon", self.splice.dup_epsilon.to_string());
        put("color_k", self.mosaic.color_k.to_string());
        put("fraction", self.mosaic.select_fraction.to_string());
        put("seed", self.mosaic.seed.to_string());
        put(
            "feature_magnification",
            self.feature_magnification.map(|v| v.to_string()).unwrap_or_else(|| "base".into()),
        );
        m
    }
}

/// Tissue lattice of one slide with color descriptors, in row-major order.
#[derive(Debug, Clone)]
pub struct TissuePatches {
    pub wsi_id: String,
    pub base_magnification: f64,
    pub level: LevelChoice,
    pub descriptors: Vec<(PatchRef, ColorDescriptor)>,
}

impl TissuePatches {
    /// Magnification of the level the lattice was cut at.
    pub fn selection_magnification(&self) -> f64 {
        self.base_magnification / self.level.factor as f64
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

pub fn tissue_patches(pyr: &ImagePyramid, cfg: &PipelineConfig) -> Result<TissuePatches> {
    let level = pyr.level_for_magnification(cfg.splice.magnification)?;
    let mask = segment_tissue(pyr, level.factor, &cfg.segmentation)?;
    let patches = enumerate_patches(&mask, cfg.splice.patch_size, cfg.min_tissue_fraction);
    let descriptors = patches
        .par_iter()
        .map(|p| Ok((*p, color_descriptor(&pyr.read_region(p)?, cfg.splice.bins_per_channel)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TissuePatches {
        wsi_id: pyr.id.clone(),
        base_magnification: pyr.base_magnification,
        level,
        descriptors,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Collage(Collage),
    Mosaic(Mosaic),
    Lattice(Vec<PatchRef>),
}

impl Selection {
    pub fn patches(&self) -> Vec<PatchRef> {
        match self {
            Selection::Collage(c) => c.patches().copied().collect(),
            Selection::Mosaic(m) => m.patches().copied().collect(),
            Selection::Lattice(p) => p.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Selection::Collage(c) => c.len(),
            Selection::Mosaic(m) => m.len(),
            Selection::Lattice(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn select(tp: &TissuePatches, method: Method, cfg: &PipelineConfig) -> Result<Selection> {
    Ok(match method {
        Method::Splice => Selection::Collage(splice_select(&tp.wsi_id, tp.base_magnification, &tp.descriptors, &cfg.splice)?),
        Method::Mosaic if tp.is_empty() => Selection::Mosaic(Mosaic {
            wsi_id: tp.wsi_id.clone(),
            base_magnification: tp.base_magnification,
            magnification: tp.selection_magnification(),
            config: cfg.mosaic,
            color_cluster_sizes: Vec::new(),
            entries: Vec::new(),
        }),
        Method::Mosaic => Selection::Mosaic(mosaic_select(
            &tp.wsi_id,
            tp.base_magnification,
            tp.selection_magnification(),
            &tp.descriptors,
            &cfg.mosaic,
        )?),
        Method::Lattice => Selection::Lattice(tp.descriptors.iter().map(|(p, _)| *p).collect()),
    })
}

/// Maps selection-level patches to the feature magnification and embeds them.
pub fn embed_patches(pyr: &ImagePyramid, patches: &[PatchRef], cfg: &PipelineConfig) -> Result<Vec<FeatureVector>> {
    let target = cfg.feature_magnification.unwrap_or(pyr.base_magnification);
    patches
        .par_iter()
        .map(|p| {
            let selection_mag = pyr.base_magnification / p.level_factor as f64;
            let factor = factor_for(pyr.base_magnification, selection_mag, target)?;
            let hi = p.map_to_factor(factor)?;
            Ok(FeatureVector {
                wsi_id: pyr.id.clone(),
                patch: hi,
                values: embed_histogram(&pyr.read_region(&hi)?)?,
            })
        })
        .collect()
}

/// MinMax-binarizes one slide's features. Returns `None` for a slide without features.
pub fn barcode_set(wsi_id: &str, label: &str, features: &[FeatureVector]) -> Result<Option<BarcodeSet>> {
    if features.is_empty() {
        return Ok(None);
    }
    let barcodes = features
        .iter()
        .map(|f| Ok((minmax_binarize(&f.values)?, f.patch)))
        .collect::<Result<Vec<_>>>()?;
    BarcodeSet::new(wsi_id, label, barcodes).map(Some)
}

/// Groups externally computed features by slide and binarizes them.
/// Slides missing from `labels` are rejected.
pub fn archive_from_features(features: &[FeatureVector], labels: &BTreeMap<String, String>) -> Result<Archive> {
    let mut grouped: BTreeMap<&str, Vec<FeatureVector>> = BTreeMap::new();
    for f in features {
        grouped.entry(f.wsi_id.as_str()).or_default().push(f.clone());
    }
    let dims: BTreeSet<usize> = features.iter().map(|f| f.values.len()).collect();
    if dims.len() > 1 {
        return Err(Error::format("feature vectors have differing dimensions"));
    }
    let mut sets = Vec::new();
    for (id, fs) in grouped {
        let label = labels
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no label for slide {id:?}")))?;
        if let Some(set) = barcode_set(id, label, &fs)? {
            sets.push(set);
        }
    }
    let bits = dims.into_iter().next().unwrap_or(0).saturating_sub(1);
    if sets.is_empty() {
        return Ok(Archive::default());
    }
    Archive::new(bits, sets)
}

/// Everything produced for one slide by one method.
#[derive(Debug, Clone)]
pub struct SlideResult {
    pub wsi_id: String,
    pub label: String,
    pub tissue_patches: usize,
    pub selection: Selection,
    pub features: Vec<FeatureVector>,
    pub barcodes: Option<BarcodeSet>,
}

pub fn process_slide(
    pyr: &ImagePyramid,
    label: &str,
    tp: &TissuePatches,
    method: Method,
    cfg: &PipelineConfig,
) -> Result<SlideResult> {
    let selection = select(tp, method, cfg)?;
    let features = embed_patches(pyr, &selection.patches(), cfg)?;
    let barcodes = barcode_set(&pyr.id, label, &features)?;
    Ok(SlideResult {
        wsi_id: pyr.id.clone(),
        label: label.to_string(),
        tissue_patches: tp.len(),
        selection,
        features,
        barcodes,
    })
}

/// Archive of every slide that produced at least one barcode, in input order.
pub fn build_archive(results: &[SlideResult], method: Method, cfg: &PipelineConfig) -> Result<Archive> {
    let sets: Vec<BarcodeSet> = results.iter().filter_map(|r| r.barcodes.clone()).collect();
    let Some(bits) = sets.first().map(BarcodeSet::bits) else {
        return Ok(Archive::default());
    };
    let mut meta = cfg.describe();
    meta.insert("method".into(), method.to_string());
    Ok(Archive::new(bits, sets)?.with_metadata(meta))
}
