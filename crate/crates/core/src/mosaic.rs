//! Two-level clustering baseline: color k-means, then spatial k-means inside
//! each color cluster, keeping the patch nearest each spatial centroid.

use serde::{Deserialize, Serialize};

use crate::collage::{factor_for, ColorDescriptor};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, sq_dist, KMeansConfig};
use crate::pyramid::PatchRef;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosaicConfig {
    pub color_k: usize,
    pub select_fraction: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl MosaicConfig {
    pub fn new(color_k: usize, select_fraction: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            color_k,
            select_fraction,
            max_iters: 100,
            tol: 1e-4,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.color_k == 0 {
            return Err(Error::invalid("color_k must be positive"));
        }
        if !(self.select_fraction > 0.0 && self.select_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "select fraction must lie in (0, 1], got {}",
                self.select_fraction
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("tol must be positive"));
        }
        Ok(())
    }

    /// Number of spatial clusters for a color cluster of `m` patches.
    pub fn spatial_k(&self, m: usize) -> usize {
        // Guard against products like 0.05 * 60 = 3.0000000000000004.
        let raw = (self.select_fraction * m as f64 - 1e-9).ceil();
        (raw.max(1.0) as usize).min(m.max(1))
    }

    fn kmeans_config(&self, stream: u64) -> KMeansConfig {
        KMeansConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        }
    }
}

impl Default for MosaicConfig {
    fn default() -> Self {
        Self {
            color_k: 9,
            select_fraction: 0.05,
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MosaicEntry {
    #[serde(flatten)]
    pub patch: PatchRef,
    pub color_cluster: usize,
    pub spatial_cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mosaic {
    pub wsi_id: String,
    pub base_magnification: f64,
    /// Magnification the selection ran at.
    pub magnification: f64,
    pub config: MosaicConfig,
    /// Member count of each color cluster, indexed by `color_cluster`.
    pub color_cluster_sizes: Vec<usize>,
    pub entries: Vec<MosaicEntry>,
}

impl Mosaic {
    pub fn patches(&self) -> impl Iterator<Item = &PatchRef> {
        self.entries.iter().map(|e| &e.patch)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Mosaic = serde_json::from_str(s)?;
        m.config.validate()?;
        Ok(m)
    }

    pub fn to_highmag(&self, target_magnification: f64) -> Result<Vec<PatchRef>> {
        let factor = factor_for(self.base_magnification, self.magnification, target_magnification)?;
        self.entries.iter().map(|e| e.patch.map_to_factor(factor)).collect()
    }
}

pub fn mosaic_select(
    wsi_id: &str,
    base_magnification: f64,
    magnification: f64,
    descriptors: &[(PatchRef, ColorDescriptor)],
    cfg: &MosaicConfig,
) -> Result<Mosaic> {
    cfg.validate()?;
    if descriptors.is_empty() {
        return Err(Error::invalid("mosaic selection needs at least one patch"));
    }
    let colors: Vec<Vec<f64>> = descriptors.iter().map(|(_, d)| d.as_slice().to_vec()).collect();
    let color = kmeans(&colors, cfg.color_k, &cfg.kmeans_config(0))?;

    let mut entries = Vec::new();
    let groups_by_color = color.members();
    let color_cluster_sizes = groups_by_color.iter().map(Vec::len).collect();
    for (c, members) in groups_by_color.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let centers: Vec<Vec<f64>> = members
            .iter()
            .map(|&i| {
                let (x, y) = descriptors[i].0.center();
                vec![x, y]
            })
            .collect();
        let k_s = cfg.spatial_k(members.len());
        let spatial = kmeans(&centers, k_s, &cfg.kmeans_config(c as u64 + 1))?;

        let mut taken = vec![false; members.len()];
        let groups = spatial.members();
        for (s, group) in groups.iter().enumerate() {
            let centroid = &spatial.centroids[s];
            // An empty spatial cluster still yields a patch: the nearest one not yet taken.
            let pool: Vec<usize> = if group.is_empty() {
                (0..members.len()).filter(|&j| !taken[j]).collect()
            } else {
                group.clone()
            };
            let Some(best) = nearest(&pool, &centers, centroid, |j| descriptors[members[j]].0) else {
                continue;
            };
            taken[best] = true;
            entries.push(MosaicEntry {
                patch: descriptors[members[best]].0,
                color_cluster: c,
                spatial_cluster: s,
            });
        }
    }

    Ok(Mosaic {
        wsi_id: wsi_id.to_string(),
        base_magnification,
        magnification,
        config: *cfg,
        color_cluster_sizes,
        entries,
    })
}

/// Candidate closest to `target`; ties go to the smaller `(y0, x0)`.
fn nearest(
    candidates: &[usize],
    points: &[Vec<f64>],
    target: &[f64],
    patch_of: impl Fn(usize) -> PatchRef,
) -> Option<usize> {
    candidates.iter().copied().min_by(|&a, &b| {
        let (pa, pb) = (patch_of(a), patch_of(b));
        sq_dist(&points[a], target)
            .total_cmp(&sq_dist(&points[b], target))
            .then((pa.y0, pa.x0).cmp(&(pb.y0, pb.x0)))
    })
}
