//! Tissue masks on a low-magnification level and the patch lattice over them.

use std::path::Path;

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyramid::{ImagePyramid, PatchRef};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Minimum HSV saturation on [0, 1].
    pub s_min: f64,
    /// Maximum HSV value on [0, 1]; brighter pixels are glass.
    pub v_max: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            s_min: 0.05,
            v_max: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    pub level_factor: u32,
    width: u32,
    height: u32,
    level0_width: u32,
    level0_height: u32,
    bits: Vec<bool>,
}

impl TissueMask {
    /// Builds a mask directly. `level0_*` bound the lattice so that no patch leaves the slide.
    pub fn from_bits(
        level_factor: u32,
        width: u32,
        height: u32,
        level0_size: (u32, u32),
        bits: Vec<bool>,
    ) -> Result<Self> {
        if level_factor == 0 {
            return Err(Error::invalid("level factor must be positive"));
        }
        if bits.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "mask has {} bits, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            level_factor,
            width,
            height,
            level0_width: level0_size.0,
            level0_height: level0_size.1,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn tissue_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.bits.iter().filter(|&&b| b).count() as f64 / self.bits.len() as f64
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save(path)?;
        Ok(())
    }
}

/// Saturation and value of an RGB pixel, both on [0, 1].
fn saturation_value(p: [u8; 3]) -> (f64, f64) {
    let max = p.iter().copied().max().unwrap_or(0) as f64;
    let min = p.iter().copied().min().unwrap_or(0) as f64;
    let s = if max == 0.0 { 0.0 } else { (max - min) / max };
    (s, max / 255.0)
}

pub fn is_tissue_pixel(p: [u8; 3], cfg: &SegmentationConfig) -> bool {
    let (s, v) = saturation_value(p);
    s >= cfg.s_min && v <= cfg.v_max
}

/// Threshold then one 3x3 majority pass. Windows are clipped at the border and a
/// pixel stays tissue only if strictly more than half of its window is tissue.
pub fn threshold_raster(pixels: &RgbImage, cfg: &SegmentationConfig) -> Vec<bool> {
    let (w, h) = pixels.dimensions();
    let raw: Vec<bool> = pixels.pixels().map(|p| is_tissue_pixel(p.0, cfg)).collect();
    majority_smooth(&raw, w, h)
}

fn majority_smooth(raw: &[bool], w: u32, h: u32) -> Vec<bool> {
    let (w, h) = (w as i64, h as i64);
    let mut out = Vec::with_capacity(raw.len());
    for y in 0..h {
        for x in 0..w {
            let mut total = 0u32;
            let mut on = 0u32;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx < 0 || yy < 0 || xx >= w || yy >= h {
                        continue;
                    }
                    total += 1;
                    on += raw[(yy * w + xx) as usize] as u32;
                }
            }
            out.push(2 * on > total);
        }
    }
    out
}

pub fn segment_tissue(p: &ImagePyramid, factor: u32, cfg: &SegmentationConfig) -> Result<TissueMask> {
    let level = p
        .level_by_factor(factor)
        .ok_or_else(|| Error::invalid(format!("pyramid {} has no level at factor {factor}", p.id)))?;
    let bits = threshold_raster(&level.pixels, cfg);
    TissueMask::from_bits(factor, level.width(), level.height(), (p.width(), p.height()), bits)
}

/// Row-major lattice cells of `patch_size` whose tissue fraction reaches `min_tissue_fraction`.
/// Cells that would overflow the level or the level-0 extent are dropped.
pub fn enumerate_patches(mask: &TissueMask, patch_size: u32, min_tissue_fraction: f64) -> Vec<PatchRef> {
    if patch_size == 0 {
        return Vec::new();
    }
    let f = mask.level_factor;
    let step0 = patch_size as u64 * f as u64;
    let cols = mask.width / patch_size;
    let rows = mask.height / patch_size;
    let cell_area = (patch_size as u64 * patch_size as u64) as f64;
    let mut out = Vec::new();
    for cy in 0..rows {
        for cx in 0..cols {
            let x0 = cx as u64 * step0;
            let y0 = cy as u64 * step0;
            if x0 + step0 > mask.level0_width as u64 || y0 + step0 > mask.level0_height as u64 {
                continue;
            }
            let mut on = 0u64;
            for y in cy * patch_size..(cy + 1) * patch_size {
                for x in cx * patch_size..(cx + 1) * patch_size {
                    on += mask.get(x, y) as u64;
                }
            }
            if on as f64 / cell_area >= min_tissue_fraction {
                out.push(PatchRef::new(x0 as u32, y0 as u32, f, patch_size));
            }
        }
    }
    out
}
