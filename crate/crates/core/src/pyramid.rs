//! Multi-resolution image pyramids with magnification semantics.
//!
//! Level 0 is the full-resolution raster scanned at `base_magnification`.
//! Every further level halves both dimensions with a 2x2 box filter, so the
//! level at downsample factor `f` corresponds to `base_magnification / f`.
//! All patch coordinates are kept in level-0 pixels.

use std::path::Path;

use image::{ImageFormat, ImageReader, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Downsampling stops before a level whose shorter side would drop below this.
pub const MIN_LEVEL_SIDE: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub factor: u32,
    pub pixels: RgbImage,
}

impl Level {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePyramid {
    pub id: String,
    pub base_magnification: f64,
    levels: Vec<Level>,
}

/// Result of resolving a magnification to a pyramid level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelChoice {
    pub index: usize,
    pub factor: u32,
    /// Set when the pyramid has no level at exactly `base / target`.
    pub inexact: bool,
}

/// A lattice cell: level-0 origin plus the level and side length it was cut at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchRef {
    pub x0: u32,
    pub y0: u32,
    pub level_factor: u32,
    pub size: u32,
}

impl PatchRef {
    pub fn new(x0: u32, y0: u32, level_factor: u32, size: u32) -> Self {
        Self {
            x0,
            y0,
            level_factor,
            size,
        }
    }

    /// Side length of the patch in level-0 pixels.
    pub fn footprint(&self) -> u64 {
        self.size as u64 * self.level_factor as u64
    }

    /// Level-0 center, used for spatial clustering.
    pub fn center(&self) -> (f64, f64) {
        let half = self.footprint() as f64 / 2.0;
        (self.x0 as f64 + half, self.y0 as f64 + half)
    }

    pub fn is_lattice_aligned(&self) -> bool {
        let step = self.footprint();
        step > 0 && (self.x0 as u64).is_multiple_of(step) && (self.y0 as u64).is_multiple_of(step)
    }

    /// Re-express the patch at another downsample factor with the same level-0 footprint.
    pub fn map_to_factor(&self, to_factor: u32) -> Result<PatchRef> {
        map_patch(*self, to_factor)
    }
}

pub fn map_patch(pr: PatchRef, to_factor: u32) -> Result<PatchRef> {
    if to_factor == 0 || pr.level_factor == 0 {
        return Err(Error::invalid("downsample factors must be positive"));
    }
    let from = pr.level_factor;
    if !to_factor.is_multiple_of(from) && !from.is_multiple_of(to_factor) {
        return Err(Error::invalid(format!(
            "factors {from} and {to_factor} are not commensurate"
        )));
    }
    let footprint = pr.footprint();
    if !footprint.is_multiple_of(to_factor as u64) {
        return Err(Error::invalid(format!(
            "patch of {} px at factor {from} cannot be expressed at factor {to_factor}",
            pr.size
        )));
    }
    let size = u32::try_from(footprint / to_factor as u64)
        .map_err(|_| Error::invalid("mapped patch size overflows u32"))?;
    Ok(PatchRef {
        size,
        level_factor: to_factor,
        ..pr
    })
}

/// One 2x box-filter step. Odd trailing rows/columns are replicated before averaging.
pub fn downsample_2x(src: &RgbImage) -> RgbImage {
    let (w, h) = src.dimensions();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    RgbImage::from_fn(nw, nh, |x, y| {
        let xs = [2 * x, (2 * x + 1).min(w - 1)];
        let ys = [2 * y, (2 * y + 1).min(h - 1)];
        let mut acc = [0u32; 3];
        for &yy in &ys {
            for &xx in &xs {
                let p = src.get_pixel(xx, yy);
                for c in 0..3 {
                    acc[c] += p[c] as u32;
                }
            }
        }
        Rgb([
            ((acc[0] + 2) / 4) as u8,
            ((acc[1] + 2) / 4) as u8,
            ((acc[2] + 2) / 4) as u8,
        ])
    })
}

impl ImagePyramid {
    pub fn from_raster(id: impl Into<String>, base_magnification: f64, raster: RgbImage) -> Result<Self> {
        if !(base_magnification.is_finite() && base_magnification > 0.0) {
            return Err(Error::invalid(format!(
                "base magnification must be positive, got {base_magnification}"
            )));
        }
        if raster.width() == 0 || raster.height() == 0 {
            return Err(Error::invalid("image has zero area"));
        }
        let mut levels = vec![Level {
            factor: 1,
            pixels: raster,
        }];
        loop {
            let last = levels.last().expect("level 0 present");
            let (w, h) = last.pixels.dimensions();
            if w.div_ceil(2).min(h.div_ceil(2)) < MIN_LEVEL_SIDE {
                break;
            }
            let next = Level {
                factor: last.factor * 2,
                pixels: downsample_2x(&last.pixels),
            };
            levels.push(next);
        }
        Ok(Self {
            id: id.into(),
            base_magnification,
            levels,
        })
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level0(&self) -> &Level {
        &self.levels[0]
    }

    pub fn width(&self) -> u32 {
        self.level0().width()
    }

    pub fn height(&self) -> u32 {
        self.level0().height()
    }

    pub fn level_by_factor(&self, factor: u32) -> Option<&Level> {
        self.levels.iter().find(|l| l.factor == factor)
    }

    /// Picks the level whose factor is closest to `base / target`; ties go to the smaller factor.
    pub fn level_for_magnification(&self, target: f64) -> Result<LevelChoice> {
        if !(target.is_finite() && target > 0.0) {
            return Err(Error::invalid(format!("target magnification must be positive, got {target}")));
        }
        if target > self.base_magnification * (1.0 + 1e-9) {
            return Err(Error::invalid(format!(
                "target magnification {target} exceeds base {}",
                self.base_magnification
            )));
        }
        let wanted = self.base_magnification / target;
        let mut best = 0usize;
        let mut best_gap = f64::INFINITY;
        for (i, level) in self.levels.iter().enumerate() {
            let gap = (level.factor as f64 - wanted).abs();
            // Levels are sorted by factor, so strict `<` keeps the smaller factor on ties.
            if gap < best_gap {
                best = i;
                best_gap = gap;
            }
        }
        Ok(LevelChoice {
            index: best,
            factor: self.levels[best].factor,
            inexact: best_gap > 1e-9 * wanted,
        })
    }

    /// Copies the pixels covered by `patch` from the level at `patch.level_factor`.
    pub fn read_region(&self, patch: &PatchRef) -> Result<RgbImage> {
        let level = self.level_by_factor(patch.level_factor).ok_or_else(|| {
            Error::invalid(format!(
                "pyramid {} has no level at factor {}",
                self.id, patch.level_factor
            ))
        })?;
        if patch.size == 0 || !patch.x0.is_multiple_of(patch.level_factor) || !patch.y0.is_multiple_of(patch.level_factor) {
            return Err(Error::invalid(format!("patch {patch:?} is not addressable at its level")));
        }
        let x = patch.x0 / patch.level_factor;
        let y = patch.y0 / patch.level_factor;
        if x as u64 + patch.size as u64 > level.width() as u64 || y as u64 + patch.size as u64 > level.height() as u64 {
            return Err(Error::invalid(format!(
                "patch {patch:?} extends past the {}x{} level",
                level.width(),
                level.height()
            )));
        }
        Ok(image::imageops::crop_imm(&level.pixels, x, y, patch.size, patch.size).to_image())
    }
}

/// Loads a PNG or single-page TIFF as a pyramid; the id is the file stem.
pub fn load_image(path: &Path, base_magnification: f64) -> Result<ImagePyramid> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Tiff) => {}
        other => {
            return Err(Error::format(format!(
                "{}: unsupported image format {other:?} (PNG or TIFF expected)",
                path.display()
            )))
        }
    }
    let raster = reader.decode()?.to_rgb8();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ImagePyramid::from_raster(id, base_magnification, raster)
}
