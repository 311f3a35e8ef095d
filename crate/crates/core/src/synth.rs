//! Seeded synthetic slide corpora.
//!
//! Each image is a white field with one or more elliptical tissue regions.
//! Tissue pixels are drawn from a Gaussian around the class mean color and
//! shifted by a smooth value-noise field, so patches of one class share a
//! color distribution without being identical. Every image has its own
//! ChaCha stream derived from the master seed, so images can be rendered in
//! any order or in parallel with identical results.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestRow};

pub const MIN_CLASS_SEPARATION: f64 = 60.0;
/// Acceptable tissue area fraction of a rendered image.
pub const TISSUE_FRACTION_RANGE: (f64, f64) = (0.15, 0.85);
const VALUE_NOISE_CELLS: u32 = 8;
const MAX_LAYOUT_ATTEMPTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub name: String,
    pub mean_rgb: [u8; 3],
    /// Per-channel standard deviation of the color noise.
    pub jitter: f64,
    /// Inclusive range of tissue regions per image.
    pub blobs: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: Vec<SynthClass>,
    pub image_size: u32,
    pub per_class: usize,
    pub seed: u64,
    pub background: [u8; 3],
    /// Declared objective power of the rendered level 0.
    pub base_magnification: f64,
}

impl SynthSpec {
    /// Three stain-like classes: pink, purple and brick red.
    pub fn three_class(per_class: usize, seed: u64) -> Self {
        let class = |name: &str, mean_rgb| SynthClass {
            name: name.into(),
            mean_rgb,
            jitter: 12.0,
            blobs: (1, 3),
        };
        Self {
            classes: vec![
                class("eosin", [205, 120, 165]),
                class("hematoxylin", [130, 80, 170]),
                class("hemorrhage", [190, 60, 70]),
            ],
            image_size: 1024,
            per_class,
            seed,
            background: [255, 255, 255],
            base_magnification: 2.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("synthetic corpus needs at least one class"));
        }
        if self.per_class < 2 {
            return Err(Error::invalid(format!(
                "per_class must be at least 2 for leave-one-out, got {}",
                self.per_class
            )));
        }
        if self.image_size < 16 {
            return Err(Error::invalid("image size must be at least 16 px"));
        }
        if !(self.base_magnification.is_finite() && self.base_magnification > 0.0) {
            return Err(Error::invalid("base magnification must be positive"));
        }
        for c in &self.classes {
            if !(c.jitter.is_finite() && c.jitter >= 0.0) {
                return Err(Error::invalid(format!("class {} has invalid jitter", c.name)));
            }
            if c.blobs.0 == 0 || c.blobs.0 > c.blobs.1 {
                return Err(Error::invalid(format!("class {} has invalid blob range", c.name)));
            }
        }
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[i + 1..] {
                if a.name == b.name {
                    return Err(Error::invalid(format!("duplicate class name {}", a.name)));
                }
                let d = rgb_distance(a.mean_rgb, b.mean_rgb);
                if d < MIN_CLASS_SEPARATION {
                    return Err(Error::invalid(format!(
                        "classes {} and {} are only {d:.1} apart in RGB (need {MIN_CLASS_SEPARATION})",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_images(&self) -> usize {
        self.classes.len() * self.per_class
    }

    /// Class index and id of the `index`-th image (class-major order).
    pub fn image_id(&self, index: usize) -> (usize, String) {
        let class = index / self.per_class;
        (class, format!("{}_{:03}", self.classes[class].name, index % self.per_class))
    }
}

fn rgb_distance(a: [u8; 3], b: [u8; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Rendered image with its ground-truth tissue region.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    pub label: String,
    pub pixels: RgbImage,
    pub tissue: Vec<bool>,
}

impl SynthImage {
    pub fn tissue_fraction(&self) -> f64 {
        self.tissue.iter().filter(|&&t| t).count() as f64 / self.tissue.len().max(1) as f64
    }
}

fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn layout(rng: &mut ChaCha8Rng, size: u32, blobs: (u32, u32)) -> (Vec<Ellipse>, Vec<bool>) {
    let s = size as f64;
    let mut last = None;
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let count = rng.random_range(blobs.0..=blobs.1);
        let ellipses: Vec<Ellipse> = (0..count)
            .map(|_| {
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                Ellipse {
                    cx: rng.random_range(0.25..0.75) * s,
                    cy: rng.random_range(0.25..0.75) * s,
                    a: rng.random_range(0.12..0.32) * s,
                    b: rng.random_range(0.12..0.32) * s,
                    cos: angle.cos(),
                    sin: angle.sin(),
                }
            })
            .collect();
        let mask: Vec<bool> = (0..size)
            .flat_map(|y| (0..size).map(move |x| (x, y)))
            .map(|(x, y)| ellipses.iter().any(|e| e.contains(x as f64 + 0.5, y as f64 + 0.5)))
            .collect();
        let frac = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        if (TISSUE_FRACTION_RANGE.0..=TISSUE_FRACTION_RANGE.1).contains(&frac) {
            return (ellipses, mask);
        }
        last = Some((ellipses, mask));
    }
    last.expect("at least one layout attempt")
}

/// Smooth field on [0, 1]: random lattice values blended with smoothstep weights.
fn value_noise(rng: &mut ChaCha8Rng, size: u32) -> impl Fn(u32, u32) -> f64 {
    let n = VALUE_NOISE_CELLS as usize + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let cell = size as f64 / VALUE_NOISE_CELLS as f64;
    move |x, y| {
        let fx = x as f64 / cell;
        let fy = y as f64 / cell;
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let (ix, iy) = (ix.min(n - 2), iy.min(n - 2));
        let smooth = |t: f64| {
            let t = t.clamp(0.0, 1.0);
            t * t * (3.0 - 2.0 * t)
        };
        let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
        let at = |i: usize, j: usize| lattice[j * n + i];
        let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
        let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Renders image `index` of the corpus (class-major order).
pub fn render_image(spec: &SynthSpec, index: usize) -> Result<SynthImage> {
    spec.validate()?;
    if index >= spec.n_images() {
        return Err(Error::invalid(format!("image index {index} out of range")));
    }
    let (class_idx, id) = spec.image_id(index);
    let class = &spec.classes[class_idx];
    let mut rng = image_rng(spec.seed, index);
    let size = spec.image_size;
    let (_, tissue) = layout(&mut rng, size, class.blobs);
    // Per-channel modulation fields, each shifting the color by at most ±jitter.
    let fields: Vec<_> = (0..3).map(|_| value_noise(&mut rng, size)).collect();
    let noise = Normal::new(0.0, class.jitter).map_err(|e| Error::invalid(e.to_string()))?;

    let mut pixels = RgbImage::from_pixel(size, size, Rgb(spec.background));
    for y in 0..size {
        for x in 0..size {
            if !tissue[(y * size + x) as usize] {
                continue;
            }
            let mut px = [0u8; 3];
            for c in 0..3 {
                let shift = (fields[c](x, y) - 0.5) * 2.0 * class.jitter;
                let v = class.mean_rgb[c] as f64 + shift + noise.sample(&mut rng);
                px[c] = v.round().clamp(0.0, 255.0) as u8;
            }
            pixels.put_pixel(x, y, Rgb(px));
        }
    }
    Ok(SynthImage {
        id,
        label: class.name.clone(),
        pixels,
        tissue,
    })
}

pub fn render_corpus(spec: &SynthSpec) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    (0..spec.n_images()).into_par_iter().map(|i| render_image(spec, i)).collect()
}

/// Writes `<id>.png` for every image plus `manifest.csv`, returning the manifest.
pub fn generate_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows = (0..spec.n_images())
        .into_par_iter()
        .map(|i| {
            let img = render_image(spec, i)?;
            let file = format!("{}.png", img.id);
            let path = out_dir.join(&file);
            img.pixels.save(&path).map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(&path, io),
                other => Error::Image(other),
            })?;
            Ok(ManifestRow {
                path: file.into(),
                id: img.id,
                label: img.label,
                base_magnification: spec.base_magnification,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest::new(rows)?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
