//! Resolution of tunables: command-line flag, then config file, then default.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use splice_core::pipeline::PipelineConfig;

use crate::UsageError;

/// Keys accepted in a config file.
pub const KNOWN_KEYS: [&str; 13] = [
    "seed",
    "jobs",
    "percentile",
    "patch_size",
    "magnification",
    "bins",
    "dup_epsilon",
    "s_min",
    "v_max",
    "min_tissue_fraction",
    "color_k",
    "fraction",
    "feature_magnification",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Flag,
    Config,
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Flag => "flag",
            Source::Config => "config",
            Source::Default => "default",
        })
    }
}

/// A flat `key = value` config file plus a record of where each value came from.
#[derive(Debug, Default)]
pub struct Resolver {
    file: toml::Table,
    pub trace: BTreeMap<&'static str, (String, Source)>,
}

impl Resolver {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: toml::Table = text
            .parse()
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        for (key, value) in &file {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(UsageError(format!("config {}: unknown key {key:?}", path.display())).into());
            }
            if value.is_table() || value.is_array() {
                return Err(UsageError(format!("config {}: {key} must be a plain value", path.display())).into());
            }
        }
        Ok(Self {
            file,
            trace: BTreeMap::new(),
        })
    }

    fn record<T: fmt::Display>(&mut self, key: &'static str, value: &T, source: Source) {
        self.trace.insert(key, (value.to_string(), source));
    }

    pub fn float(&mut self, key: &'static str, flag: Option<f64>, default: f64) -> Result<f64> {
        let (value, source) = match (flag, self.file.get(key)) {
            (Some(v), _) => (v, Source::Flag),
            (None, Some(toml::Value::Float(v))) => (*v, Source::Config),
            (None, Some(toml::Value::Integer(v))) => (*v as f64, Source::Config),
            (None, Some(other)) => return Err(UsageError(format!("config key {key} must be a number, got {other}")).into()),
            (None, None) => (default, Source::Default),
        };
        self.record(key, &value, source);
        Ok(value)
    }

    pub fn optional_float(&mut self, key: &'static str, flag: Option<f64>) -> Result<Option<f64>> {
        if flag.is_none() && !self.file.contains_key(key) {
            self.trace.insert(key, ("base".into(), Source::Default));
            return Ok(None);
        }
        self.float(key, flag, f64::NAN).map(Some)
    }

    pub fn uint(&mut self, key: &'static str, flag: Option<u64>, default: u64) -> Result<u64> {
        let (value, source) = match (flag, self.file.get(key)) {
            (Some(v), _) => (v, Source::Flag),
            (None, Some(toml::Value::Integer(v))) if *v >= 0 => (*v as u64, Source::Config),
            (None, Some(other)) => {
                return Err(UsageError(format!("config key {key} must be a non-negative integer, got {other}")).into())
            }
            (None, None) => (default, Source::Default),
        };
        self.record(key, &value, source);
        Ok(value)
    }

    pub fn print(&self) {
        for (key, (value, source)) in &self.trace {
            eprintln!("config: {key} = {value} ({source})");
        }
    }
}

/// Flag values that feed [`PipelineConfig`]; `None` defers to the config file.
#[derive(Debug, Default, Clone, Copy)]
pub struct PipelineFlags {
    pub percentile: Option<f64>,
    pub patch_size: Option<u64>,
    pub magnification: Option<f64>,
    pub bins: Option<u64>,
    pub s_min: Option<f64>,
    pub v_max: Option<f64>,
    pub min_tissue_fraction: Option<f64>,
    pub color_k: Option<u64>,
    pub fraction: Option<f64>,
    pub feature_magnification: Option<f64>,
}

fn narrow<T: TryFrom<u64>>(key: &str, v: u64) -> Result<T> {
    T::try_from(v).map_err(|_| UsageError(format!("{key} = {v} is out of range")).into())
}

pub fn pipeline_config(r: &mut Resolver, flags: &PipelineFlags, seed: u64) -> Result<PipelineConfig> {
    let d = PipelineConfig::default();
    let mut cfg = d;
    cfg.splice.percentile_k = r.float("percentile", flags.percentile, d.splice.percentile_k)?;
    cfg.splice.patch_size = narrow("patch_size", r.uint("patch_size", flags.patch_size, d.splice.patch_size as u64)?)?;
    cfg.splice.magnification = r.float("magnification", flags.magnification, d.splice.magnification)?;
    cfg.splice.bins_per_channel = narrow("bins", r.uint("bins", flags.bins, d.splice.bins_per_channel as u64)?)?;
    cfg.splice.dup_epsilon = r.float("dup_epsilon", None, d.splice.dup_epsilon)?;
    cfg.segmentation.s_min = r.float("s_min", flags.s_min, d.segmentation.s_min)?;
    cfg.segmentation.v_max = r.float("v_max", flags.v_max, d.segmentation.v_max)?;
    cfg.min_tissue_fraction = r.float("min_tissue_fraction", flags.min_tissue_fraction, d.min_tissue_fraction)?;
    cfg.mosaic.color_k = narrow("color_k", r.uint("color_k", flags.color_k, d.mosaic.color_k as u64)?)?;
    cfg.mosaic.select_fraction = r.float("fraction", flags.fraction, d.mosaic.select_fraction)?;
    cfg.mosaic.seed = seed;
    cfg.feature_magnification = r.optional_float("feature_magnification", flags.feature_magnification)?;
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    if cfg.splice.bins_per_channel == 0 || cfg.splice.bins_per_channel > 256 {
        return Err(UsageError("bins must lie in 1..=256".into()).into());
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolver(text: &str) -> Resolver {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, text).unwrap();
        Resolver::load(Some(&path)).unwrap()
    }

    #[test]
    fn flag_beats_config_beats_default() {
        let mut r = resolver("percentile = 40\ncolor_k = 5\n");
        let flags = PipelineFlags {
            percentile: Some(20.0),
            ..Default::default()
        };
        let cfg = pipeline_config(&mut r, &flags, 7).unwrap();
        assert_eq!(cfg.splice.percentile_k, 20.0);
        assert_eq!(cfg.mosaic.color_k, 5);
        assert_eq!(cfg.mosaic.select_fraction, 0.05);
        assert_eq!(cfg.mosaic.seed, 7);
        assert_eq!(r.trace["percentile"].1, Source::Flag);
        assert_eq!(r.trace["color_k"].1, Source::Config);
        assert_eq!(r.trace["fraction"].1, Source::Default);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "percentil = 30\n").unwrap();
        assert!(Resolver::load(Some(&path)).unwrap_err().is::<UsageError>());

        let mut r = resolver("percentile = \"high\"\n");
        assert!(pipeline_config(&mut r, &PipelineFlags::default(), 0).is_err());
        let mut r = resolver("percentile = 100\n");
        assert!(pipeline_config(&mut r, &PipelineFlags::default(), 0).is_err());
    }
}
