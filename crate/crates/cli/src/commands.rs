use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use splice_core::barcode::{load_archive, save_archive, search as search_archive, Archive};
use splice_core::collage::Collage;
use splice_core::embedding::{read_features, write_features, FeatureVector, HISTOGRAM_DIM};
use splice_core::evaluation::{accounting, compute_metrics, leave_one_out, AbstainPolicy, EvaluationReport};
use splice_core::manifest::{Manifest, ManifestRow};
use splice_core::mosaic::Mosaic;
use splice_core::pipeline::{
    archive_from_features, build_archive, embed_patches, process_slide, select as select_patches, tissue_patches,
    Method, PipelineConfig, Selection,
};
use splice_core::pyramid::{load_image, ImagePyramid, PatchRef};
use splice_core::segmentation::{enumerate_patches, segment_tissue};
use splice_core::synth::{generate_corpus, SynthSpec};

use crate::UsageError;

/// `println!` that tolerates a closed stdout (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

pub struct Ctx {
    pub seed: u64,
    pub verbose: bool,
}

pub struct LooOpts {
    pub top: Vec<usize>,
    pub report: PathBuf,
    pub csv: PathBuf,
    pub fallback_top1: bool,
    pub timing: bool,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Labels only; the images themselves need not exist.
fn read_labels(path: &Path) -> Result<Manifest> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Manifest::parse(file).with_context(|| format!("manifest {}", path.display()))
}

fn load_slide(row: &ManifestRow, magnification: f64) -> Result<ImagePyramid> {
    let mut pyr = load_image(&row.path, row.base_magnification).with_context(|| format!("slide {}", row.id))?;
    pyr.id = row.id.clone();
    let level = pyr.level_for_magnification(magnification)?;
    if level.inexact {
        eprintln!(
            "warning: {} has no level at {magnification}x; using factor {} ({}x)",
            row.id,
            level.factor,
            row.base_magnification / level.factor as f64
        );
    }
    Ok(pyr)
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("manifest {}", path.display()))
}

pub fn synth_generate(ctx: &Ctx, out: &Path, per_class: usize, image_size: u32) -> Result<()> {
    let spec = SynthSpec {
        image_size,
        ..SynthSpec::three_class(per_class, ctx.seed)
    };
    spec.validate()?;
    let manifest = generate_corpus(&spec, out)?;
    say!("wrote {} slides and manifest.csv to {}", manifest.len(), out.display());
    Ok(())
}

pub fn segment(_ctx: &Ctx, manifest: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let manifest = load_manifest(manifest)?;
    create_dir(out)?;
    let rows = manifest
        .rows
        .par_iter()
        .map(|row| {
            let pyr = load_slide(row, cfg.splice.magnification)?;
            let level = pyr.level_for_magnification(cfg.splice.magnification)?;
            let mask = segment_tissue(&pyr, level.factor, &cfg.segmentation)?;
            mask.save_png(&out.join(format!("{}.mask.png", row.id)))?;
            let patches = enumerate_patches(&mask, cfg.splice.patch_size, cfg.min_tissue_fraction);
            Ok(format!("{}\t{}\t{:.4}\t{}", row.id, level.factor, mask.tissue_fraction(), patches.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    say!("wsi_id\tlevel_factor\ttissue_fraction\ttissue_patches");
    for line in rows {
        say!("{line}");
    }
    Ok(())
}

pub fn select(_ctx: &Ctx, manifest: &Path, out: &Path, method: Method, cfg: &PipelineConfig) -> Result<()> {
    let manifest = load_manifest(manifest)?;
    create_dir(out)?;
    let rows = manifest
        .rows
        .par_iter()
        .map(|row| {
            let pyr = load_slide(row, cfg.splice.magnification)?;
            let tp = tissue_patches(&pyr, cfg)?;
            let selection = select_patches(&tp, method, cfg)?;
            let (file, json) = match &selection {
                Selection::Collage(c) => (format!("{}.collage.json", row.id), c.to_json()?),
                Selection::Mosaic(m) => (format!("{}.mosaic.json", row.id), m.to_json()?),
                Selection::Lattice(_) => unreachable!("lattice is not a selection command"),
            };
            write_text(&out.join(file), &json)?;
            Ok(format!("{}\t{}\t{}", row.id, tp.len(), selection.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    say!("wsi_id\ttissue_patches\tselected");
    for line in rows {
        say!("{line}");
    }
    Ok(())
}

/// Patches listed in `<dir>/<id>.collage.json` or `<dir>/<id>.mosaic.json`.
fn stored_selection(dir: &Path, id: &str) -> Result<Vec<PatchRef>> {
    let collage = dir.join(format!("{id}.collage.json"));
    let mosaic = dir.join(format!("{id}.mosaic.json"));
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let (owner, patches) = match (collage.is_file(), mosaic.is_file()) {
        (true, true) => {
            return Err(UsageError(format!("{} holds both a collage and a mosaic for {id}", dir.display())).into())
        }
        (true, false) => {
            let c = Collage::from_json(&read(&collage)?).with_context(|| collage.display().to_string())?;
            (c.wsi_id.clone(), c.patches().copied().collect())
        }
        (false, true) => {
            let m = Mosaic::from_json(&read(&mosaic)?).with_context(|| mosaic.display().to_string())?;
            (m.wsi_id.clone(), m.patches().copied().collect())
        }
        (false, false) => bail!(splice_core::Error::Format {
            row: None,
            msg: format!("no collage or mosaic for {id} in {}", dir.display()),
        }),
    };
    if owner != id {
        bail!(splice_core::Error::Format {
            row: None,
            msg: format!("selection file for {id} belongs to {owner}"),
        });
    }
    Ok(patches)
}

pub fn embed_histogram(
    _ctx: &Ctx,
    manifest: &Path,
    selections: Option<&Path>,
    out: &Path,
    cfg: &PipelineConfig,
) -> Result<()> {
    let manifest = load_manifest(manifest)?;
    let per_slide = manifest
        .rows
        .par_iter()
        .map(|row| {
            let pyr = load_slide(row, cfg.splice.magnification)?;
            let patches = match selections {
                Some(dir) => stored_selection(dir, &row.id)?,
                None => tissue_patches(&pyr, cfg)?.descriptors.into_iter().map(|(p, _)| p).collect(),
            };
            Ok(embed_patches(&pyr, &patches, cfg)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let features: Vec<FeatureVector> = per_slide.into_iter().flatten().collect();
    write_features(out, &features)?;
    say!(
        "wrote {} feature rows ({} dimensions) for {} slides to {}",
        features.len(),
        HISTOGRAM_DIM,
        manifest.len(),
        out.display()
    );
    Ok(())
}

pub fn embed_external(_ctx: &Ctx, features: &Path, manifest: Option<&Path>, out: &Path) -> Result<()> {
    let rows = read_features(features).with_context(|| format!("features {}", features.display()))?;
    let dims: BTreeSet<usize> = rows.iter().map(|f| f.values.len()).collect();
    if let Some(path) = manifest {
        let m = read_labels(path)?;
        if let Some(f) = rows.iter().find(|f| m.get(&f.wsi_id).is_none()) {
            bail!(splice_core::Error::Format {
                row: None,
                msg: format!("feature slide {} is not in the manifest", f.wsi_id),
            });
        }
    }
    write_features(out, &rows)?;
    say!(
        "imported {} feature rows ({} dimensions) to {}",
        rows.len(),
        dims.into_iter().next().unwrap_or(0),
        out.display()
    );
    Ok(())
}

pub fn index_build(_ctx: &Ctx, manifest: &Path, features: &Path, out: &Path) -> Result<()> {
    let manifest = read_labels(manifest)?;
    let rows = read_features(features).with_context(|| format!("features {}", features.display()))?;
    let labels: BTreeMap<String, String> = manifest.rows.iter().map(|r| (r.id.clone(), r.label.clone())).collect();
    if let Some(f) = rows.iter().find(|f| !labels.contains_key(&f.wsi_id)) {
        bail!(splice_core::Error::Format {
            row: None,
            msg: format!("feature slide {} is not in the manifest", f.wsi_id),
        });
    }
    let present: BTreeSet<&str> = rows.iter().map(|f| f.wsi_id.as_str()).collect();
    for r in &manifest.rows {
        if !present.contains(r.id.as_str()) {
            eprintln!("warning: {} has no features and is left out of the index", r.id);
        }
    }
    let mut meta = BTreeMap::new();
    meta.insert("features".to_string(), features.display().to_string());
    meta.insert("feature_dim".to_string(), rows.first().map_or(0, |f| f.values.len()).to_string());
    let archive = archive_from_features(&rows, &labels)?.with_metadata(meta);
    if archive.is_empty() {
        bail!(splice_core::Error::Format {
            row: None,
            msg: "feature file has no rows".into(),
        });
    }
    save_archive(&archive, out)?;
    say!(
        "indexed {} slides, {} barcodes of {} bits, {} bytes to {}",
        archive.len(),
        archive.barcode_count(),
        archive.bits_per_barcode(),
        archive.serialized_len(),
        out.display()
    );
    Ok(())
}

pub fn search(_ctx: &Ctx, archive: &Path, query: &str, top: usize, include_self: bool) -> Result<()> {
    if top == 0 {
        return Err(UsageError("--top must be positive".into()).into());
    }
    let archive = load_archive(archive).with_context(|| format!("archive {}", archive.display()))?;
    let q = archive
        .get(query)
        .ok_or_else(|| UsageError(format!("query {query:?} is not in the archive")))?;
    let exclude = (!include_self).then_some(query);
    let hits = search_archive(&archive, q, top, exclude)?;
    say!("rank\twsi_id\tlabel\tdistance");
    for (i, h) in hits.iter().enumerate() {
        say!("{}\t{}\t{}\t{}", i + 1, h.wsi_id, h.label, h.distance);
    }
    Ok(())
}

fn check_top(top: &[usize]) -> Result<Vec<usize>> {
    if top.is_empty() || top.contains(&0) {
        return Err(UsageError("--top values must be positive".into()).into());
    }
    let mut t = top.to_vec();
    t.sort_unstable();
    t.dedup();
    Ok(t)
}

fn evaluate(
    ctx: &Ctx,
    archive: &Archive,
    method: String,
    feature_dim: usize,
    mut settings: BTreeMap<String, String>,
    opts: &LooOpts,
) -> Result<()> {
    let top = check_top(&opts.top)?;
    if archive.len() < 2 {
        bail!(splice_core::Error::Format {
            row: None,
            msg: format!("leave-one-out needs at least 2 indexed slides, found {}", archive.len()),
        });
    }
    let policy = if opts.fallback_top1 {
        AbstainPolicy::FallbackTopOne
    } else {
        AbstainPolicy::CountAsError
    };
    let start = std::time::Instant::now();
    let results = leave_one_out(archive, &top, policy)?;
    let seconds = if opts.timing { start.elapsed().as_secs_f64() } else { 0.0 };

    let classes: BTreeSet<String> = archive.sets().iter().map(|s| s.label.clone()).collect();
    let mut metrics = BTreeMap::new();
    for (n, r) in &results {
        metrics.insert(*n, compute_metrics(r, &classes)?);
    }
    settings.insert("abstain".into(), if opts.fallback_top1 { "top1" } else { "error" }.into());
    settings.insert("top".into(), top.iter().map(usize::to_string).collect::<Vec<_>>().join(","));
    let report = EvaluationReport {
        method,
        accounting: accounting(archive, feature_dim, seconds),
        metrics,
        settings,
    };
    write_text(&opts.report, &report.to_json()?)?;
    let csv = File::create(&opts.csv).with_context(|| format!("writing {}", opts.csv.display()))?;
    report.write_csv(csv)?;

    let a = &report.accounting;
    say!(
        "{}: {} slides, {} patches ({:.1} ± {:.1} per slide), barcodes {:.2} KB/slide, search {:.3} s",
        report.method,
        a.per_wsi.len(),
        a.total_patches,
        a.patches_per_wsi_mean,
        a.patches_per_wsi_std,
        a.barcode_kb_mean,
        a.search_seconds
    );
    for (n, m) in &report.metrics {
        let name = if *n == 1 { "top-1".to_string() } else { format!("MV@{n}") };
        say!(
            "{name}\taccuracy {:.4}\tmacro F1 {:.4}\tabstentions {}",
            m.accuracy, m.macro_f1, m.abstentions
        );
    }
    if ctx.verbose {
        eprintln!("wrote {} and {}", opts.report.display(), opts.csv.display());
    }
    Ok(())
}

pub fn eval_loo_pipeline(ctx: &Ctx, manifest: &Path, method: Method, cfg: &PipelineConfig, opts: &LooOpts) -> Result<()> {
    check_top(&opts.top)?;
    let manifest = load_manifest(manifest)?;
    let results = manifest
        .rows
        .par_iter()
        .map(|row| {
            let pyr = load_slide(row, cfg.splice.magnification)?;
            let tp = tissue_patches(&pyr, cfg)?;
            Ok(process_slide(&pyr, &row.label, &tp, method, cfg)?)
        })
        .collect::<Result<Vec<_>>>()?;
    for r in results.iter().filter(|r| r.barcodes.is_none()) {
        eprintln!("warning: {} has no tissue patches and is left out of the index", r.wsi_id);
    }
    let archive = build_archive(&results, method, cfg)?;
    let mut settings = cfg.describe();
    settings.insert("embedder".into(), "histogram".into());
    evaluate(ctx, &archive, method.to_string(), HISTOGRAM_DIM, settings, opts)
}

pub fn eval_loo_archive(ctx: &Ctx, path: &Path, opts: &LooOpts) -> Result<()> {
    check_top(&opts.top)?;
    let archive = load_archive(path).with_context(|| format!("archive {}", path.display()))?;
    let method = archive
        .metadata
        .get("method")
        .cloned()
        .unwrap_or_else(|| "external".to_string());
    let feature_dim = archive
        .metadata
        .get("feature_dim")
        .map(|d| d.parse::<usize>())
        .transpose()
        .map_err(|e| anyhow!("archive metadata feature_dim: {e}"))?
        .unwrap_or(archive.bits_per_barcode() + 1);
    let mut settings = archive.metadata.clone();
    settings.insert("archive".into(), path.display().to_string());
    evaluate(ctx, &archive, method, feature_dim, settings, opts)
}
