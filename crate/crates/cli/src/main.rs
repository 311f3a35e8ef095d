//! `splice`: segment slides, select collage or mosaic patches, embed, index,
//! search and evaluate.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error.

mod commands;
mod settings;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use settings::{PipelineFlags, Resolver};

/// Bad arguments or configuration, reported with exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "splice", version, about = "Compact whole-slide image representations for search")]
struct Cli {
    /// Seed for every random choice (mosaic clustering, synthetic corpora).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<u64>,

    /// Print the resolved configuration to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,

    /// Flat `key = value` TOML file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic corpora.
    Synth {
        #[command(subcommand)]
        action: SynthAction,
    },
    /// Write tissue masks at the selection magnification.
    Segment(SegmentArgs),
    /// Select collage patches by sequential percentile thresholding.
    Splice(SpliceArgs),
    /// Select mosaic patches by color then spatial k-means.
    Mosaic(MosaicArgs),
    /// Compute or import patch features as CSV.
    Embed(EmbedArgs),
    /// Barcode archives.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Rank archive slides against one query slide.
    Search(SearchArgs),
    /// Retrieval evaluation.
    Eval {
        #[command(subcommand)]
        action: EvalAction,
    },
}

#[derive(Subcommand, Debug)]
enum SynthAction {
    /// Render a labeled corpus of PNG slides plus manifest.csv.
    Generate(SynthArgs),
}

#[derive(Subcommand, Debug)]
enum IndexAction {
    /// Binarize a feature CSV into an archive.
    Build(IndexArgs),
}

#[derive(Subcommand, Debug)]
enum EvalAction {
    /// Leave-one-out majority-vote retrieval.
    Loo(LooArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    per_class: usize,
    #[arg(long, default_value_t = 1024)]
    image_size: u32,
}

/// Options shared by everything that cuts the tissue lattice.
#[derive(Args, Debug, Clone, Copy)]
struct LatticeOpts {
    /// Patch side in pixels at the selection level.
    #[arg(long)]
    patch_size: Option<u64>,
    /// Selection magnification.
    #[arg(long)]
    magnification: Option<f64>,
    /// Histogram bins per channel of the color descriptor.
    #[arg(long)]
    bins: Option<u64>,
    #[arg(long)]
    s_min: Option<f64>,
    #[arg(long)]
    v_max: Option<f64>,
    /// Minimum tissue fraction for a lattice cell to count as tissue.
    #[arg(long)]
    min_tissue: Option<f64>,
}

impl LatticeOpts {
    fn flags(&self) -> PipelineFlags {
        PipelineFlags {
            patch_size: self.patch_size,
            magnification: self.magnification,
            bins: self.bins,
            s_min: self.s_min,
            v_max: self.v_max,
            min_tissue_fraction: self.min_tissue,
            ..Default::default()
        }
    }
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long, value_name = "CSV")]
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    lattice: LatticeOpts,
}

#[derive(Args, Debug)]
struct SpliceArgs {
    #[arg(long, value_name = "CSV")]
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Percentile of reference-to-remaining distances used as the threshold [default: 30].
    #[arg(long)]
    percentile: Option<f64>,
    #[command(flatten)]
    lattice: LatticeOpts,
}

#[derive(Args, Debug)]
struct MosaicArgs {
    #[arg(long, value_name = "CSV")]
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of color clusters [default: 9].
    #[arg(long)]
    color_k: Option<u64>,
    /// Fraction of each color cluster kept [default: 0.05].
    #[arg(long)]
    fraction: Option<f64>,
    #[command(flatten)]
    lattice: LatticeOpts,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum EmbedMethod {
    Histogram,
    External,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long, value_enum, default_value = "histogram")]
    method: EmbedMethod,
    /// Slides to embed (histogram) or to check ids against (external).
    #[arg(long, value_name = "CSV")]
    manifest: Option<PathBuf>,
    /// Directory of `<id>.collage.json` or `<id>.mosaic.json`; without it the full lattice is embedded.
    #[arg(long, value_name = "DIR")]
    selections: Option<PathBuf>,
    /// Externally computed feature CSV (external method).
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
    /// Magnification features are cut at [default: slide base].
    #[arg(long)]
    feature_magnification: Option<f64>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    lattice: LatticeOpts,
}

#[derive(Args, Debug)]
struct IndexArgs {
    /// Supplies the label of every slide.
    #[arg(long, value_name = "CSV")]
    manifest: PathBuf,
    #[arg(long, value_name = "FILE")]
    features: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long, value_name = "FILE")]
    archive: PathBuf,
    /// Archive id of the query slide.
    #[arg(long, value_name = "ID")]
    query: String,
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Keep the query slide among the candidates.
    #[arg(long)]
    include_self: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum EvalMethod {
    Splice,
    Mosaic,
    Lattice,
}

#[derive(Args, Debug)]
struct LooArgs {
    /// Run the full pipeline over these slides with the histogram embedder.
    #[arg(long, value_name = "CSV", conflicts_with = "archive", required_unless_present = "archive")]
    manifest: Option<PathBuf>,
    /// Evaluate an existing archive instead.
    #[arg(long, value_name = "FILE")]
    archive: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "splice")]
    method: EvalMethod,
    /// Comma-separated top-n values.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    top: Vec<usize>,
    #[arg(long, value_name = "FILE")]
    report: PathBuf,
    /// CSV report path [default: the report path with a .csv extension].
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Use the top-1 label when no label reaches the vote quota.
    #[arg(long)]
    fallback_top1: bool,
    /// Record zero search time so repeated runs write identical reports.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long)]
    color_k: Option<u64>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    feature_magnification: Option<f64>,
    #[command(flatten)]
    lattice: LatticeOpts,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<UsageError>() {
        return 1;
    }
    match err.downcast_ref::<splice_core::Error>() {
        Some(e) if !e.is_data_error() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let Some(command) = cli.command else {
        eprintln!("{}", Cli::command().render_help());
        return ExitCode::from(1);
    };
    match run(command, cli.seed, cli.jobs, cli.verbose, cli.config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command, seed: Option<u64>, jobs: Option<u64>, verbose: bool, config: Option<PathBuf>) -> anyhow::Result<()> {
    let mut r = Resolver::load(config.as_deref())?;
    let seed = r.uint("seed", seed, 0)?;
    let jobs = r.uint("jobs", jobs, 0)?;
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs as usize)
            .build_global()
            .map_err(|e| UsageError(format!("cannot start {jobs} workers: {e}")))?;
    }
    let ctx = commands::Ctx { seed, verbose };

    match command {
        Command::Synth {
            action: SynthAction::Generate(a),
        } => {
            finish(&r, verbose);
            commands::synth_generate(&ctx, &a.out, a.per_class, a.image_size)
        }
        Command::Segment(a) => {
            let cfg = settings::pipeline_config(&mut r, &a.lattice.flags(), seed)?;
            finish(&r, verbose);
            commands::segment(&ctx, &a.manifest, &a.out, &cfg)
        }
        Command::Splice(a) => {
            let flags = PipelineFlags {
                percentile: a.percentile,
                ..a.lattice.flags()
            };
            let cfg = settings::pipeline_config(&mut r, &flags, seed)?;
            finish(&r, verbose);
            commands::select(&ctx, &a.manifest, &a.out, splice_core::pipeline::Method::Splice, &cfg)
        }
        Command::Mosaic(a) => {
            let flags = PipelineFlags {
                color_k: a.color_k,
                fraction: a.fraction,
                ..a.lattice.flags()
            };
            let cfg = settings::pipeline_config(&mut r, &flags, seed)?;
            finish(&r, verbose);
            commands::select(&ctx, &a.manifest, &a.out, splice_core::pipeline::Method::Mosaic, &cfg)
        }
        Command::Embed(a) => {
            let flags = PipelineFlags {
                feature_magnification: a.feature_magnification,
                ..a.lattice.flags()
            };
            let cfg = settings::pipeline_config(&mut r, &flags, seed)?;
            finish(&r, verbose);
            match a.method {
                EmbedMethod::Histogram => {
                    if a.features.is_some() {
                        return Err(UsageError("--features only applies to --method external".into()).into());
                    }
                    let manifest = a
                        .manifest
                        .ok_or_else(|| UsageError("--method histogram needs --manifest".into()))?;
                    commands::embed_histogram(&ctx, &manifest, a.selections.as_deref(), &a.out, &cfg)
                }
                EmbedMethod::External => {
                    let features = a
                        .features
                        .ok_or_else(|| UsageError("--method external needs --features FILE".into()))?;
                    commands::embed_external(&ctx, &features, a.manifest.as_deref(), &a.out)
                }
            }
        }
        Command::Index {
            action: IndexAction::Build(a),
        } => {
            finish(&r, verbose);
            commands::index_build(&ctx, &a.manifest, &a.features, &a.out)
        }
        Command::Search(a) => {
            finish(&r, verbose);
            commands::search(&ctx, &a.archive, &a.query, a.top, a.include_self)
        }
        Command::Eval {
            action: EvalAction::Loo(a),
        } => {
            let flags = PipelineFlags {
                percentile: a.percentile,
                color_k: a.color_k,
                fraction: a.fraction,
                feature_magnification: a.feature_magnification,
                ..a.lattice.flags()
            };
            let cfg = settings::pipeline_config(&mut r, &flags, seed)?;
            finish(&r, verbose);
            let method = match a.method {
                EvalMethod::Splice => splice_core::pipeline::Method::Splice,
                EvalMethod::Mosaic => splice_core::pipeline::Method::Mosaic,
                EvalMethod::Lattice => splice_core::pipeline::Method::Lattice,
            };
            let csv = a.csv.unwrap_or_else(|| a.report.with_extension("csv"));
            let opts = commands::LooOpts {
                top: a.top,
                report: a.report,
                csv,
                fallback_top1: a.fallback_top1,
                timing: !a.no_timing,
            };
            match (a.manifest, a.archive) {
                (Some(m), None) => commands::eval_loo_pipeline(&ctx, &m, method, &cfg, &opts),
                (None, Some(path)) => commands::eval_loo_archive(&ctx, &path, &opts),
                _ => Err(UsageError("give exactly one of --manifest or --archive".into()).into()),
            }
        }
    }
}

fn finish(r: &Resolver, verbose: bool) {
    if verbose {
        r.print();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&UsageError("x".into()).into()), 1);
        assert_eq!(exit_code(&splice_core::Error::InvalidInput("x".into()).into()), 1);
        assert_eq!(exit_code(&splice_core::Error::EmptyArchive.into()), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("disk full")), 2);
    }
}
