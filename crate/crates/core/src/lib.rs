//! Compact whole-slide image representations for search.
//!
//! The crate covers the full path from a raster slide to a searchable index:
//!
//! - [`pyramid`]: magnification-aware image pyramids and patch coordinates.
//! - [`segmentation`]: tissue masks and the patch lattice over tissue.
//! - [`collage`]: color descriptors and sequential, percentile-thresholded
//!   patch selection (the collage).
//! - [`mosaic`] and [`kmeans`]: the two-level clustering baseline (the mosaic).
//! - [`embedding`]: patch features, built-in or loaded from CSV.
//! - [`barcode`]: MinMax barcodes, Hamming search and the on-disk archive.
//! - [`evaluation`]: leave-one-out majority-vote evaluation and reports.
//! - [`synth`]: seeded synthetic corpora for end-to-end testing.
//! - [`pipeline`] and [`manifest`]: glue used by the command-line tool.

pub mod barcode;
pub mod collage;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod kmeans;
pub mod manifest;
pub mod mosaic;
pub mod pipeline;
pub mod pyramid;
pub mod segmentation;
pub mod synth;

pub use barcode::{hamming, load_archive, minmax_binarize, save_archive, search, wsi_distance, Archive, Barcode, BarcodeSet, SearchHit};
pub use collage::{collage_to_highmag, color_descriptor, descriptor_distance, percentile, splice_select, Collage, ColorDescriptor, SpliceConfig};
pub use error::{Error, Result};
pub use evaluation::{compute_metrics, leave_one_out, majority_vote, AbstainPolicy, MetricsReport, VoteResult};
pub use mosaic::{mosaic_select, Mosaic, MosaicConfig};
pub use pyramid::{load_image, map_patch, ImagePyramid, PatchRef};
