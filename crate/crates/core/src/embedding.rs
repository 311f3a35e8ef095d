//! Patch feature vectors: a built-in histogram embedder and a CSV boundary for
//! features computed by an external model.
//!
//! Feature CSV layout (UTF-8, LF, `.` decimal separator):
//!
//! ```text
//! wsi_id,x0,y0,level_factor,size,f0,f1,...,f{d-1}
//! ```

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use image::RgbImage;

use crate::collage::bin_table;
use crate::error::{Error, Result};
use crate::pyramid::PatchRef;

pub const HISTOGRAM_BINS: usize = 64;
pub const HISTOGRAM_DIM: usize = 3 * HISTOGRAM_BINS;

const KEY_COLUMNS: [&str; 5] = ["wsi_id", "x0", "y0", "level_factor", "size"];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub wsi_id: String,
    pub patch: PatchRef,
    pub values: Vec<f64>,
}

/// Concatenated 64-bin L1-normalized R, G and B histograms (192 values).
pub fn embed_histogram(pixels: &RgbImage) -> Result<Vec<f64>> {
    let n = pixels.width() as u64 * pixels.height() as u64;
    if n == 0 {
        return Err(Error::invalid("cannot embed an empty raster"));
    }
    let table = bin_table(HISTOGRAM_BINS);
    let mut counts = [0u64; HISTOGRAM_DIM];
    for p in pixels.pixels() {
        for c in 0..3 {
            counts[c * HISTOGRAM_BINS + table[p[c] as usize]] += 1;
        }
    }
    Ok(counts.iter().map(|&k| k as f64 / n as f64).collect())
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureVector>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_features(file)
}

/// Parses and validates a feature CSV. Row numbers in errors count data rows from 1.
pub fn parse_features<R: Read>(reader: R) -> Result<Vec<FeatureVector>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::format(format!("unreadable header: {e}")))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::format("missing header"));
    }
    let dim = validate_header(&header)?;

    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::format_at(row, e.to_string()))?;
        if record.len() != header.len() {
            return Err(Error::format_at(
                row,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let coord = |idx: usize| -> Result<u32> {
            record[idx]
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::format_at(row, format!("bad {} value {:?}", KEY_COLUMNS[idx], &record[idx])))
        };
        let patch = PatchRef::new(coord(1)?, coord(2)?, coord(3)?, coord(4)?);
        let mut values = Vec::with_capacity(dim);
        for (j, field) in record.iter().skip(KEY_COLUMNS.len()).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format_at(row, format!("bad value {field:?} in f{j}")))?;
            if !v.is_finite() {
                return Err(Error::format_at(row, format!("non-finite value in f{j}")));
            }
            values.push(v);
        }
        out.push(FeatureVector {
            wsi_id: record[0].to_string(),
            patch,
            values,
        });
    }
    Ok(out)
}

fn validate_header(header: &csv::StringRecord) -> Result<usize> {
    for (i, name) in KEY_COLUMNS.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(Error::format(format!(
                "header column {i} must be {name:?}, found {:?}",
                header.get(i).unwrap_or("")
            )));
        }
    }
    let dim = header.len() - KEY_COLUMNS.len();
    for j in 0..dim {
        let expected = format!("f{j}");
        if header[KEY_COLUMNS.len() + j] != expected {
            return Err(Error::format(format!(
                "feature column {j} must be named {expected:?}, found {:?}",
                &header[KEY_COLUMNS.len() + j]
            )));
        }
    }
    if dim < 2 {
        return Err(Error::format(format!("feature dimension must be at least 2, found {dim}")));
    }
    Ok(dim)
}

pub fn write_features(path: &Path, features: &[FeatureVector]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serialize_features(file, features)
}

pub fn serialize_features<W: Write>(writer: W, features: &[FeatureVector]) -> Result<()> {
    let dim = features.first().map(|f| f.values.len()).unwrap_or(0);
    if features.iter().any(|f| f.values.len() != dim) {
        return Err(Error::invalid("feature vectors have differing dimensions"));
    }
    if !features.is_empty() && dim < 2 {
        return Err(Error::invalid("feature dimension must be at least 2"));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let header: Vec<String> = KEY_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..dim).map(|j| format!("f{j}")))
        .collect();
    w.write_record(&header).map_err(csv_io)?;
    for f in features {
        let mut record = vec![
            f.wsi_id.clone(),
            f.patch.x0.to_string(),
            f.patch.y0.to_string(),
            f.patch.level_factor.to_string(),
            f.patch.size.to_string(),
        ];
        // `Display` for f64 is the shortest string that parses back to the same value.
        record.extend(f.values.iter().map(|v| v.to_string()));
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush().map_err(|e| Error::io("<features>", e))?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::format(e.to_string())
}
