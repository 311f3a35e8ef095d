//! Slide manifest CSV: `path,id,label,base_magnification`.
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub id: String,
    pub label: String,
    pub base_magnification: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let m = Self { rows };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (i, r) in self.rows.iter().enumerate() {
            if r.id.is_empty() {
                return Err(Error::format_at(i + 1, "empty id"));
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::format_at(i + 1, format!("duplicate id {:?}", r.id)));
            }
            if !(r.base_magnification.is_finite() && r.base_magnification > 0.0) {
                return Err(Error::format_at(
                    i + 1,
                    format!("base magnification must be positive, got {}", r.base_magnification),
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut m = Self::parse(file)?;
        for (i, row) in m.rows.iter_mut().enumerate() {
            if row.path.is_relative() {
                row.path = base.join(&row.path);
            }
            if !row.path.is_file() {
                return Err(Error::format_at(
                    i + 1,
                    format!("image {} does not exist", row.path.display()),
                ));
            }
        }
        Ok(m)
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::format(format!("unreadable manifest header: {e}")))?;
        let expected = ["path", "id", "label", "base_magnification"];
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::format(format!(
                "manifest header must be {}, found {:?}",
                expected.join(","),
                header
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.deserialize::<ManifestRow>().enumerate() {
            rows.push(rec.map_err(|e| Error::format_at(i + 1, e.to_string()))?);
        }
        Self::new(rows)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::format(e.to_string()))?;
        }
        if self.rows.is_empty() {
            w.write_record(["path", "id", "label", "base_magnification"])
                .map_err(|e| Error::format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<manifest>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(file)
    }
}
