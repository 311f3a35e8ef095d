//! MinMax barcodes, Hamming search and the binary archive.
//!
//! # Archive layout
//!
//! All integers little-endian.
//!
//! ```text
//! "SPLB"  u8 version (=1)  u32 bits_per_barcode  u32 n_sets
//! per set:     u16 id_len, id (UTF-8), u16 label_len, label (UTF-8), u32 n_barcodes
//! per barcode: u32 x0, u32 y0, u16 level_factor, u16 size, ceil(bits/8) packed bytes
//! ```
//!
//! Bits are packed little-endian within each byte (bit `i` lives in byte
//! `i / 8` at position `i % 8`); unused high bits of the last byte are zero.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pyramid::PatchRef;

pub const MAGIC: &[u8; 4] = b"SPLB";
pub const VERSION: u8 = 1;
const FILE_HEADER_LEN: usize = 4 + 1 + 4 + 4;
const BARCODE_COORD_LEN: usize = 4 + 4 + 2 + 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Barcode {
    bits: usize,
    bytes: Vec<u8>,
}

pub fn packed_len(bits: usize) -> usize {
    bits.div_ceil(8)
}

impl Barcode {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut bytes = vec![0u8; packed_len(bits.len())];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        Self {
            bits: bits.len(),
            bytes,
        }
    }

    /// Wraps packed bytes, rejecting wrong lengths or set pad bits.
    pub fn from_packed(bits: usize, bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() != packed_len(bits) {
            return Err(Error::format(format!(
                "{} packed bytes cannot hold exactly {bits} bits",
                bytes.len()
            )));
        }
        let used = bits % 8;
        if used != 0 && bytes[bytes.len() - 1] >> used != 0 {
            return Err(Error::format("barcode pad bits are not zero"));
        }
        Ok(Self { bits, bytes })
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.bits, "bit {i} out of range for {}-bit barcode", self.bits);
        self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn complement(&self) -> Self {
        let bits: Vec<bool> = (0..self.bits).map(|i| !self.bit(i)).collect();
        Self::from_bits(&bits)
    }
}

/// Bit `i` is set iff `f[i + 1] > f[i]`; the barcode has `d - 1` bits.
pub fn minmax_binarize(values: &[f64]) -> Result<Barcode> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "MinMax needs at least 2 features, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("MinMax input must be finite"));
    }
    let bits: Vec<bool> = values.windows(2).map(|w| w[1] - w[0] > 0.0).collect();
    Ok(Barcode::from_bits(&bits))
}

pub fn hamming(a: &Barcode, b: &Barcode) -> Result<u32> {
    if a.bits != b.bits {
        return Err(Error::invalid(format!(
            "barcode lengths differ: {} vs {}",
            a.bits, b.bits
        )));
    }
    Ok(hamming_packed(&a.bytes, &b.bytes))
}

/// Popcount of XOR over 64-bit words, then the byte tail.
#[inline]
pub(crate) fn hamming_packed(a: &[u8], b: &[u8]) -> u32 {
    let mut words_a = a.chunks_exact(8);
    let mut words_b = b.chunks_exact(8);
    let mut total = 0u32;
    for (x, y) in (&mut words_a).zip(&mut words_b) {
        let x = u64::from_le_bytes(x.try_into().expect("8-byte chunk"));
        let y = u64::from_le_bytes(y.try_into().expect("8-byte chunk"));
        total += (x ^ y).count_ones();
    }
    for (x, y) in words_a.remainder().iter().zip(words_b.remainder()) {
        total += (x ^ y).count_ones();
    }
    total
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BarcodeSet {
    pub wsi_id: String,
    pub label: String,
    pub barcodes: Vec<(Barcode, PatchRef)>,
}

impl BarcodeSet {
    pub fn new(wsi_id: impl Into<String>, label: impl Into<String>, barcodes: Vec<(Barcode, PatchRef)>) -> Result<Self> {
        let set = Self {
            wsi_id: wsi_id.into(),
            label: label.into(),
            barcodes,
        };
        if set.barcodes.is_empty() {
            return Err(Error::invalid(format!("barcode set {} is empty", set.wsi_id)));
        }
        let bits = set.bits();
        if set.barcodes.iter().any(|(b, _)| b.len() != bits) {
            return Err(Error::invalid(format!(
                "barcode set {} mixes barcode lengths",
                set.wsi_id
            )));
        }
        Ok(set)
    }

    pub fn bits(&self) -> usize {
        self.barcodes.first().map(|(b, _)| b.len()).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.barcodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.barcodes.is_empty()
    }

    /// Bytes this set occupies in the archive file.
    pub fn serialized_len(&self) -> usize {
        2 + self.wsi_id.len()
            + 2
            + self.label.len()
            + 4
            + self.barcodes.len() * (BARCODE_COORD_LEN + packed_len(self.bits()))
    }
}

/// Median over `q`'s barcodes of each one's minimum Hamming distance into `t`.
///
/// Directional: `wsi_distance(q, t)` and `wsi_distance(t, q)` may differ.
pub fn wsi_distance(q: &BarcodeSet, t: &BarcodeSet) -> Result<f64> {
    if q.is_empty() || t.is_empty() {
        return Err(Error::invalid("cannot compare empty barcode sets"));
    }
    if q.bits() != t.bits() {
        return Err(Error::invalid(format!(
            "barcode lengths differ: {} vs {}",
            q.bits(),
            t.bits()
        )));
    }
    let mut minima: Vec<u32> = q
        .barcodes
        .iter()
        .map(|(a, _)| {
            t.barcodes
                .iter()
                .map(|(b, _)| hamming_packed(&a.bytes, &b.bytes))
                .min()
                .expect("target set is non-empty")
        })
        .collect();
    Ok(median_u32(&mut minima))
}

/// Median; an even count averages the two central values.
pub(crate) fn median_u32(values: &mut [u32]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub wsi_id: String,
    pub label: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    bits_per_barcode: usize,
    sets: Vec<BarcodeSet>,
    /// Free-form creation settings; persisted in a JSON sidecar, not in the binary file.
    pub metadata: BTreeMap<String, String>,
}

impl Archive {
    pub fn new(bits_per_barcode: usize, sets: Vec<BarcodeSet>) -> Result<Self> {
        if bits_per_barcode == 0 {
            return Err(Error::invalid("barcode length must be positive"));
        }
        let mut ids = HashSet::new();
        for set in &sets {
            if set.is_empty() {
                return Err(Error::invalid(format!("barcode set {} is empty", set.wsi_id)));
            }
            if set.barcodes.iter().any(|(b, _)| b.len() != bits_per_barcode) {
                return Err(Error::invalid(format!(
                    "barcode set {} does not use {bits_per_barcode}-bit barcodes",
                    set.wsi_id
                )));
            }
            if !ids.insert(set.wsi_id.as_str()) {
                return Err(Error::invalid(format!("duplicate wsi id {}", set.wsi_id)));
            }
        }
        Ok(Self {
            bits_per_barcode,
            sets,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn bits_per_barcode(&self) -> usize {
        self.bits_per_barcode
    }

    pub fn sets(&self) -> &[BarcodeSet] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, wsi_id: &str) -> Option<&BarcodeSet> {
        self.sets.iter().find(|s| s.wsi_id == wsi_id)
    }

    pub fn barcode_count(&self) -> usize {
        self.sets.iter().map(BarcodeSet::len).sum()
    }

    pub fn serialized_len(&self) -> usize {
        FILE_HEADER_LEN + self.sets.iter().map(BarcodeSet::serialized_len).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&to_u32(self.bits_per_barcode, "bits per barcode")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.sets.len(), "set count")?.to_le_bytes());
        for set in &self.sets {
            write_str(&mut out, &set.wsi_id, "wsi id")?;
            write_str(&mut out, &set.label, "label")?;
            out.extend_from_slice(&to_u32(set.barcodes.len(), "barcode count")?.to_le_bytes());
            for (barcode, patch) in &set.barcodes {
                out.extend_from_slice(&patch.x0.to_le_bytes());
                out.extend_from_slice(&patch.y0.to_le_bytes());
                out.extend_from_slice(&to_u16(patch.level_factor as usize, "level factor")?.to_le_bytes());
                out.extend_from_slice(&to_u16(patch.size as usize, "patch size")?.to_le_bytes());
                out.extend_from_slice(barcode.as_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("bad magic, not a barcode archive"));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(Error::format(format!("unsupported archive version {version}")));
        }
        let bits = r.u32()? as usize;
        if bits == 0 {
            return Err(Error::format("barcode length is zero"));
        }
        let n_sets = r.u32()? as usize;
        let mut sets = Vec::new();
        let mut ids = HashSet::new();
        for _ in 0..n_sets {
            let wsi_id = r.string()?;
            let label = r.string()?;
            let n = r.u32()? as usize;
            if n == 0 {
                return Err(Error::format(format!("set {wsi_id} has no barcodes")));
            }
            let mut barcodes = Vec::new();
            for _ in 0..n {
                let x0 = r.u32()?;
                let y0 = r.u32()?;
                let level_factor = r.u16()? as u32;
                let size = r.u16()? as u32;
                let packed = r.take(packed_len(bits))?.to_vec();
                barcodes.push((Barcode::from_packed(bits, packed)?, PatchRef::new(x0, y0, level_factor, size)));
            }
            if !ids.insert(wsi_id.clone()) {
                return Err(Error::format(format!("duplicate wsi id {wsi_id}")));
            }
            sets.push(BarcodeSet {
                wsi_id,
                label,
                barcodes,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after last set",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            bits_per_barcode: bits,
            sets,
            metadata: BTreeMap::new(),
        })
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")))
}

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u16")))
}

fn write_str(out: &mut Vec<u8>, s: &str, what: &str) -> Result<()> {
    out.extend_from_slice(&to_u16(s.len(), what)?.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(format!("truncated archive: wanted {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::format("string is not valid UTF-8"))
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn save_archive(a: &Archive, path: &Path) -> Result<()> {
    fs::write(path, a.to_bytes()?).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    if a.metadata.is_empty() {
        if sidecar.exists() {
            fs::remove_file(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        }
    } else {
        let json = serde_json::to_string_pretty(&a.metadata)?;
        fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
    }
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<Archive> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut archive = Archive::from_bytes(&bytes)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        archive.metadata = serde_json::from_str(&text)?;
    }
    Ok(archive)
}

/// Ranks archive members by [`wsi_distance`] from `q`, ties broken by id.
pub fn search(archive: &Archive, q: &BarcodeSet, top_n: usize, exclude_id: Option<&str>) -> Result<Vec<SearchHit>> {
    if top_n == 0 {
        return Err(Error::invalid("top_n must be positive"));
    }
    if q.bits() != archive.bits_per_barcode {
        return Err(Error::invalid(format!(
            "query uses {}-bit barcodes, archive uses {}",
            q.bits(),
            archive.bits_per_barcode
        )));
    }
    let candidates: Vec<&BarcodeSet> = archive
        .sets
        .iter()
        .filter(|s| Some(s.wsi_id.as_str()) != exclude_id)
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyArchive);
    }
    let mut hits = candidates
        .par_iter()
        .map(|t| {
            Ok(SearchHit {
                wsi_id: t.wsi_id.clone(),
                label: t.label.clone(),
                distance: wsi_distance(q, t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.wsi_id.cmp(&b.wsi_id)));
    hits.truncate(top_n);
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bc(s: &str) -> Barcode {
        Barcode::from_bits(&s.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    fn set(id: &str, label: &str, codes: &[&str]) -> BarcodeSet {
        let barcodes = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (bc(c), PatchRef::new(i as u32 * 8, 0, 1, 8)))
            .collect();
        BarcodeSet::new(id, label, barcodes).unwrap()
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_binarize(&[1.0, 2.0, 3.5, 9.0]).unwrap(), bc("111"));
        assert_eq!(minmax_binarize(&[4.0; 6]).unwrap(), bc("00000"));
        assert_eq!(minmax_binarize(&[0.1, 0.5, 0.3, 0.3]).unwrap(), bc("100"));
        assert!(minmax_binarize(&[1.0]).is_err());
        assert!(minmax_binarize(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn packing_layout() {
        let b = bc("10000000");
        assert_eq!(b.as_bytes(), &[0b0000_0001]);
        let b = bc("000000001");
        assert_eq!(b.as_bytes(), &[0, 1]);
        let b = Barcode::from_bits(&[true; 191]);
        assert_eq!(b.as_bytes().len(), 24);
        assert_eq!(b.as_bytes()[23], 0x7f);
        assert!(Barcode::from_packed(191, vec![0xff; 24]).is_err());
        assert!(Barcode::from_packed(191, vec![0xff; 23]).is_err());
        assert!(Barcode::from_packed(192, vec![0xff; 24]).is_ok());
    }

    #[test]
    fn hamming_examples() {
        let a = bc("1011001110001");
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&a, &a.complement()).unwrap(), 13);
        assert_eq!(hamming(&bc("10110"), &bc("00111")).unwrap(), 2);
        assert!(hamming(&bc("101"), &bc("1010")).is_err());
    }

    #[test]
    fn median_of_minimum() {
        let t = set("t", "x", &["0000", "1111"]);
        // minima: 0000 -> 0, 1000 -> 1, 1100 -> 2
        let q = set("q", "x", &["0000", "1000", "1100"]);
        assert_eq!(wsi_distance(&q, &t).unwrap(), 1.0);
        // minima: 111000 -> 3, 100000 -> 1
        let t = set("t", "x", &["000000"]);
        let q = set("q", "x", &["111000", "100000"]);
        assert_eq!(wsi_distance(&q, &t).unwrap(), 2.0);
        assert_eq!(wsi_distance(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn median_of_minimum_is_directional() {
        let a = set("a", "x", &["0000"]);
        let b = set("b", "x", &["0000", "1111", "1110"]);
        assert_eq!(wsi_distance(&a, &b).unwrap(), 0.0);
        assert_eq!(wsi_distance(&b, &a).unwrap(), 3.0);
    }

    #[test]
    fn search_ordering_and_exclusion() {
        let archive = Archive::new(
            4,
            vec![
                set("c", "B", &["1111"]),
                set("a", "A", &["0000"]),
                set("b", "A", &["0011"]),
                set("d", "B", &["0011"]),
            ],
        )
        .unwrap();
        let q = set("a", "A", &["0000"]);
        let hits = search(&archive, &q, 10, None).unwrap();
        let order: Vec<_> = hits.iter().map(|h| (h.wsi_id.as_str(), h.distance)).collect();
        assert_eq!(order, vec![("a", 0.0), ("b", 2.0), ("d", 2.0), ("c", 4.0)]);
        let loo = search(&archive, &q, 2, Some("a")).unwrap();
        assert_eq!(loo.iter().map(|h| h.wsi_id.as_str()).collect::<Vec<_>>(), vec!["b", "d"]);

        let solo = Archive::new(4, vec![set("a", "A", &["0000"])]).unwrap();
        assert!(matches!(search(&solo, &q, 1, Some("a")), Err(Error::EmptyArchive)));
        assert!(search(&archive, &set("z", "A", &["000"]), 1, None).is_err());
    }

    #[test]
    fn archive_invariants() {
        assert!(Archive::new(4, vec![set("a", "A", &["0000"]), set("a", "B", &["1111"])]).is_err());
        assert!(Archive::new(3, vec![set("a", "A", &["0000"])]).is_err());
        assert!(BarcodeSet::new("a", "A", vec![]).is_err());
    }

    #[test]
    fn storage_arithmetic() {
        let sets: Vec<BarcodeSet> = (0..10)
            .map(|i| {
                let codes = (0..8).map(|j| (Barcode::from_bits(&[j % 2 == 0; 191]), PatchRef::new(j * 1024, 0, 1, 1024))).collect();
                BarcodeSet::new(format!("wsi{i}"), "L", codes).unwrap()
            })
            .collect();
        let a = Archive::new(191, sets).unwrap();
        // 13-byte file header; per set: 2 + 4 (id) + 2 + 1 (label) + 4; per barcode 12 + 24
        let expected = 13 + 10 * (2 + 4 + 2 + 1 + 4) + 10 * 8 * (24 + 12);
        assert_eq!(a.serialized_len(), expected);
        assert_eq!(a.to_bytes().unwrap().len(), expected);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let a = Archive::new(9, vec![set("a", "A", &["101010101"])]).unwrap();
        let good = a.to_bytes().unwrap();
        assert_eq!(Archive::from_bytes(&good).unwrap(), a);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(Archive::from_bytes(&bad), Err(Error::Format { .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(Archive::from_bytes(&bad), Err(Error::Format { .. })));
        assert!(matches!(Archive::from_bytes(&good[..good.len() - 1]), Err(Error::Format { .. })));
        let mut bad = good.clone();
        *bad.last_mut().unwrap() |= 0x80;
        assert!(matches!(Archive::from_bytes(&bad), Err(Error::Format { .. })));
        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(Archive::from_bytes(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn file_round_trip_with_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.splb");
        let mut meta = BTreeMap::new();
        meta.insert("method".to_string(), "splice".to_string());
        let a = Archive::new(4, vec![set("a", "A", &["0110"])]).unwrap().with_metadata(meta);
        save_archive(&a, &path).unwrap();
        assert_eq!(load_archive(&path).unwrap(), a);
        assert!(matches!(load_archive(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    fn per_bit_hamming(a: &Barcode, b: &Barcode) -> u32 {
        (0..a.len()).filter(|&i| a.bit(i) != b.bit(i)).count() as u32
    }

    proptest! {
        #[test]
        fn packed_popcount_matches_per_bit(
            (a, b) in (1usize..300).prop_flat_map(|n| (
                proptest::collection::vec(any::<bool>(), n),
                proptest::collection::vec(any::<bool>(), n),
            ))
        ) {
            let (a, b) = (Barcode::from_bits(&a), Barcode::from_bits(&b));
            prop_assert_eq!(hamming(&a, &b).unwrap(), per_bit_hamming(&a, &b));
        }

        #[test]
        fn minmax_length_is_d_minus_one(v in proptest::collection::vec(-1e6f64..1e6, 2..300)) {
            let b = minmax_binarize(&v).unwrap();
            prop_assert_eq!(b.len(), v.len() - 1);
            for i in 0..b.len() {
                prop_assert_eq!(b.bit(i), v[i + 1] > v[i]);
            }
        }
    }
}
