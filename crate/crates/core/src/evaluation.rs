//! Leave-one-out retrieval evaluation with majority voting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barcode::{search, Archive, SearchHit};
use crate::error::{Error, Result};

/// What to do when no label reaches the majority quota.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstainPolicy {
    /// Keep the abstention; it is scored as a miss.
    #[default]
    CountAsError,
    /// Use the top-1 label instead.
    FallbackTopOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub query_id: String,
    pub true_label: String,
    pub retrieved: Vec<SearchHit>,
    /// `None` is an abstention.
    pub predicted: Option<String>,
}

impl VoteResult {
    pub fn is_correct(&self) -> bool {
        self.predicted.as_deref() == Some(self.true_label.as_str())
    }
}

/// Label held by at least `n / 2 + 1` of the first `n` entries, if any.
pub fn majority_vote<S: AsRef<str>>(retrieved: &[S], n: usize) -> Result<Option<String>> {
    if retrieved.is_empty() {
        return Err(Error::invalid("majority vote over an empty list"));
    }
    if n == 0 {
        return Err(Error::invalid("majority vote needs n >= 1"));
    }
    let quota = n / 2 + 1;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for label in retrieved.iter().take(n) {
        *counts.entry(label.as_ref()).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .find(|&(_, c)| c >= quota)
        .map(|(label, _)| label.to_string()))
}

/// Queries every set against the archive without itself, once per `n`.
pub fn leave_one_out(
    archive: &Archive,
    n_values: &[usize],
    policy: AbstainPolicy,
) -> Result<BTreeMap<usize, Vec<VoteResult>>> {
    if archive.len() < 2 {
        return Err(Error::invalid("leave-one-out needs at least 2 archive members"));
    }
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::invalid("top-n values must be positive"));
    }
    let max_n = *n_values.iter().max().expect("non-empty");
    let rankings = archive
        .sets()
        .par_iter()
        .map(|q| search(archive, q, max_n, Some(&q.wsi_id)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = BTreeMap::new();
    for &n in n_values {
        let mut results = Vec::with_capacity(archive.len());
        for (q, ranking) in archive.sets().iter().zip(&rankings) {
            let retrieved: Vec<SearchHit> = ranking.iter().take(n).cloned().collect();
            let labels: Vec<&str> = retrieved.iter().map(|h| h.label.as_str()).collect();
            let mut predicted = majority_vote(&labels, n)?;
            if predicted.is_none() && policy == AbstainPolicy::FallbackTopOne {
                predicted = Some(labels[0].to_string());
            }
            results.push(VoteResult {
                query_id: q.wsi_id.clone(),
                true_label: q.label.clone(),
                retrieved,
                predicted,
            });
        }
        out.insert(n, results);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_queries: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub abstentions: usize,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(results: &[VoteResult], classes: &BTreeSet<String>) -> Result<MetricsReport> {
    let mut tp: BTreeMap<&str, usize> = classes.iter().map(|c| (c.as_str(), 0)).collect();
    let mut fp = tp.clone();
    let mut fn_ = tp.clone();
    let mut support = tp.clone();
    let mut correct = 0;
    let mut abstentions = 0;

    for r in results {
        if !classes.contains(&r.true_label) {
            return Err(Error::invalid(format!("unknown true label {:?}", r.true_label)));
        }
        *support.get_mut(r.true_label.as_str()).expect("checked") += 1;
        match r.predicted.as_deref() {
            Some(p) if p == r.true_label => {
                correct += 1;
                *tp.get_mut(p).expect("checked") += 1;
            }
            Some(p) => {
                let slot = fp
                    .get_mut(p)
                    .ok_or_else(|| Error::invalid(format!("unknown predicted label {p:?}")))?;
                *slot += 1;
                *fn_.get_mut(r.true_label.as_str()).expect("checked") += 1;
            }
            None => {
                abstentions += 1;
                *fn_.get_mut(r.true_label.as_str()).expect("checked") += 1;
            }
        }
    }

    let mut per_class = BTreeMap::new();
    for c in classes {
        let c = c.as_str();
        let precision = ratio(tp[c], tp[c] + fp[c]);
        let recall = ratio(tp[c], tp[c] + fn_[c]);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.insert(
            c.to_string(),
            ClassMetrics {
                precision,
                recall,
                f1,
                support: support[c],
            },
        );
    }
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if per_class.is_empty() {
            0.0
        } else {
            per_class.values().map(f).sum::<f64>() / per_class.len() as f64
        }
    };
    Ok(MetricsReport {
        n_queries: results.len(),
        accuracy: ratio(correct, results.len()),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        abstentions,
        per_class,
    })
}

/// Bytes per stored embedding value (single-precision floats).
pub const EMBEDDING_VALUE_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsiAccount {
    pub wsi_id: String,
    pub n_patches: usize,
    pub barcode_bytes: usize,
    pub embedding_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub per_wsi: Vec<WsiAccount>,
    pub total_patches: usize,
    pub patches_per_wsi_mean: f64,
    pub patches_per_wsi_std: f64,
    pub barcode_kb_mean: f64,
    pub barcode_kb_std: f64,
    pub embedding_kb_mean: f64,
    pub embedding_kb_std: f64,
    pub search_seconds: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Patch counts and storage per WSI. `feature_dim` sizes the embedding column.
pub fn accounting(archive: &Archive, feature_dim: usize, search_seconds: f64) -> Accounting {
    let per_wsi: Vec<WsiAccount> = archive
        .sets()
        .iter()
        .map(|s| WsiAccount {
            wsi_id: s.wsi_id.clone(),
            n_patches: s.len(),
            barcode_bytes: s.serialized_len(),
            embedding_bytes: s.len() * feature_dim * EMBEDDING_VALUE_BYTES,
        })
        .collect();
    let (patches_per_wsi_mean, patches_per_wsi_std) = mean_std(per_wsi.iter().map(|w| w.n_patches as f64));
    let (barcode_kb_mean, barcode_kb_std) = mean_std(per_wsi.iter().map(|w| w.barcode_bytes as f64 / 1024.0));
    let (embedding_kb_mean, embedding_kb_std) = mean_std(per_wsi.iter().map(|w| w.embedding_bytes as f64 / 1024.0));
    Accounting {
        total_patches: per_wsi.iter().map(|w| w.n_patches).sum(),
        per_wsi,
        patches_per_wsi_mean,
        patches_per_wsi_std,
        barcode_kb_mean,
        barcode_kb_std,
        embedding_kb_mean,
        embedding_kb_std,
        search_seconds,
    }
}

/// Runs [`leave_one_out`] and measures its wall-clock time.
pub fn timed_leave_one_out(
    archive: &Archive,
    n_values: &[usize],
    policy: AbstainPolicy,
) -> Result<(BTreeMap<usize, Vec<VoteResult>>, f64)> {
    let start = Instant::now();
    let results = leave_one_out(archive, n_values, policy)?;
    Ok((results, start.elapsed().as_secs_f64()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub accounting: Accounting,
    /// Keyed by top-n.
    pub metrics: BTreeMap<usize, MetricsReport>,
    pub settings: BTreeMap<String, String>,
}

pub const REPORT_CSV_HEADER: [&str; 16] = [
    "method",
    "n_wsi",
    "n_patches",
    "patches_per_wsi_mean",
    "patches_per_wsi_std",
    "barcode_kb_mean",
    "barcode_kb_std",
    "embedding_kb_mean",
    "embedding_kb_std",
    "time_sec",
    "top_n",
    "accuracy",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "abstentions",
];

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per top-n value.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(REPORT_CSV_HEADER).map_err(|e| Error::format(e.to_string()))?;
        let a = &self.accounting;
        for (n, m) in &self.metrics {
            let row = [
                self.method.clone(),
                a.per_wsi.len().to_string(),
                a.total_patches.to_string(),
                format!("{:.4}", a.patches_per_wsi_mean),
                format!("{:.4}", a.patches_per_wsi_std),
                format!("{:.4}", a.barcode_kb_mean),
                format!("{:.4}", a.barcode_kb_std),
                format!("{:.4}", a.embedding_kb_mean),
                format!("{:.4}", a.embedding_kb_std),
                format!("{:.6}", a.search_seconds),
                n.to_string(),
                format!("{:.6}", m.accuracy),
                format!("{:.6}", m.macro_precision),
                format!("{:.6}", m.macro_recall),
                format!("{:.6}", m.macro_f1),
                m.abstentions.to_string(),
            ];
            w.write_record(&row).map_err(|e| Error::format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }
}
