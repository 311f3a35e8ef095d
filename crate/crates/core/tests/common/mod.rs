//! Naive reference implementations used as test oracles.
//!
//! Nothing here calls into the crate's search, selection or metric code; each
//! routine re-derives its answer from first principles on plain vectors.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A slide as unpacked bit vectors.
#[derive(Debug, Clone)]
pub struct NaiveSet {
    pub id: String,
    pub label: String,
    pub codes: Vec<Vec<bool>>,
}

pub fn naive_hamming(a: &[bool], b: &[bool]) -> u32 {
    assert_eq!(a.len(), b.len());
    let mut d = 0;
    for i in 0..a.len() {
        if a[i] != b[i] {
            d += 1;
        }
    }
    d
}

pub fn naive_median(values: &[u32]) -> f64 {
    let mut v = values.to_vec();
    // insertion sort, deliberately unrelated to the crate's path
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && v[j - 1] > v[j] {
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

pub fn naive_wsi_distance(q: &NaiveSet, t: &NaiveSet) -> f64 {
    let minima: Vec<u32> = q
        .codes
        .iter()
        .map(|a| t.codes.iter().map(|b| naive_hamming(a, b)).min().unwrap())
        .collect();
    naive_median(&minima)
}

/// Full ranking: every candidate scored, then sorted by (distance, id).
pub fn naive_search(archive: &[NaiveSet], q: &NaiveSet, top: usize, exclude: Option<&str>) -> Vec<(String, String, f64)> {
    let mut scored: Vec<(String, String, f64)> = Vec::new();
    for t in archive {
        if Some(t.id.as_str()) == exclude {
            continue;
        }
        scored.push((t.id.clone(), t.label.clone(), naive_wsi_distance(q, t)));
    }
    scored.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(top);
    scored
}

pub fn random_naive_archive(rng: &mut ChaCha8Rng) -> Vec<NaiveSet> {
    let n_sets = rng.random_range(1..=10);
    let bits = rng.random_range(1..=32);
    // a small alphabet of prototypes makes distance ties common
    let protos: Vec<Vec<bool>> = (0..4).map(|_| (0..bits).map(|_| rng.random()).collect()).collect();
    (0..n_sets)
        .map(|i| {
            let n_codes = rng.random_range(1..=8);
            let codes = (0..n_codes)
                .map(|_| {
                    let mut c = protos[rng.random_range(0..protos.len())].clone();
                    for b in c.iter_mut() {
                        if rng.random_bool(0.15) {
                            *b = !*b;
                        }
                    }
                    c
                })
                .collect();
            NaiveSet {
                id: format!("s{:02}", (i * 7) % 10 + 10 * (i / 10)),
                label: ["A", "B", "C"][rng.random_range(0..3)].to_string(),
                codes,
            }
        })
        .collect()
}

/// Linear-interpolation percentile at rank (n - 1) k / 100, textbook form.
pub fn naive_percentile(values: &[f64], k: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = (v.len() as f64 - 1.0) * k / 100.0;
    let below = pos.floor() as usize;
    let above = pos.ceil() as usize;
    v[below] + (v[above] - v[below]) * (pos - below as f64)
}

fn naive_euclid(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s.sqrt()
}

/// Sequential analysis written straight from the prose: pick the first
/// unmarked patch as reference, compute distances to all other unmarked
/// patches, take the k-th percentile, and mark everything closer (or an
/// exact duplicate) as excluded. Returns reference indices.
pub fn prose_splice(descriptors: &[Vec<f64>], k: f64, dup_epsilon: f64) -> Vec<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Unmarked,
        Reference,
        Excluded,
    }
    let mut state = vec![State::Unmarked; descriptors.len()];
    let mut refs = Vec::new();
    while let Some(r) = state.iter().position(|&s| s == State::Unmarked) {
        state[r] = State::Reference;
        refs.push(r);
        let others: Vec<usize> = (0..descriptors.len()).filter(|&j| state[j] == State::Unmarked).collect();
        if others.is_empty() {
            break;
        }
        let d: Vec<f64> = others.iter().map(|&j| naive_euclid(&descriptors[r], &descriptors[j])).collect();
        let t = naive_percentile(&d, k);
        for (idx, &j) in others.iter().enumerate() {
            if d[idx] < t || d[idx] <= dup_epsilon {
                state[j] = State::Excluded;
            }
        }
    }
    refs
}

/// Macro F1 from an explicit confusion matrix; `None` predictions are misses.
pub fn reference_macro_f1(pairs: &[(String, Option<String>)], classes: &[String]) -> f64 {
    let mut confusion: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (t, p) in pairs {
        let p = p.clone().unwrap_or_else(|| "<abstain>".into());
        *confusion.entry((t.clone(), p)).or_default() += 1;
    }
    let mut total = 0.0;
    for c in classes {
        let tp = *confusion.get(&(c.clone(), c.clone())).unwrap_or(&0) as f64;
        let predicted_c: usize = confusion.iter().filter(|((_, p), _)| p == c).map(|(_, n)| n).sum();
        let actual_c: usize = confusion.iter().filter(|((t, _), _)| t == c).map(|(_, n)| n).sum();
        let precision = if predicted_c == 0 { 0.0 } else { tp / predicted_c as f64 };
        let recall = if actual_c == 0 { 0.0 } else { tp / actual_c as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        total += f1;
    }
    total / classes.len() as f64
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
