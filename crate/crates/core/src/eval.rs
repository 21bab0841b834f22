//! Ranking metrics at a cutoff and the per-method metric table.
//!
//! All metrics are binary-relevance. Users whose relevant set is empty are
//! left out of every average.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{ItemId, UserId};
use crate::error::{RaiseError, Result};

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

/// Denominator of AP@k.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ApDenominator {
    /// `min(k, |relevant|)`
    #[default]
    MinKRelevant,
    /// `min(k, hits in the top k)`
    MinKHits,
}

impl ApDenominator {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relevant" => Some(ApDenominator::MinKRelevant),
            "hits" => Some(ApDenominator::MinKHits),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ApDenominator::MinKRelevant => "relevant",
            ApDenominator::MinKHits => "hits",
        }
    }
}

fn cutoff<T>(ranked: &[T], k: usize) -> &[T] {
    &ranked[..k.min(ranked.len())]
}

/// Hits in the top `k` over `k`; a list shorter than `k` divides by its
/// own length instead.
pub fn precision_at_k<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be positive");
    let top = cutoff(ranked, k);
    if top.is_empty() {
        return 0.0;
    }
    top.iter().filter(|x| relevant.contains(x)).count() as f64 / top.len() as f64
}

pub fn average_precision_at_k<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize, denom: ApDenominator) -> f64 {
    assert!(k >= 1, "cutoff must be positive");
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (j, x) in cutoff(ranked, k).iter().enumerate() {
        if relevant.contains(x) {
            hits += 1;
            sum += hits as f64 / (j + 1) as f64;
        }
    }
    let d = match denom {
        ApDenominator::MinKRelevant => k.min(relevant.len()),
        ApDenominator::MinKHits => k.min(hits),
    };
    if d == 0 {
        0.0
    } else {
        sum / d as f64
    }
}

/// Mean AP@k over the users with a non-empty relevant set.
pub fn map_at_k<T: Ord>(lists: &[(&[T], &BTreeSet<T>)], k: usize, denom: ApDenominator) -> f64 {
    let aps: Vec<f64> = lists
        .iter()
        .filter(|(_, rel)| !rel.is_empty())
        .map(|(ranked, rel)| average_precision_at_k(ranked, rel, k, denom))
        .collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

pub fn ndcg_at_k<T: Ord>(ranked: &[T], relevant: &BTreeSet<T>, k: usize) -> f64 {
    assert!(k >= 1, "cutoff must be positive");
    let top = cutoff(ranked, k);
    let dcg: f64 = top
        .iter()
        .enumerate()
        .filter(|(_, x)| relevant.contains(x))
        .map(|(j, _)| 1.0 / ((j + 2) as f64).log2())
        .sum();
    let ideal = relevant.len().min(k);
    let idcg: f64 = (0..ideal).map(|j| 1.0 / ((j + 2) as f64).log2()).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub k: usize,
    pub precision: f64,
    pub map: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    pub fn get(&self, method: &str, k: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.k == k)
    }

    pub fn extend(&mut self, other: MetricTable) {
        self.rows.extend(other.rows);
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\tk\tprecision\tmap\tndcg\n");
        for r in &self.rows {
            writeln!(out, "{}\t{}\t{:.6}\t{:.6}\t{:.6}", r.method, r.k, r.precision, r.map, r.ndcg).unwrap();
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| RaiseError::io(path, e))
    }

    pub fn parse_tsv(text: &str, source: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let bad = |msg: &str| RaiseError::Parse {
                path: source.to_string(),
                line: n + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 tab-separated fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            rows.push(MetricRow {
                method: f[0].to_string(),
                k: f[1].parse().map_err(|_| bad("bad cutoff"))?,
                precision: num(f[2])?,
                map: num(f[3])?,
                ndcg: num(f[4])?,
            });
        }
        Ok(MetricTable { rows })
    }
}

/// Averages the three metrics over users with relevant items, for each `k`.
/// Every ranked user must have an entry in `relevant`.
pub fn evaluate(
    method: &str,
    ranked: &BTreeMap<UserId, Vec<ItemId>>,
    relevant: &BTreeMap<UserId, BTreeSet<ItemId>>,
    ks: &[usize],
    denom: ApDenominator,
) -> Result<MetricTable> {
    let mut pairs = Vec::with_capacity(ranked.len());
    for (u, items) in ranked {
        let rel = relevant
            .get(u)
            .ok_or_else(|| RaiseError::Data(format!("no relevance set for user {u}")))?;
        if !rel.is_empty() {
            pairs.push((items.as_slice(), rel));
        }
    }
    let mut table = MetricTable::default();
    for &k in ks {
        let mean = |f: &dyn Fn(&[ItemId], &BTreeSet<ItemId>) -> f64| {
            if pairs.is_empty() {
                0.0
            } else {
                pairs.iter().map(|(r, s)| f(r, s)).sum::<f64>() / pairs.len() as f64
            }
        };
        table.rows.push(MetricRow {
            method: method.to_string(),
            k,
            precision: mean(&|r, s| precision_at_k(r, s, k)),
            map: map_at_k(&pairs, k, denom),
            ndcg: mean(&|r, s| ndcg_at_k(r, s, k)),
        });
    }
    Ok(table)
}
