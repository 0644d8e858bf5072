//! Quality measurements for synthetic data and pseudo-labels.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::generator::{DrawOutcome, GenerationStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub order: usize,
    pub unique_a: usize,
    pub unique_b: usize,
    pub shared: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramOverlapReport {
    pub rows: Vec<OverlapRow>,
    /// Always true: n-gram windows never cross a segment boundary.
    pub segment_boundaries_break_windows: bool,
    pub tokenizer: String,
}

impl NGramOverlapReport {
    /// Columns `order,unique_train,unique_synthetic,shared`, with A as the
    /// training side.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("order,unique_train,unique_synthetic,shared\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.order, r.unique_a, r.unique_b, r.shared));
        }
        out
    }
}

fn ngrams(d: &Dataset, n: usize) -> HashSet<&[String]> {
    d.iter()
        .flat_map(|e| e.payload.segments().expect("schema checked"))
        .flat_map(|seg| seg.windows(n))
        .collect()
}

/// Unique and shared n-gram counts between two text corpora.
pub fn ngram_overlap(a: &Dataset, b: &Dataset, orders: &BTreeSet<usize>) -> Result<NGramOverlapReport> {
    a.schema.require(Modality::Text, "ngram_overlap")?;
    b.schema.require(Modality::Text, "ngram_overlap")?;
    if orders.contains(&0) {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    let rows = orders
        .iter()
        .map(|&n| {
            let (sa, sb) = (ngrams(a, n), ngrams(b, n));
            OverlapRow {
                order: n,
                unique_a: sa.len(),
                unique_b: sb.len(),
                shared: sa.intersection(&sb).count(),
            }
        })
        .collect();
    Ok(NGramOverlapReport {
        rows,
        segment_boundaries_break_windows: true,
        tokenizer: "whitespace, lowercased".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "averaging", rename_all = "snake_case")]
pub enum Averaging {
    Binary { positive_class: usize },
    /// Unweighted mean over classes present in either vector.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: Averaging,
    pub count: usize,
}

/// Precision and recall of one class. A ratio with an empty denominator is 1
/// when the other error count is also zero, else 0.
fn class_pr(reference: &[usize], candidate: &[usize], c: usize) -> (f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&r, &p) in reference.iter().zip(candidate) {
        match (r == c, p == c) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |den: usize, other_err: usize| {
        if den > 0 {
            tp as f64 / den as f64
        } else if other_err == 0 {
            1.0
        } else {
            0.0
        }
    };
    (ratio(tp + fp, fn_), ratio(tp + fn_, fp))
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Accuracy, precision, recall and F1 of `candidate` against `reference`.
/// Under macro averaging F1 is computed from the macro precision and recall.
pub fn agreement(reference: &[usize], candidate: &[usize], averaging: Averaging) -> Result<AgreementReport> {
    if reference.len() != candidate.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            actual: candidate.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::invalid("agreement needs at least one label"));
    }
    let n = reference.len();
    let correct = reference.iter().zip(candidate).filter(|(r, p)| r == p).count();
    let (precision, recall) = match averaging {
        Averaging::Binary { positive_class } => class_pr(reference, candidate, positive_class),
        Averaging::Macro => {
            let classes: BTreeSet<usize> = reference.iter().chain(candidate).copied().collect();
            let (p, r) = classes
                .iter()
                .map(|&c| class_pr(reference, candidate, c))
                .fold((0.0, 0.0), |acc, (p, r)| (acc.0 + p, acc.1 + r));
            (p / classes.len() as f64, r / classes.len() as f64)
        }
    };
    Ok(AgreementReport {
        accuracy: correct as f64 / n as f64,
        precision,
        recall,
        f1: f1(precision, recall),
        averaging,
        count: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub draws: usize,
    pub rejection_rate: f64,
    pub dedup_rate: f64,
    pub acceptance_rate: f64,
    /// Fraction of accepted synthetic examples kept by the confidence filter.
    pub post_filter_retention: Option<f64>,
}

/// Rates of a generation run as fractions of raw draws. `retained` is the
/// number of synthetic examples surviving confidence filtering, if any.
pub fn synthesis_stats(stats: &GenerationStats, retained: Option<usize>) -> Result<SynthesisSummary> {
    if stats.draws == 0 {
        return Err(Error::invalid("generation counters report zero draws"));
    }
    if stats.accepted + stats.rejected + stats.duplicates != stats.draws {
        return Err(Error::invalid("generation counters are inconsistent"));
    }
    let d = stats.draws as f64;
    let post_filter_retention = match retained {
        Some(k) if k > stats.accepted => return Err(Error::invalid("more retained than accepted samples")),
        Some(_) if stats.accepted == 0 => None,
        Some(k) => Some(k as f64 / stats.accepted as f64),
        None => None,
    };
    Ok(SynthesisSummary {
        draws: stats.draws,
        rejection_rate: stats.rejected as f64 / d,
        dedup_rate: stats.duplicates as f64 / d,
        acceptance_rate: stats.accepted as f64 / d,
        post_filter_retention,
    })
}

/// Rebuilds the draw counters from a per-draw event log.
pub fn recount(events: &[DrawOutcome]) -> GenerationStats {
    let mut s = GenerationStats {
        draws: events.len(),
        ..Default::default()
    };
    for e in events {
        match e {
            DrawOutcome::Accepted => s.accepted += 1,
            DrawOutcome::Rejected => s.rejected += 1,
            DrawOutcome::Duplicate => s.duplicates += 1,
        }
    }
    s
}
