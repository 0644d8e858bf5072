use std::collections::HashSet;

use rand::seq::SliceRandom;

use super::{Dataset, Modality, Payload};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self> {
        if [train, dev, test].iter().any(|f| f.is_nan() || *f <= 0.0) {
            return Err(Error::invalid("split fractions must be positive"));
        }
        let total = train + dev + test;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split fractions do not sum to 1 (sum = {total})"
            )));
        }
        Ok(Self { train, dev, test })
    }
}

/// Seeded shuffle then partition. Dev and test sizes are floored; the
/// remainder goes to train.
pub fn split(d: &Dataset, fractions: SplitFractions, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let n = d.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "cannot split {n} examples into train/dev/test"
        )));
    }
    let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_dev = floor(fractions.dev);
    let n_test = floor(fractions.test);
    let n_train = n - n_dev - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::from_seed(seed));

    let take = |idx: &[usize], suffix: &str| {
        let examples = idx.iter().map(|&i| d.examples()[i].clone()).collect();
        d.with_examples(format!("{}/{suffix}", d.name), examples)
    };
    Ok((
        take(&order[..n_train], "train"),
        take(&order[n_train..n_train + n_dev], "dev"),
        take(&order[n_train + n_dev..], "test"),
    ))
}

/// Keeps the first occurrence of each distinct payload. Labels are not part
/// of the key.
pub fn dedup(d: &Dataset) -> Dataset {
    let mut seen = HashSet::new();
    let examples = d
        .iter()
        .filter(|e| seen.insert(e.payload.key()))
        .cloned()
        .collect();
    d.with_examples(d.name.clone(), examples)
}

/// Keeps examples with exactly `segment_count` non-empty segments and
/// returns how many were dropped.
pub fn enforce_segment_count(d: &Dataset, segment_count: usize) -> Result<(Dataset, usize)> {
    d.schema.require(Modality::Text, "enforce_segment_count")?;
    let examples: Vec<_> = d
        .iter()
        .filter(|e| match &e.payload {
            Payload::Segments(s) => s.len() == segment_count && s.iter().all(|seg| !seg.is_empty()),
            Payload::Features(_) => false,
        })
        .cloned()
        .collect();
    let rejected = d.len() - examples.len();
    Ok((d.with_examples(d.name.clone(), examples), rejected))
}
