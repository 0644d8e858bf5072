//! Batch streams that realize the labeled/synthetic weighting as a sampling
//! ratio: each epoch contains every unlabeled example once and the labeled
//! set oversampled so that labeled examples make up a fraction `lambda`.

use rand::seq::{IndexedRandom, SliceRandom};

use super::{Dataset, Example};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Labeled,
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub source: Source,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.items.iter().filter(|i| i.source == Source::Labeled).count()
    }
}

/// Single-consumer stream of mixed batches. Iterating never ends; use
/// [`Mixer::next_epoch`] for epoch-bounded consumption.
#[derive(Debug, Clone)]
pub struct Mixer<'a> {
    labeled: &'a Dataset,
    unlabeled: Option<&'a Dataset>,
    lambda: f64,
    batch_size: usize,
    rng: Rng,
    pending: std::vec::IntoIter<Batch>,
}

/// Mixes a labeled set with an annotated synthetic set at ratio `lambda`.
pub fn mix<'a>(
    labeled: &'a Dataset,
    annotated: &'a Dataset,
    lambda: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Mixer<'a>> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::invalid(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    labeled.require_non_empty()?;
    annotated.require_non_empty()?;
    let (a, b) = (&labeled.schema, &annotated.schema);
    if a.modality != b.modality
        || a.num_classes != b.num_classes
        || (a.modality == super::Modality::Continuous && a.feature_dim != b.feature_dim)
    {
        return Err(Error::Schema(format!(
            "cannot mix `{}` and `{}`: incompatible schemas",
            labeled.name, annotated.name
        )));
    }
    for (i, ex) in annotated.iter().enumerate() {
        if ex.label.is_absent() {
            return Err(Error::Unlabeled { index: i });
        }
    }
    Mixer::build(labeled, Some(annotated), lambda, batch_size, seed)
}

impl<'a> Mixer<'a> {
    /// Plain shuffled mini-batches over one dataset.
    pub fn single(data: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        data.require_non_empty()?;
        Self::build(data, None, 1.0, batch_size, seed)
    }

    fn build(
        labeled: &'a Dataset,
        unlabeled: Option<&'a Dataset>,
        lambda: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(Self {
            labeled,
            unlabeled,
            lambda,
            batch_size,
            rng: rng::from_seed(seed),
            pending: Vec::new().into_iter(),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of labeled draws per epoch.
    pub fn labeled_per_epoch(&self) -> usize {
        match self.unlabeled {
            Some(u) if self.lambda < 1.0 => {
                let n = (self.lambda / (1.0 - self.lambda) * u.len() as f64).round() as usize;
                n.max(1)
            }
            _ => self.labeled.len(),
        }
    }

    pub fn unlabeled_per_epoch(&self) -> usize {
        match self.unlabeled {
            Some(u) if self.lambda < 1.0 => u.len(),
            _ => 0,
        }
    }

    pub fn epoch_len(&self) -> usize {
        self.labeled_per_epoch() + self.unlabeled_per_epoch()
    }

    /// Draws one epoch. Labeled examples are repeated whole-set as many times
    /// as fit, with the remainder drawn without replacement.
    pub fn next_epoch(&mut self) -> Vec<Batch> {
        let n_l = self.labeled.len();
        let want = self.labeled_per_epoch();
        let mut items = Vec::with_capacity(self.epoch_len());
        let all: Vec<usize> = (0..n_l).collect();
        for _ in 0..want / n_l {
            items.extend(all.iter().map(|&index| BatchItem {
                source: Source::Labeled,
                index,
            }));
        }
        items.extend(
            all.choose_multiple(&mut self.rng, want % n_l)
                .map(|&index| BatchItem {
                    source: Source::Labeled,
                    index,
                }),
        );
        items.extend((0..self.unlabeled_per_epoch()).map(|index| BatchItem {
            source: Source::Unlabeled,
            index,
        }));
        items.shuffle(&mut self.rng);
        items
            .chunks(self.batch_size)
            .map(|c| Batch { items: c.to_vec() })
            .collect()
    }

    pub fn resolve(&self, item: BatchItem) -> &'a Example {
        match item.source {
            Source::Labeled => &self.labeled.examples()[item.index],
            Source::Unlabeled => &self.unlabeled.expect("unlabeled item without unlabeled set").examples()[item.index],
        }
    }
}

impl Iterator for Mixer<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if let Some(b) = self.pending.next() {
            return Some(b);
        }
        self.pending = self.next_epoch().into_iter();
        self.pending.next()
    }
}
