//! Synthetic benchmark tasks: labeled mixtures of isotropic Gaussians.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example, Label, TaskSchema};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub center: Vec<f64>,
    pub class: usize,
}

/// Equal-weight clusters sharing one standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTask {
    pub clusters: Vec<Cluster>,
    pub sigma: f64,
}

impl GaussianTask {
    /// Means (0,0) and (2,2), unit variance.
    pub fn two_blobs() -> Self {
        Self {
            clusters: vec![
                Cluster {
                    center: vec![0.0, 0.0],
                    class: 0,
                },
                Cluster {
                    center: vec![2.0, 2.0],
                    class: 1,
                },
            ],
            sigma: 1.0,
        }
    }

    /// Four clusters on the corners of the square [0,2]^2; diagonal corners
    /// share a class.
    pub fn xor(sigma: f64) -> Self {
        let c = |x: f64, y: f64, class| Cluster {
            center: vec![x, y],
            class,
        };
        Self {
            clusters: vec![c(0.0, 0.0, 0), c(2.0, 2.0, 0), c(0.0, 2.0, 1), c(2.0, 0.0, 1)],
            sigma,
        }
    }

    pub fn schema(&self) -> Result<TaskSchema> {
        let classes = self.clusters.iter().map(|c| c.class).max().map_or(0, |m| m + 1);
        let dim = self.clusters.first().map_or(0, |c| c.center.len());
        TaskSchema::continuous(classes.max(2), dim)
    }

    /// `n` examples, clusters used round-robin so that class counts are as
    /// balanced as possible, then shuffled.
    pub fn sample(&self, n: usize, seed: u64, name: &str) -> Result<Dataset> {
        if self.clusters.is_empty() {
            return Err(Error::invalid("task has no clusters"));
        }
        let normal = Normal::new(0.0, self.sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut r = rng::from_seed(seed);
        let mut examples: Vec<Example> = (0..n)
            .map(|i| {
                let c = &self.clusters[i % self.clusters.len()];
                let x = c.center.iter().map(|m| m + normal.sample(&mut r)).collect();
                Example::features(x, Label::Hard(c.class))
            })
            .collect();
        examples.shuffle(&mut r);
        Dataset::new(name, self.schema()?, examples)
    }

    /// Independent train, dev and test samples.
    pub fn splits(&self, train: usize, dev: usize, test: usize, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
        Ok((
            self.sample(train, rng::derive(seed, 1), "train")?,
            self.sample(dev, rng::derive(seed, 2), "dev")?,
            self.sample(test, rng::derive(seed, 3), "test")?,
        ))
    }
}
