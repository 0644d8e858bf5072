//! Exact enumeration oracles over small discrete domains.

#![allow(dead_code)]

use gal_core::classifier::{Classifier, FeatureMap, Model, SoftLabel, SoftPredictor};
use gal_core::corpus::{Dataset, Payload, TaskSchema};
use gal_core::generator::{TabularConditioning, TabularGenerator};
use gal_core::rng;
use gal_core::Result;
use rand::Rng;

pub fn ce(q: &[f64], p: &[f64]) -> f64 {
    -q.iter()
        .zip(p)
        .filter(|(q, _)| **q != 0.0)
        .map(|(q, p)| q * p.max(1e-12).ln())
        .sum::<f64>()
}

fn predict(f: &dyn SoftPredictor, x: &[f64]) -> Vec<f64> {
    f.predict(&Payload::Features(x.to_vec())).unwrap().into_vec()
}

fn random_simplex(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| r.random::<f64>() + 1e-3).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Class-conditional table over `n` points on a 1-D grid, two classes,
/// random prior and conditionals.
pub fn random_tabular(n: usize, seed: u64) -> TabularGenerator {
    let mut r = rng::from_seed(seed);
    let points = (0..n).map(|i| vec![i as f64 - (n as f64 - 1.0) / 2.0]).collect();
    let prior = random_simplex(&mut r, 2);
    let table = (0..2).map(|_| random_simplex(&mut r, n)).collect();
    TabularGenerator::class_conditional(TaskSchema::continuous(2, 1).unwrap(), points, prior, table).unwrap()
}

pub fn table(t: &TabularGenerator) -> (&[f64], &[Vec<f64>]) {
    match &t.conditioning {
        TabularConditioning::ClassConditional { prior, table } => (prior, table),
        TabularConditioning::Unconditional { .. } => panic!("unconditional table"),
    }
}

/// `sum_y P(y) sum_x g(x|y) H(one_hot(y), f(x))`.
pub fn exact_class_conditional_risk(f: &dyn SoftPredictor, t: &TabularGenerator) -> f64 {
    let (prior, rows) = table(t);
    let mut total = 0.0;
    for (y, py) in prior.iter().enumerate() {
        for (x, w) in t.points.iter().zip(&rows[y]) {
            total += py * w * -predict(f, x)[y].max(1e-12).ln();
        }
    }
    total
}

/// `sum_x g(x) H(f_t(x), f_next(x))`.
pub fn exact_generative_risk(f_next: &dyn SoftPredictor, f_t: &dyn SoftPredictor, t: &TabularGenerator) -> f64 {
    t.points
        .iter()
        .zip(t.marginal())
        .map(|(x, w)| w * ce(&predict(f_t, x), &predict(f_next, x)))
        .sum()
}

/// Mixup with fixed `gamma`: average over every ordered pair `(i, j)`.
pub fn exact_fixed_mixup_risk(f: &dyn SoftPredictor, l: &Dataset, gamma: f64) -> f64 {
    let rows: Vec<(&[f64], usize)> = l
        .iter()
        .map(|e| (e.payload.features().unwrap(), e.label.hard().unwrap()))
        .collect();
    let c = f.num_classes();
    let mut total = 0.0;
    for (xi, yi) in &rows {
        for (xj, yj) in &rows {
            let x: Vec<f64> = xi.iter().zip(*xj).map(|(a, b)| gamma * a + (1.0 - gamma) * b).collect();
            let mut q = vec![0.0; c];
            q[*yi] += gamma;
            q[*yj] += 1.0 - gamma;
            total += ce(&q, &predict(f, &x));
        }
    }
    total / (rows.len() * rows.len()) as f64
}

pub fn linear_1d(params: Vec<f64>) -> Classifier {
    Classifier {
        feature_map: FeatureMap::Identity { dim: 1 },
        model: Model::Linear {
            num_classes: 2,
            input_dim: 1,
            params,
        },
    }
}

/// Arbitrary per-point soft predictions over a finite domain.
pub struct Lookup {
    pub points: Vec<Vec<f64>>,
    pub probs: Vec<SoftLabel>,
}

impl Lookup {
    pub fn random(points: &[Vec<f64>], r: &mut rng::Rng) -> Self {
        Self {
            points: points.to_vec(),
            probs: points
                .iter()
                .map(|_| SoftLabel::new(random_simplex(r, 2)).unwrap())
                .collect(),
        }
    }
}

impl SoftPredictor for Lookup {
    fn num_classes(&self) -> usize {
        2
    }

    fn predict(&self, x: &Payload) -> Result<SoftLabel> {
        let x = x.features().unwrap();
        let i = self.points.iter().position(|p| p.as_slice() == x).expect("point in domain");
        Ok(self.probs[i].clone())
    }
}
