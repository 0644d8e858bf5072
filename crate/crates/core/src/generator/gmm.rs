//! Diagonal-covariance Gaussian mixtures fitted by EM.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Modality, Payload};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const VARIANCE_FLOOR: f64 = 1e-6;
const COLLAPSE_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::invalid("mixture needs matching, non-empty weights/means/variances"));
        }
        let d = means[0].len();
        if means.iter().chain(&variances).any(|v| v.len() != d) || d == 0 {
            return Err(Error::invalid("inconsistent mixture dimensions"));
        }
        if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixture weights must lie on the simplex"));
        }
        let variances = variances
            .into_iter()
            .map(|v| v.into_iter().map(|s| s.max(VARIANCE_FLOOR)).collect())
            .collect();
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn component_log_density(&self, k: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            let d = xi - m;
            acc += -0.5 * ((2.0 * PI * v).ln() + d * d / v);
        }
        acc
    }

    fn weighted_log_densities(&self, x: &[f64]) -> Vec<f64> {
        (0..self.components())
            .map(|k| self.weights[k].ln() + self.component_log_density(k, x))
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.weighted_log_densities(x))
    }

    /// Posterior component probabilities for `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let lw = self.weighted_log_densities(x);
        let z = log_sum_exp(&lw);
        lw.iter().map(|l| (l - z).exp()).collect()
    }

    /// Ancestral draw: component, then a diagonal Gaussian.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let k = super::draw_categorical(&self.weights, rng);
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Result of an EM fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// Total data log-likelihood before each M-step and after the last one.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Components that collapsed and were re-seeded once.
    pub reseeded: Vec<usize>,
}

impl GmmFit {
    /// Whether the log-likelihood never decreased (up to rounding), ignoring
    /// the step right after a re-seed.
    pub fn is_monotone(&self) -> bool {
        if !self.reseeded.is_empty() {
            return true;
        }
        self.log_likelihood
            .windows(2)
            .all(|w| w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()))
    }
}

fn features_of(d: &Dataset) -> Result<Vec<&[f64]>> {
    d.schema.require(Modality::Continuous, "fit_gmm")?;
    Ok(d.iter()
        .map(|e| match &e.payload {
            Payload::Features(f) => f.as_slice(),
            Payload::Segments(_) => unreachable!("schema checked"),
        })
        .collect())
}

/// EM with k-means++ initialization. Stops when the log-likelihood gain
/// drops below `tol` or after `max_iters` iterations.
pub fn fit_gmm(data: &Dataset, k: usize, max_iters: usize, tol: f64, seed: u64) -> Result<GmmFit> {
    if k < 1 {
        return Err(Error::invalid("number of components must be at least 1"));
    }
    let xs = features_of(data)?;
    if xs.len() < k {
        return Err(Error::invalid(format!(
            "{} points cannot support {k} components",
            xs.len()
        )));
    }
    let n = xs.len();
    let d = xs[0].len();
    let mut r = rng::from_seed(seed);

    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    let global_var: Vec<f64> = (0..d)
        .map(|j| {
            (xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n as f64).max(VARIANCE_FLOOR)
        })
        .collect();

    let centers = kmeans_pp(&xs, k, &mut r);
    let mut mix = GaussianMixture {
        weights: vec![1.0 / k as f64; k],
        means: centers,
        variances: vec![global_var.clone(); k],
    };

    let mut trace = Vec::new();
    let mut reseeded: Vec<usize> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut resp = vec![vec![0.0; k]; n];
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        // E-step.
        let mut ll = 0.0;
        let mut point_ll = vec![0.0; n];
        for (i, x) in xs.iter().enumerate() {
            let lw = mix.weighted_log_densities(x);
            let z = log_sum_exp(&lw);
            point_ll[i] = z;
            ll += z;
            for (rk, l) in resp[i].iter_mut().zip(&lw) {
                *rk = (l - z).exp();
            }
        }
        if let Some(prev) = trace.last() {
            if ll - prev < tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);

        // M-step.
        let mass: Vec<f64> = (0..k).map(|c| resp.iter().map(|r| r[c]).sum()).collect();
        for c in 0..k {
            if mass[c] < COLLAPSE_MASS {
                if reseeded.contains(&c) {
                    return Err(Error::DegenerateComponent { component: c });
                }
                reseeded.push(c);
                // Restart the component on the worst-explained point.
                let worst = (0..n).min_by(|&a, &b| point_ll[a].total_cmp(&point_ll[b])).unwrap();
                mix.means[c] = xs[worst].to_vec();
                mix.variances[c] = global_var.clone();
                mix.weights[c] = 1.0 / k as f64;
                continue;
            }
            mix.weights[c] = mass[c] / n as f64;
            for j in 0..d {
                let m = resp.iter().zip(&xs).map(|(r, x)| r[c] * x[j]).sum::<f64>() / mass[c];
                let v = resp.iter().zip(&xs).map(|(r, x)| r[c] * (x[j] - m).powi(2)).sum::<f64>() / mass[c];
                mix.means[c][j] = m;
                mix.variances[c][j] = v.max(VARIANCE_FLOOR);
            }
        }
        let total: f64 = mix.weights.iter().sum();
        mix.weights.iter_mut().for_each(|w| *w /= total);
    }
    if !converged {
        trace.push(xs.iter().map(|x| mix.log_density(x)).sum());
    }
    let fit = GmmFit {
        mixture: mix,
        log_likelihood: trace,
        iterations,
        converged,
        reseeded,
    };
    debug_assert!(fit.is_monotone(), "EM log-likelihood decreased: {:?}", fit.log_likelihood);
    Ok(fit)
}

fn kmeans_pp(xs: &[&[f64]], k: usize, r: &mut Rng) -> Vec<Vec<f64>> {
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut centers = vec![xs[r.random_range(0..xs.len())].to_vec()];
    let mut nearest: Vec<f64> = xs.iter().map(|x| dist2(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let idx = if total > 0.0 {
            super::draw_categorical(&nearest.iter().map(|d| d / total).collect::<Vec<_>>(), r)
        } else {
            r.random_range(0..xs.len())
        };
        let c = xs[idx].to_vec();
        for (nd, x) in nearest.iter_mut().zip(xs) {
            *nd = nd.min(dist2(x, &c));
        }
        centers.push(c);
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Example, Label, TaskSchema};

    fn blobs(centers: &[[f64; 2]], sigma: f64, n: usize, seed: u64) -> Dataset {
        let mut r = rng::from_seed(seed);
        let schema = TaskSchema::continuous(2, 2).unwrap();
        let ex = (0..n)
            .map(|i| {
                let c = centers[i % centers.len()];
                let x = c
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        m + sigma * z
                    })
                    .collect();
                Example::features(x, Label::Absent)
            })
            .collect();
        Dataset::new("b", schema, ex).unwrap()
    }

    #[test]
    fn single_component_is_sample_moments() {
        let d = blobs(&[[1.0, -1.0]], 2.0, 200, 1);
        let fit = fit_gmm(&d, 1, 50, 1e-10, 0).unwrap();
        let xs: Vec<&[f64]> = d.iter().map(|e| e.payload.features().unwrap()).collect();
        for j in 0..2 {
            let m = xs.iter().map(|x| x[j]).sum::<f64>() / 200.0;
            let v = xs.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / 200.0;
            assert!((fit.mixture.means[0][j] - m).abs() < 1e-12);
            assert!((fit.mixture.variances[0][j] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_separated_clusters() {
        let d = blobs(&[[0.0, 0.0], [10.0, 0.0]], 0.5, 500, 3);
        let fit = fit_gmm(&d, 2, 200, 1e-8, 4).unwrap();
        assert!(fit.is_monotone());
        let mut means = fit.mixture.means.clone();
        means.sort_by(|a, b| a[0].total_cmp(&b[0]));
        for (m, truth) in means.iter().zip([[0.0, 0.0], [10.0, 0.0]]) {
            for j in 0..2 {
                assert!((m[j] - truth[j]).abs() < 0.1, "{means:?}");
            }
        }
    }

    #[test]
    fn log_likelihood_monotone_and_responsibilities_normalized() {
        let d = blobs(&[[0.0, 0.0], [2.0, 2.0], [0.0, 3.0]], 1.0, 300, 8);
        for seed in 0..5 {
            let fit = fit_gmm(&d, 3, 100, 1e-9, seed).unwrap();
            assert!(fit.is_monotone(), "{:?}", fit.log_likelihood);
            for e in d.iter().take(50) {
                let r = fit.mixture.responsibilities(e.payload.features().unwrap());
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn validation() {
        let d = blobs(&[[0.0, 0.0]], 1.0, 3, 0);
        assert!(fit_gmm(&d, 0, 10, 1e-6, 0).is_err());
        assert!(fit_gmm(&d, 4, 10, 1e-6, 0).is_err());
        let text = Dataset::new("t", TaskSchema::text(2, 1).unwrap(), vec![]).unwrap();
        assert!(matches!(fit_gmm(&text, 1, 10, 1e-6, 0), Err(Error::UnsupportedModality { .. })));
    }

    #[test]
    fn duplicated_points_hit_the_variance_floor() {
        let schema = TaskSchema::continuous(2, 1).unwrap();
        let ex = (0..10).map(|_| Example::features(vec![3.0], Label::Absent)).collect();
        let d = Dataset::new("same", schema, ex).unwrap();
        let fit = fit_gmm(&d, 1, 10, 1e-6, 0).unwrap();
        assert_eq!(fit.mixture.variances[0][0], VARIANCE_FLOOR);
    }
}
