//! Softmax classifiers with flat parameter vectors.
//!
//! Linear layout: row-major `C x (d + 1)`, last column is the bias.
//! MLP layout: hidden layer `H x (d + 1)` followed by output layer
//! `C x (H + 1)`, both row-major with the bias last.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::label::SoftLabel;
use crate::rng;

/// Probability floor inside the log of the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Model {
    Linear {
        num_classes: usize,
        input_dim: usize,
        params: Vec<f64>,
    },
    Mlp {
        num_classes: usize,
        input_dim: usize,
        hidden_width: usize,
        params: Vec<f64>,
    },
}

impl Model {
    pub fn linear_zeros(num_classes: usize, input_dim: usize) -> Self {
        Model::Linear {
            num_classes,
            input_dim,
            params: vec![0.0; num_classes * (input_dim + 1)],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn mlp_random(num_classes: usize, input_dim: usize, hidden_width: usize, seed: u64) -> Self {
        let mut r = rng::from_seed(seed);
        let mut params = Vec::with_capacity(hidden_width * (input_dim + 1) + num_classes * (hidden_width + 1));
        let a1 = (6.0 / (input_dim + hidden_width) as f64).sqrt();
        for _ in 0..hidden_width {
            for _ in 0..input_dim {
                params.push(r.random_range(-a1..a1));
            }
            params.push(0.0);
        }
        let a2 = (6.0 / (hidden_width + num_classes) as f64).sqrt();
        for _ in 0..num_classes {
            for _ in 0..hidden_width {
                params.push(r.random_range(-a2..a2));
            }
            params.push(0.0);
        }
        Model::Mlp {
            num_classes,
            input_dim,
            hidden_width,
            params,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::Linear { num_classes, .. } | Model::Mlp { num_classes, .. } => *num_classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Linear { input_dim, .. } | Model::Mlp { input_dim, .. } => *input_dim,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Model::Linear { params, .. } | Model::Mlp { params, .. } => params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Linear { params, .. } | Model::Mlp { params, .. } => params,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Whether parameter `i` is a bias (excluded from weight decay).
    pub fn is_bias(&self, i: usize) -> bool {
        match self {
            Model::Linear { input_dim, .. } => i % (input_dim + 1) == *input_dim,
            Model::Mlp {
                input_dim,
                hidden_width,
                ..
            } => {
                let l1 = hidden_width * (input_dim + 1);
                if i < l1 {
                    i % (input_dim + 1) == *input_dim
                } else {
                    (i - l1) % (hidden_width + 1) == *hidden_width
                }
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Model::Linear {
                num_classes,
                input_dim,
                params,
            } => affine(params, *num_classes, *input_dim, x),
            Model::Mlp {
                num_classes,
                input_dim,
                hidden_width,
                params,
            } => {
                let l1 = hidden_width * (input_dim + 1);
                let hidden: Vec<f64> = affine(&params[..l1], *hidden_width, *input_dim, x)
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
                affine(&params[l1..], *num_classes, *hidden_width, &hidden)
            }
        }
    }

    /// Adds the gradient of `cross_entropy(target, softmax(logits(x)))` to
    /// `grad`, scaled by `scale`, and returns the unscaled loss.
    pub fn accumulate_gradient(&self, x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        match self {
            Model::Linear {
                num_classes,
                input_dim,
                params,
            } => {
                let logits = affine(params, *num_classes, *input_dim, x);
                let p = softmax(&logits);
                let loss = cross_entropy_raw(target, p.as_slice());
                let row = input_dim + 1;
                for c in 0..*num_classes {
                    let delta = scale * (p.as_slice()[c] - target[c]);
                    let g = &mut grad[c * row..(c + 1) * row];
                    for (gj, xj) in g.iter_mut().zip(x) {
                        *gj += delta * xj;
                    }
                    g[*input_dim] += delta;
                }
                loss
            }
            Model::Mlp {
                num_classes,
                input_dim,
                hidden_width,
                params,
            } => {
                let (h, c_n, d) = (*hidden_width, *num_classes, *input_dim);
                let l1 = h * (d + 1);
                let hidden: Vec<f64> = affine(&params[..l1], h, d, x).into_iter().map(f64::tanh).collect();
                let logits = affine(&params[l1..], c_n, h, &hidden);
                let p = softmax(&logits);
                let loss = cross_entropy_raw(target, p.as_slice());
                let mut back = vec![0.0; h];
                let (g1, g2) = grad.split_at_mut(l1);
                for c in 0..c_n {
                    let delta = scale * (p.as_slice()[c] - target[c]);
                    let w = &params[l1 + c * (h + 1)..l1 + (c + 1) * (h + 1)];
                    let g = &mut g2[c * (h + 1)..(c + 1) * (h + 1)];
                    for k in 0..h {
                        g[k] += delta * hidden[k];
                        back[k] += delta * w[k];
                    }
                    g[h] += delta;
                }
                for k in 0..h {
                    let dk = back[k] * (1.0 - hidden[k] * hidden[k]);
                    let g = &mut g1[k * (d + 1)..(k + 1) * (d + 1)];
                    for (gj, xj) in g.iter_mut().zip(x) {
                        *gj += dk * xj;
                    }
                    g[d] += dk;
                }
                loss
            }
        }
    }
}

fn affine(params: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            let w = &params[r * (cols + 1)..(r + 1) * (cols + 1)];
            w[..cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[cols]
        })
        .collect()
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> SoftLabel {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    SoftLabel::from_weights(exps)
}

pub(crate) fn cross_entropy_raw(q: &[f64], p: &[f64]) -> f64 {
    -q.iter()
        .zip(p)
        .filter(|(qc, _)| **qc != 0.0)
        .map(|(qc, pc)| qc * pc.max(PROB_CLAMP).ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1000.0, 0.0]);
        assert_eq!(p.as_slice()[0], 1.0);
        assert!(p.as_slice()[1] < 1e-300);
        assert!(p.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bias_layout() {
        let m = Model::linear_zeros(2, 3);
        let biases: Vec<usize> = (0..m.param_count()).filter(|&i| m.is_bias(i)).collect();
        assert_eq!(biases, vec![3, 7]);
        let m = Model::mlp_random(2, 1, 2, 0);
        // hidden: [w b][w b], output: [w w b][w w b]
        let biases: Vec<usize> = (0..m.param_count()).filter(|&i| m.is_bias(i)).collect();
        assert_eq!(biases, vec![1, 3, 6, 9]);
    }

    #[test]
    fn mlp_init_is_seeded() {
        assert_eq!(Model::mlp_random(2, 3, 4, 1), Model::mlp_random(2, 3, 4, 1));
        assert_ne!(Model::mlp_random(2, 3, 4, 1), Model::mlp_random(2, 3, 4, 2));
    }
}
