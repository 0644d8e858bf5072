//! Confidence-filtered consistency training: hard pseudo-labels from weakly
//! augmented inputs supervise predictions on strongly augmented ones.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::keep_confident;
use crate::classifier::{evaluate, softmax, Classifier, EpochRecord, SoftLabel, TrainingTrace};
use crate::corpus::{Dataset, Modality, Payload};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Additive Gaussian noise scaled per feature, then coordinate dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    /// Noise standard deviation as a multiple of each feature's std.
    pub noise: f64,
    pub dropout: f64,
}

impl Augmentation {
    pub const IDENTITY: Self = Self {
        noise: 0.0,
        dropout: 0.0,
    };

    pub fn apply(&self, x: &[f64], feature_std: &[f64], rng: &mut Rng) -> Vec<f64> {
        if *self == Self::IDENTITY {
            return x.to_vec();
        }
        x.iter()
            .zip(feature_std)
            .map(|(v, s)| {
                let z: f64 = StandardNormal.sample(rng);
                let noisy = v + self.noise * s * z;
                if self.dropout > 0.0 && rng.random::<f64>() < self.dropout {
                    0.0
                } else {
                    noisy
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPair {
    pub weak: Augmentation,
    pub strong: Augmentation,
    pub feature_std: Vec<f64>,
}

impl AugmentationPair {
    /// Weak: noise 0.05 std. Strong: noise 0.25 std plus dropout 0.2.
    pub fn standard(feature_std: Vec<f64>) -> Self {
        Self {
            weak: Augmentation {
                noise: 0.05,
                dropout: 0.0,
            },
            strong: Augmentation {
                noise: 0.25,
                dropout: 0.2,
            },
            feature_std,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weak: Augmentation::IDENTITY,
            strong: Augmentation::IDENTITY,
            feature_std: vec![0.0; dim],
        }
    }
}

/// Per-feature standard deviation (population) of a continuous dataset.
pub fn feature_std(d: &Dataset) -> Result<Vec<f64>> {
    d.schema.require(Modality::Continuous, "feature_std")?;
    d.require_non_empty()?;
    let n = d.len() as f64;
    let dim = d.schema.feature_dim;
    let mut mean = vec![0.0; dim];
    for e in d {
        for (m, v) in mean.iter_mut().zip(e.payload.features().expect("schema checked")) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for e in d {
        for ((s, v), m) in var.iter_mut().zip(e.payload.features().expect("schema checked")).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    Ok(var.into_iter().map(f64::sqrt).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub loss: f64,
    pub labeled_loss: f64,
    pub unlabeled_loss: f64,
    /// Unlabeled rows whose pseudo-label passed the threshold.
    pub retained: usize,
}

fn features_of(x: &Payload) -> Result<&[f64]> {
    x.features().ok_or(Error::UnsupportedModality {
        op: "fixmatch_step",
        modality: Modality::Text.to_string(),
    })
}

/// One SGD step on `mean CE(labeled) + sum CE(retained pseudo-labels) / |unlabeled|`.
#[allow(clippy::too_many_arguments)]
pub fn fixmatch_step(
    f: &mut Classifier,
    labeled: &[(&Payload, usize)],
    unlabeled: &[&Payload],
    tau: f64,
    mu: usize,
    aug: &AugmentationPair,
    learning_rate: f64,
    rng: &mut Rng,
) -> Result<StepOutcome> {
    if labeled.is_empty() {
        return Err(Error::invalid("fixmatch_step needs a labeled batch"));
    }
    if unlabeled.len() != mu * labeled.len() {
        return Err(Error::invalid(format!(
            "unlabeled batch has {} rows, expected mu * {} = {}",
            unlabeled.len(),
            labeled.len(),
            mu * labeled.len()
        )));
    }
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::invalid("tau must lie in [0, 1)"));
    }
    let c = f.num_classes();
    let model = &f.model;
    let mut grad = vec![0.0; model.param_count()];

    let scale_l = 1.0 / labeled.len() as f64;
    let mut labeled_loss = 0.0;
    for (x, y) in labeled {
        let xa = aug.weak.apply(features_of(x)?, &aug.feature_std, rng);
        let phi = f.featurize(&Payload::Features(xa))?;
        labeled_loss += scale_l * model.accumulate_gradient(&phi, SoftLabel::one_hot(*y, c).as_slice(), scale_l, &mut grad);
    }

    let scale_u = if unlabeled.is_empty() {
        0.0
    } else {
        1.0 / unlabeled.len() as f64
    };
    let mut unlabeled_loss = 0.0;
    let mut retained = 0;
    for x in unlabeled {
        let raw = features_of(x)?;
        let weak = f.featurize(&Payload::Features(aug.weak.apply(raw, &aug.feature_std, rng)))?;
        let p = softmax(&model.logits(&weak));
        let strong = f.featurize(&Payload::Features(aug.strong.apply(raw, &aug.feature_std, rng)))?;
        if !keep_confident(p.max_prob(), tau) {
            continue;
        }
        retained += 1;
        let target = SoftLabel::one_hot(p.argmax(), c);
        unlabeled_loss += scale_u * model.accumulate_gradient(&strong, target.as_slice(), scale_u, &mut grad);
    }

    let loss = labeled_loss + unlabeled_loss;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    for (w, g) in f.model.params_mut().iter_mut().zip(&grad) {
        *w -= learning_rate * g;
    }
    Ok(StepOutcome {
        loss,
        labeled_loss,
        unlabeled_loss,
        retained,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixMatchConfig {
    pub tau: f64,
    pub mu: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for FixMatchConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            mu: 7,
            batch_size: 64,
            learning_rate: 0.1,
            epochs: 50,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

/// Epochs over the labeled set; each labeled batch is paired with `mu`
/// times as many unlabeled rows drawn from a reshuffled cycle. Keeps the
/// best dev epoch.
pub fn fixmatch_train(
    init: Classifier,
    labeled: &Dataset,
    unlabeled: &Dataset,
    cfg: &FixMatchConfig,
    aug: &AugmentationPair,
    dev: &Dataset,
) -> Result<(Classifier, TrainingTrace)> {
    labeled.schema.require(Modality::Continuous, "fixmatch_train")?;
    unlabeled.schema.require(Modality::Continuous, "fixmatch_train")?;
    labeled.require_non_empty()?;
    unlabeled.require_non_empty()?;
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.early_stop_patience == 0 {
        return Err(Error::invalid("batch_size, epochs and early_stop_patience must be positive"));
    }
    let labels = labeled.hard_labels()?;
    let mut r = rng::from_seed(cfg.seed);
    let mut f = init;
    let mut trace = TrainingTrace {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, f64, Classifier)> = None;
    let mut since_best = 0;
    let mut u_order: Vec<usize> = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..labeled.len()).collect();
        order.shuffle(&mut r);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let lb: Vec<(&Payload, usize)> = chunk.iter().map(|&i| (&labeled.examples()[i].payload, labels[i])).collect();
            let mut ub = Vec::with_capacity(cfg.mu * chunk.len());
            while ub.len() < cfg.mu * chunk.len() {
                if u_order.is_empty() {
                    u_order = (0..unlabeled.len()).collect();
                    u_order.shuffle(&mut r);
                }
                ub.push(&unlabeled.examples()[u_order.pop().expect("refilled")].payload);
            }
            let out = fixmatch_step(&mut f, &lb, &ub, cfg.tau, cfg.mu, aug, cfg.learning_rate, &mut r)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, batch: steps },
                    other => other,
                })?;
            loss_sum += out.loss;
            steps += 1;
        }
        let m = evaluate(&f, dev)?;
        trace.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / steps as f64,
            dev_accuracy: m.accuracy,
            dev_cross_entropy: m.mean_cross_entropy,
        });
        let improved = best
            .as_ref()
            .is_none_or(|(a, ce, _)| m.accuracy > *a || (m.accuracy == *a && m.mean_cross_entropy < *ce));
        if improved {
            best = Some((m.accuracy, m.mean_cross_entropy, f.clone()));
            trace.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                trace.stopped_early = true;
                break;
            }
        }
    }
    Ok((best.expect("at least one epoch").2, trace))
}
