//! Mini-batch SGD with dev-set model selection, and a finite-difference
//! gradient check.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{evaluate, Classifier, Model};
use crate::corpus::{Dataset, Mixer, Source};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub l2: f64,
    /// Stop after this many epochs without a dev improvement.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            l2: 0.0,
            early_stop_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::invalid("epochs, batch_size and early_stop_patience must be positive"));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::invalid("l2 must be non-negative"));
        }
        Ok(())
    }
}

/// What to train on: one labeled dataset, or labeled data mixed with an
/// annotated synthetic set at ratio `lambda`.
#[derive(Debug, Clone, Copy)]
pub enum TrainingData<'a> {
    Single(&'a Dataset),
    Mixed {
        labeled: &'a Dataset,
        annotated: &'a Dataset,
        lambda: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_accuracy: f64,
    pub dev_cross_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Featurized {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

fn featurize_all(f: &Classifier, d: &Dataset) -> Result<Featurized> {
    let c = f.num_classes();
    let mut x = Vec::with_capacity(d.len());
    let mut y = Vec::with_capacity(d.len());
    for (i, e) in d.iter().enumerate() {
        let target = e.label.target(c).ok_or(Error::Unlabeled { index: i })?;
        if target.num_classes() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: target.num_classes(),
            });
        }
        x.push(f.featurize(&e.payload)?);
        y.push(target.into_vec());
    }
    Ok(Featurized { x, y })
}

/// Mean cross-entropy plus `l2/2 * |w|^2` (biases excluded) and its gradient.
pub(crate) fn batch_loss_and_grad(model: &Model, rows: &[(&[f64], &[f64])], l2: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.param_count()];
    let scale = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    for (x, y) in rows {
        loss += model.accumulate_gradient(x, y, scale, &mut grad);
    }
    loss *= scale;
    if l2 > 0.0 {
        for (i, w) in model.params().iter().enumerate() {
            if !model.is_bias(i) {
                loss += 0.5 * l2 * w * w;
                grad[i] += l2 * w;
            }
        }
    }
    (loss, grad)
}

/// Trains `init` by SGD and returns the parameters of the epoch with the best
/// dev accuracy (lower dev cross-entropy breaks ties, then the earlier epoch).
pub fn train(
    init: Classifier,
    data: TrainingData<'_>,
    cfg: &TrainConfig,
    dev: &Dataset,
) -> Result<(Classifier, TrainingTrace)> {
    cfg.validate()?;
    dev.require_non_empty()?;
    let (labeled, annotated, mut mixer) = match data {
        TrainingData::Single(d) => (d, None, Mixer::single(d, cfg.batch_size, cfg.seed)?),
        TrainingData::Mixed {
            labeled,
            annotated,
            lambda,
        } => (
            labeled,
            Some(annotated),
            crate::corpus::mix(labeled, annotated, lambda, cfg.batch_size, cfg.seed)?,
        ),
    };
    let lab = featurize_all(&init, labeled)?;
    let unl = annotated.map(|d| featurize_all(&init, d)).transpose()?;

    let mut model = init;
    let mut best: Option<(f64, f64, Classifier)> = None;
    let mut trace = TrainingTrace {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, batch) in mixer.next_epoch().into_iter().enumerate() {
            let rows: Vec<(&[f64], &[f64])> = batch
                .items
                .iter()
                .map(|it| {
                    let set = match it.source {
                        Source::Labeled => &lab,
                        Source::Unlabeled => unl.as_ref().expect("mixed batch without annotated set"),
                    };
                    (set.x[it.index].as_slice(), set.y[it.index].as_slice())
                })
                .collect();
            let (loss, grad) = batch_loss_and_grad(&model.model, &rows, cfg.l2);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            if cfg.learning_rate > 0.0 {
                for (w, g) in model.model.params_mut().iter_mut().zip(&grad) {
                    *w -= cfg.learning_rate * g;
                }
            }
            loss_sum += loss;
            batches += 1;
        }
        let m = evaluate(&model, dev)?;
        trace.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / batches.max(1) as f64,
            dev_accuracy: m.accuracy,
            dev_cross_entropy: m.mean_cross_entropy,
        });
        let improved = match &best {
            None => true,
            Some((acc, ce, _)) => m.accuracy > *acc || (m.accuracy == *acc && m.mean_cross_entropy < *ce),
        };
        if improved {
            best = Some((m.accuracy, m.mean_cross_entropy, model.clone()));
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
    let (_, _, best_model) = best.expect("at least one epoch runs");
    Ok((best_model, trace))
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences, over up to 100 randomly chosen coordinates. Where both
/// derivatives are below 1e-8 the absolute difference is used instead.
pub fn gradient_check(f: &Classifier, batch: &Dataset, eps: f64, l2: f64, seed: u64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::invalid(format!("eps must lie in (0, 1e-3], got {eps}")));
    }
    batch.require_non_empty()?;
    let data = featurize_all(f, batch)?;
    let rows: Vec<(&[f64], &[f64])> = data.x.iter().zip(&data.y).map(|(x, y)| (x.as_slice(), y.as_slice())).collect();
    let (_, analytic) = batch_loss_and_grad(&f.model, &rows, l2);

    let n = f.param_count();
    let coords = sample(&mut rng::from_seed(seed), n, n.min(100)).into_vec();
    let mut probe = f.model.clone();
    let mut worst: f64 = 0.0;
    for i in coords {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + eps;
        let (plus, _) = batch_loss_and_grad(&probe, &rows, l2);
        probe.params_mut()[i] = orig - eps;
        let (minus, _) = batch_loss_and_grad(&probe, &rows, l2);
        probe.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-8 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Mean training objective on a full dataset; used by tests and diagnostics.
pub fn objective(f: &Classifier, d: &Dataset, l2: f64) -> Result<f64> {
    let data = featurize_all(f, d)?;
    let rows: Vec<(&[f64], &[f64])> = data.x.iter().zip(&data.y).map(|(x, y)| (x.as_slice(), y.as_slice())).collect();
    Ok(batch_loss_and_grad(&f.model, &rows, l2).0)
}
