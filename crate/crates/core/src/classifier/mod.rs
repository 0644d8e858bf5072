//! Discriminative models: feature maps, softmax classifiers, training,
//! annotation and evaluation.

mod features;
mod label;
mod model;
mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example, Label, Payload};
use crate::error::{Error, Result};

pub use features::{ngram_slot, FeatureMap};
pub use label::{argmax, SoftLabel, SIMPLEX_TOLERANCE};
pub use model::{softmax, Model, PROB_CLAMP};
pub use train::{
    gradient_check, objective, train, EpochRecord, TrainConfig, TrainingData, TrainingTrace,
};

/// Anything that maps a payload to a distribution over classes.
pub trait SoftPredictor: Sync {
    fn num_classes(&self) -> usize;
    fn predict(&self, x: &Payload) -> Result<SoftLabel>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Linear,
    /// One tanh hidden layer. Zero hidden units degenerates to `Linear`.
    Mlp { hidden: usize },
}

/// Recipe for a fresh classifier. Building twice gives identical weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub family: Family,
    pub feature_map: FeatureMap,
    pub num_classes: usize,
    #[serde(default)]
    pub init_seed: u64,
}

impl ClassifierSpec {
    pub fn build(&self) -> Result<Classifier> {
        self.feature_map.validate()?;
        if self.num_classes < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        let d = self.feature_map.output_dim();
        let model = match self.family {
            Family::Linear | Family::Mlp { hidden: 0 } => Model::linear_zeros(self.num_classes, d),
            Family::Mlp { hidden } => Model::mlp_random(self.num_classes, d, hidden, self.init_seed),
        };
        Ok(Classifier {
            feature_map: self.feature_map.clone(),
            model,
        })
    }

    pub fn param_count(&self) -> usize {
        let d = self.feature_map.output_dim();
        match self.family {
            Family::Linear | Family::Mlp { hidden: 0 } => self.num_classes * (d + 1),
            Family::Mlp { hidden } => hidden * (d + 1) + self.num_classes * (hidden + 1),
        }
    }
}

/// A trained or initialized classifier together with its feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub feature_map: FeatureMap,
    pub model: Model,
}

impl Classifier {
    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    pub fn param_count(&self) -> usize {
        self.model.param_count()
    }

    /// Softmax over the logits of an already-featurized input.
    pub fn predict_soft(&self, x: &[f64]) -> Result<SoftLabel> {
        if x.len() != self.model.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.input_dim(),
                actual: x.len(),
            });
        }
        Ok(softmax(&self.model.logits(x)))
    }

    pub fn featurize(&self, x: &Payload) -> Result<Vec<f64>> {
        self.feature_map.featurize(x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl SoftPredictor for Classifier {
    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    fn predict(&self, x: &Payload) -> Result<SoftLabel> {
        self.predict_soft(&self.featurize(x)?)
    }
}

/// `-sum_c q_c log p_c`, with `p` clamped below at [`PROB_CLAMP`].
pub fn cross_entropy(q: &SoftLabel, p: &SoftLabel) -> Result<f64> {
    if q.num_classes() != p.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: q.num_classes(),
            actual: p.num_classes(),
        });
    }
    Ok(model::cross_entropy_raw(q.as_slice(), p.as_slice()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationMode {
    Soft,
    Hard,
}

/// Pseudo-labels an unlabeled dataset with `f`.
pub fn annotate<P: SoftPredictor + ?Sized>(f: &P, unlabeled: &Dataset, mode: AnnotationMode) -> Result<Dataset> {
    if let Some(i) = unlabeled.iter().position(|e| !e.label.is_absent()) {
        return Err(Error::AlreadyLabeled { index: i });
    }
    let examples = unlabeled
        .examples()
        .par_iter()
        .map(|e| {
            let p = f.predict(&e.payload)?;
            let label = match mode {
                AnnotationMode::Soft => Label::Soft(p),
                AnnotationMode::Hard => Label::Hard(p.argmax()),
            };
            Ok(e.with_label(label))
        })
        .collect::<Result<Vec<Example>>>()?;
    Ok(unlabeled.with_examples(format!("{}/annotated", unlabeled.name), examples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub mean_cross_entropy: f64,
    pub count: usize,
}

/// Accuracy and mean cross-entropy on a hard-labeled dataset.
pub fn evaluate<P: SoftPredictor + ?Sized>(f: &P, d: &Dataset) -> Result<Metrics> {
    d.require_non_empty()?;
    let labels = d.hard_labels()?;
    let per_example = d
        .examples()
        .par_iter()
        .zip(labels.par_iter())
        .map(|(e, &y)| {
            let p = f.predict(&e.payload)?;
            let ce = cross_entropy(&SoftLabel::one_hot(y, f.num_classes()), &p)?;
            Ok((p.argmax() == y, ce))
        })
        .collect::<Result<Vec<_>>>()?;
    let correct = per_example.iter().filter(|(ok, _)| *ok).count();
    let ce: f64 = per_example.iter().map(|(_, ce)| ce).sum();
    let n = d.len() as f64;
    Ok(Metrics {
        accuracy: correct as f64 / n,
        mean_cross_entropy: ce / n,
        count: d.len(),
    })
}
