//! Data model for labeled, unlabeled and synthetic examples.

mod jsonl;
mod mix;
mod ops;
mod vocab;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classifier::SoftLabel;
use crate::error::{Error, Result};

pub use jsonl::{load_dataset, parse_jsonl, save_dataset, to_jsonl};
pub use mix::{mix, Batch, BatchItem, Mixer, Source};
pub use ops::{dedup, enforce_segment_count, split, SplitFractions};
pub use vocab::{tokenize, Vocab, BOS, EOS, SEP, SPECIAL_TOKENS, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Continuous,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Text => f.write_str("text"),
            Modality::Continuous => f.write_str("continuous"),
        }
    }
}

/// Shape of a task's inputs and outputs.
///
/// `segment_count` only applies to text tasks and `feature_dim` only to
/// continuous ones; the unused field is ignored by validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub modality: Modality,
    pub num_classes: usize,
    #[serde(default = "default_one")]
    pub segment_count: usize,
    #[serde(default = "default_one")]
    pub feature_dim: usize,
}

fn default_one() -> usize {
    1
}

impl TaskSchema {
    pub fn text(num_classes: usize, segment_count: usize) -> Result<Self> {
        let schema = Self {
            modality: Modality::Text,
            num_classes,
            segment_count,
            feature_dim: 1,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn continuous(num_classes: usize, feature_dim: usize) -> Result<Self> {
        let schema = Self {
            modality: Modality::Continuous,
            num_classes,
            segment_count: 1,
            feature_dim,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Schema(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.segment_count < 1 {
            return Err(Error::Schema("segment_count must be at least 1".into()));
        }
        if self.feature_dim < 1 {
            return Err(Error::Schema("feature_dim must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn require(&self, modality: Modality, op: &'static str) -> Result<()> {
        if self.modality != modality {
            return Err(Error::UnsupportedModality {
                op,
                modality: self.modality.to_string(),
            });
        }
        Ok(())
    }
}

/// Input side of an example: normalized tokens per segment, or a feature
/// vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Segments(Vec<Vec<String>>),
    Features(Vec<f64>),
}

/// Hashable identity of a payload. Features compare by bit pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PayloadKey {
    Segments(Vec<Vec<String>>),
    Features(Vec<u64>),
}

impl Payload {
    pub fn key(&self) -> PayloadKey {
        match self {
            Payload::Segments(s) => PayloadKey::Segments(s.clone()),
            Payload::Features(f) => PayloadKey::Features(f.iter().map(|v| v.to_bits()).collect()),
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            Payload::Segments(_) => Modality::Text,
            Payload::Features(_) => Modality::Continuous,
        }
    }

    pub fn segments(&self) -> Option<&[Vec<String>]> {
        match self {
            Payload::Segments(s) => Some(s),
            Payload::Features(_) => None,
        }
    }

    pub fn features(&self) -> Option<&[f64]> {
        match self {
            Payload::Features(f) => Some(f),
            Payload::Segments(_) => None,
        }
    }

    /// Convenience constructor from raw segment strings.
    pub fn from_text<S: AsRef<str>>(segments: &[S]) -> Self {
        Payload::Segments(segments.iter().map(|s| tokenize(s.as_ref())).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    #[default]
    Absent,
    Hard(usize),
    Soft(SoftLabel),
}

impl Label {
    pub fn is_absent(&self) -> bool {
        matches!(self, Label::Absent)
    }

    /// Target distribution; hard labels become one-hot.
    pub fn target(&self, num_classes: usize) -> Option<SoftLabel> {
        match self {
            Label::Absent => None,
            Label::Hard(c) => Some(SoftLabel::one_hot(*c, num_classes)),
            Label::Soft(s) => Some(s.clone()),
        }
    }

    pub fn hard(&self) -> Option<usize> {
        match self {
            Label::Hard(c) => Some(*c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Original,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub payload: Payload,
    pub label: Label,
    pub provenance: Provenance,
}

impl Example {
    pub fn new(payload: Payload, label: Label, provenance: Provenance) -> Self {
        Self {
            payload,
            label,
            provenance,
        }
    }

    pub fn features(features: Vec<f64>, label: Label) -> Self {
        Self::new(Payload::Features(features), label, Provenance::Original)
    }

    pub fn text<S: AsRef<str>>(segments: &[S], label: Label) -> Self {
        Self::new(Payload::from_text(segments), label, Provenance::Original)
    }

    pub fn with_label(&self, label: Label) -> Self {
        Self {
            payload: self.payload.clone(),
            label,
            provenance: self.provenance,
        }
    }

    /// Checks the example against a schema. Segment count is part of the
    /// check unless `check_segments` is false (raw generator draws).
    pub fn conforms(&self, schema: &TaskSchema, check_segments: bool) -> std::result::Result<(), String> {
        match (&self.payload, schema.modality) {
            (Payload::Segments(segments), Modality::Text) => {
                if check_segments && segments.len() != schema.segment_count {
                    return Err(format!(
                        "expected {} segments, found {}",
                        schema.segment_count,
                        segments.len()
                    ));
                }
                for (i, seg) in segments.iter().enumerate() {
                    if seg.is_empty() {
                        return Err(format!("segment {i} is empty"));
                    }
                    if let Some(tok) = seg.iter().find(|t| vocab::is_special(t)) {
                        return Err(format!("segment {i} contains reserved token `{tok}`"));
                    }
                }
            }
            (Payload::Features(f), Modality::Continuous) => {
                if f.len() != schema.feature_dim {
                    return Err(format!(
                        "expected {} features, found {}",
                        schema.feature_dim,
                        f.len()
                    ));
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err("non-finite feature value".into());
                }
            }
            (p, m) => {
                return Err(format!("{} payload in a {m} task", p.modality()));
            }
        }
        match &self.label {
            Label::Absent => {}
            Label::Hard(c) if *c >= schema.num_classes => {
                return Err(format!(
                    "label {c} out of range for {} classes",
                    schema.num_classes
                ));
            }
            Label::Hard(_) => {}
            Label::Soft(s) if s.num_classes() != schema.num_classes => {
                return Err(format!(
                    "soft label has {} entries, expected {}",
                    s.num_classes(),
                    schema.num_classes
                ));
            }
            Label::Soft(_) => {}
        }
        Ok(())
    }
}

/// Ordered collection of examples sharing a schema.
///
/// Datasets are immutable once built; operations return new datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub schema: TaskSchema,
    examples: Vec<Example>,
    /// Set when original and synthetic examples are deliberately combined.
    #[serde(default)]
    pub mixed_provenance: bool,
}

impl Dataset {
    /// Builds a validated dataset.
    pub fn new(name: impl Into<String>, schema: TaskSchema, examples: Vec<Example>) -> Result<Self> {
        let d = Self::new_unchecked(name, schema, examples);
        d.validate()?;
        Ok(d)
    }

    /// Builds a dataset without checking segment counts or provenance.
    /// Raw generator output lives here until `enforce_segment_count`.
    pub fn new_unchecked(name: impl Into<String>, schema: TaskSchema, examples: Vec<Example>) -> Self {
        Self {
            name: name.into(),
            schema,
            examples,
            mixed_provenance: false,
        }
    }

    pub fn empty(name: impl Into<String>, schema: TaskSchema) -> Self {
        Self::new_unchecked(name, schema, Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        for (i, ex) in self.examples.iter().enumerate() {
            ex.conforms(&self.schema, true)
                .map_err(|m| Error::Schema(format!("{} example {i}: {m}", self.name)))?;
        }
        if !self.mixed_provenance {
            let kinds: HashSet<Provenance> = self.examples.iter().map(|e| e.provenance).collect();
            if kinds.len() > 1 {
                return Err(Error::Schema(format!(
                    "{} mixes original and synthetic examples without the mixed flag",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    /// Same schema and name, different examples.
    pub fn with_examples(&self, name: impl Into<String>, examples: Vec<Example>) -> Self {
        Self {
            name: name.into(),
            schema: self.schema.clone(),
            examples,
            mixed_provenance: self.mixed_provenance,
        }
    }

    pub fn hard_labels(&self) -> Result<Vec<usize>> {
        self.examples
            .iter()
            .enumerate()
            .map(|(i, e)| e.label.hard().ok_or(Error::Unlabeled { index: i }))
            .collect()
    }

    /// Copy with every label removed.
    pub fn unlabeled(&self) -> Self {
        let examples = self.examples.iter().map(|e| e.with_label(Label::Absent)).collect();
        self.with_examples(format!("{}/inputs", self.name), examples)
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset(self.name.clone()));
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Example;
    type IntoIter = std::slice::Iter<'a, Example>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}
