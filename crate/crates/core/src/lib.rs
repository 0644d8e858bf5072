//! Generate, annotate, learn.
//!
//! Fit a generative model on the inputs of a labeled task, synthesize a pool
//! of unlabeled examples from it, pseudo-label that pool with a classifier and
//! train students on the mixture of real and pseudo-labeled data. The crate
//! also exposes the risk functionals behind the approach as executable Monte
//! Carlo estimators.
//!
//! Modules map onto the stages of the pipeline:
//!
//! - [`corpus`]: examples, datasets, JSONL IO, splitting, dedup and mixing.
//! - [`generator`]: n-gram language models, Gaussian mixtures and tabular
//!   generators, plus bulk synthesis.
//! - [`classifier`]: feature maps, linear and MLP softmax classifiers, SGD.
//! - [`risk`]: empirical, vicinal, generative and class-conditional risk.
//! - [`pipelines`]: self-training, distillation, self-distillation and a
//!   FixMatch-style step.
//! - [`diagnostics`]: n-gram overlap, annotation agreement, synthesis rates.
//! - [`tasks`]: synthetic Gaussian benchmark tasks.

pub mod classifier;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod generator;
pub mod pipelines;
pub mod risk;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
