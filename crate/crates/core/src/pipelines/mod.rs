//! End-to-end GAL runs: iterative self-training, knowledge distillation with
//! synthetic data, the self-distillation baseline, and confidence-filtered
//! consistency training.

mod fixmatch;
mod report;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{
    annotate, evaluate, train, AnnotationMode, Classifier, ClassifierSpec, TrainConfig, TrainingData, TrainingTrace,
};
use crate::corpus::{to_jsonl, Dataset, Label};
use crate::error::{Error, Result};
use crate::generator::{generate_dataset, GenerationStats, Generator, SamplerConfig};
use crate::rng;

pub use fixmatch::{
    feature_std, fixmatch_step, fixmatch_train, Augmentation, AugmentationPair, FixMatchConfig, StepOutcome,
};
pub use report::{IterationRecord, RunReport, Seeds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    /// Number of self-training iterations after the base model.
    pub iterations: usize,
    /// Synthetic set size as a multiple of `|L|`.
    pub k: usize,
    pub lambda: f64,
    pub label_mode: AnnotationMode,
    pub confidence_threshold: Option<f64>,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    /// Draw a fresh synthetic set in every iteration instead of reusing one.
    #[serde(default)]
    pub regenerate_each_iteration: bool,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            k: 10,
            lambda: 0.5,
            label_mode: AnnotationMode::Soft,
            confidence_threshold: None,
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            regenerate_each_iteration: false,
        }
    }
}

fn check_lambda_k(lambda: f64, k: usize) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::invalid(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(())
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        check_lambda_k(self.lambda, self.k)?;
        if let Some(t) = self.confidence_threshold {
            check_tau(t)?;
        }
        self.train.validate()?;
        self.sampler.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub k: usize,
    pub lambda: f64,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            k: 10,
            lambda: 0.2,
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda_k(self.lambda, self.k)?;
        self.train.validate()?;
        self.sampler.validate()
    }
}

/// Final model, report, and every model trained along the way (base model
/// first).
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub model: Classifier,
    pub report: RunReport,
    pub checkpoints: Vec<Classifier>,
}

/// Hex SHA-256 of a dataset's JSONL serialization.
pub fn dataset_hash(d: &Dataset) -> Result<String> {
    Ok(hex::encode(Sha256::digest(to_jsonl(d)?.as_bytes())))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("confidence threshold must lie in (0, 1), got {tau}")));
    }
    Ok(())
}

pub(crate) fn keep_confident(max_prob: f64, tau: f64) -> bool {
    max_prob > tau
}

/// Keeps soft-labeled examples whose largest class probability exceeds
/// `tau`, in order, and returns how many were dropped.
pub fn confidence_filter(annotated: &Dataset, tau: f64) -> Result<(Dataset, usize)> {
    check_tau(tau)?;
    let mut kept = Vec::with_capacity(annotated.len());
    for (i, e) in annotated.iter().enumerate() {
        match &e.label {
            Label::Soft(p) => {
                if keep_confident(p.max_prob(), tau) {
                    kept.push(e.clone());
                }
            }
            Label::Hard(_) => return Err(Error::invalid(format!("example {i} carries a hard label"))),
            Label::Absent => return Err(Error::Unlabeled { index: i }),
        }
    }
    let dropped = annotated.len() - kept.len();
    Ok((annotated.with_examples(annotated.name.clone(), kept), dropped))
}

fn record(
    iteration: usize,
    f: &Classifier,
    trace: &TrainingTrace,
    dev: &Dataset,
    test: &Dataset,
) -> Result<IterationRecord> {
    let d = evaluate(f, dev)?;
    let t = evaluate(f, test)?;
    Ok(IterationRecord {
        iteration,
        dev_accuracy: d.accuracy,
        test_accuracy: t.accuracy,
        test_cross_entropy: t.mean_cross_entropy,
        synthetic_count: 0,
        rejected_count: 0,
        filtered_count: 0,
        unlabeled_hash: None,
        best_epoch: trace.best_epoch,
        stopped_early: trace.stopped_early,
    })
}

fn to_hard(d: &Dataset) -> Dataset {
    let examples = d
        .iter()
        .map(|e| match &e.label {
            Label::Soft(p) => e.with_label(Label::Hard(p.argmax())),
            _ => e.clone(),
        })
        .collect();
    d.with_examples(d.name.clone(), examples)
}

fn synthesize(g: &Generator, count: usize, sampler: &SamplerConfig, labeled: &Dataset) -> Result<(Dataset, GenerationStats)> {
    let out = generate_dataset(g, count, sampler, &labeled.schema)?;
    Ok((out.dataset, out.stats))
}

fn warn_shortfall(stats: &GenerationStats, warnings: &mut Vec<String>) {
    if stats.shortfall() > 0 {
        warnings.push(format!(
            "draw budget exhausted: {} of {} synthetic samples generated",
            stats.accepted, stats.requested
        ));
    }
}

/// GAL self-training. The synthetic set is drawn once and reused in every
/// iteration unless `regenerate_each_iteration` is set; every student starts
/// from `f0`.
pub fn self_train(
    labeled: &Dataset,
    g: &Generator,
    f0: &ClassifierSpec,
    cfg: &SelfTrainConfig,
    dev: &Dataset,
    test: &Dataset,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    labeled.require_non_empty()?;
    labeled.hard_labels()?;
    let mut warnings = Vec::new();
    let count = cfg.k * labeled.len();
    let (mut unlabeled, stats) = synthesize(g, count, &cfg.sampler, labeled)?;
    warn_shortfall(&stats, &mut warnings);
    let mut total_stats = stats;

    let (mut current, trace) = train(f0.build()?, TrainingData::Single(labeled), &cfg.train, dev)?;
    let base = record(0, &current, &trace, dev, test)?;
    let mut checkpoints = vec![current.clone()];
    let mut iterations = Vec::with_capacity(cfg.iterations);

    let mut current_stats = total_stats.clone();
    for t in 1..=cfg.iterations {
        if cfg.regenerate_each_iteration && t > 1 {
            let mut s = cfg.sampler.clone();
            s.seed = rng::derive(cfg.sampler.seed, t as u64);
            let (d, st) = synthesize(g, count, &s, labeled).map_err(|e| e.at_iteration(t))?;
            warn_shortfall(&st, &mut warnings);
            accumulate(&mut total_stats, &st);
            unlabeled = d;
            current_stats = st;
        }
        let (next, mut rec) =
            iterate(t, &current, &unlabeled, labeled, f0, cfg, dev, test).map_err(|e| e.at_iteration(t))?;
        rec.rejected_count = current_stats.rejected;
        log::info!("iteration {t}: dev {:.4} test {:.4}", rec.dev_accuracy, rec.test_accuracy);
        iterations.push(rec);
        checkpoints.push(next.clone());
        current = next;
    }

    let report = RunReport {
        pipeline: "self_train".into(),
        base,
        iterations,
        generation: Some(total_stats),
        config: serde_json::to_value(cfg)?,
        seeds: Seeds {
            train: cfg.train.seed,
            sampler: cfg.sampler.seed,
        },
        warnings,
    };
    Ok(PipelineOutput {
        model: current,
        report,
        checkpoints,
    })
}

/// Annotate with `current`, filter, and train a fresh student on the mixture.
#[allow(clippy::too_many_arguments)]
fn iterate(
    t: usize,
    current: &Classifier,
    unlabeled: &Dataset,
    labeled: &Dataset,
    f0: &ClassifierSpec,
    cfg: &SelfTrainConfig,
    dev: &Dataset,
    test: &Dataset,
) -> Result<(Classifier, IterationRecord)> {
    let hash = dataset_hash(unlabeled)?;
    let soft = annotate(current, unlabeled, AnnotationMode::Soft)?;
    let (kept, filtered) = match cfg.confidence_threshold {
        Some(tau) => confidence_filter(&soft, tau)?,
        None => (soft, 0),
    };
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!("{} (every synthetic example filtered out)", kept.name)));
    }
    let annotated = match cfg.label_mode {
        AnnotationMode::Soft => kept,
        AnnotationMode::Hard => to_hard(&kept),
    };
    let data = TrainingData::Mixed {
        labeled,
        annotated: &annotated,
        lambda: cfg.lambda,
    };
    let (next, trace) = train(f0.build()?, data, &cfg.train, dev)?;
    let mut rec = record(t, &next, &trace, dev, test)?;
    rec.synthetic_count = unlabeled.len();
    rec.filtered_count = filtered;
    rec.unlabeled_hash = Some(hash);
    Ok((next, rec))
}

fn accumulate(total: &mut GenerationStats, s: &GenerationStats) {
    total.requested += s.requested;
    total.draws += s.draws;
    total.accepted += s.accepted;
    total.rejected += s.rejected;
    total.duplicates += s.duplicates;
    total.truncated += s.truncated;
    total.budget += s.budget;
}

fn capacity_warning(teacher: &Classifier, student: &ClassifierSpec) -> Option<String> {
    let (t, s) = (teacher.param_count(), student.param_count());
    (s >= t).then(|| format!("student has {s} parameters, not fewer than the teacher's {t}"))
}

/// GAL knowledge distillation: the teacher soft-labels `k |L|` synthetic
/// inputs and the student trains on them mixed with `L`.
pub fn distill(
    labeled: &Dataset,
    g: &Generator,
    teacher: &Classifier,
    student: &ClassifierSpec,
    cfg: &DistillConfig,
    dev: &Dataset,
    test: &Dataset,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    labeled.require_non_empty()?;
    labeled.hard_labels()?;
    let mut warnings = Vec::new();
    if let Some(w) = capacity_warning(teacher, student) {
        log::warn!("{w}");
        warnings.push(w);
    }
    let teacher_trace = TrainingTrace {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let base = record(0, teacher, &teacher_trace, dev, test)?;
    let (unlabeled, stats) = synthesize(g, cfg.k * labeled.len(), &cfg.sampler, labeled)?;
    warn_shortfall(&stats, &mut warnings);
    let annotated = annotate(teacher, &unlabeled, AnnotationMode::Soft)?;
    let data = TrainingData::Mixed {
        labeled,
        annotated: &annotated,
        lambda: cfg.lambda,
    };
    let (model, trace) = train(student.build()?, data, &cfg.train, dev).map_err(|e| e.at_iteration(1))?;
    let mut rec = record(1, &model, &trace, dev, test)?;
    rec.synthetic_count = unlabeled.len();
    rec.rejected_count = stats.rejected;
    rec.unlabeled_hash = Some(dataset_hash(&unlabeled)?);
    let report = RunReport {
        pipeline: "distill".into(),
        base,
        iterations: vec![rec],
        generation: Some(stats),
        config: serde_json::to_value(cfg)?,
        seeds: Seeds {
            train: cfg.train.seed,
            sampler: cfg.sampler.seed,
        },
        warnings,
    };
    Ok(PipelineOutput {
        checkpoints: vec![model.clone()],
        model,
        report,
    })
}

/// Distillation without synthetic data: the student trains only on the
/// teacher's soft predictions for the inputs of `L`.
pub fn distill_on_labeled(
    labeled: &Dataset,
    teacher: &Classifier,
    student: Classifier,
    train_cfg: &TrainConfig,
    dev: &Dataset,
    test: &Dataset,
) -> Result<PipelineOutput> {
    labeled.require_non_empty()?;
    let warnings = Vec::new();
    if teacher.num_classes() != student.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: teacher.num_classes(),
            actual: student.num_classes(),
        });
    }
    let trace0 = TrainingTrace {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let base = record(0, teacher, &trace0, dev, test)?;
    let soft = annotate(teacher, &labeled.unlabeled(), AnnotationMode::Soft)?;
    let (model, trace) = train(student, TrainingData::Single(&soft), train_cfg, dev)?;
    let rec = record(1, &model, &trace, dev, test)?;
    let report = RunReport {
        pipeline: "distill_on_labeled".into(),
        base,
        iterations: vec![rec],
        generation: None,
        config: serde_json::to_value(train_cfg)?,
        seeds: Seeds {
            train: train_cfg.seed,
            sampler: 0,
        },
        warnings,
    };
    Ok(PipelineOutput {
        checkpoints: vec![model.clone()],
        model,
        report,
    })
}

/// Self-distillation baseline: [`distill_on_labeled`] with a student of the
/// teacher's own architecture.
pub fn self_distill(
    labeled: &Dataset,
    teacher: &Classifier,
    student: Classifier,
    train_cfg: &TrainConfig,
    dev: &Dataset,
    test: &Dataset,
) -> Result<PipelineOutput> {
    if student.feature_map != teacher.feature_map
        || std::mem::discriminant(&student.model) != std::mem::discriminant(&teacher.model)
        || student.param_count() != teacher.param_count()
    {
        return Err(Error::invalid("self-distillation needs a student with the teacher's architecture"));
    }
    let mut out = distill_on_labeled(labeled, teacher, student, train_cfg, dev, test)?;
    out.report.pipeline = "self_distill".into();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixMatchPipelineConfig {
    pub k: usize,
    pub fixmatch: FixMatchConfig,
    pub weak: Augmentation,
    pub strong: Augmentation,
    /// Training of the labeled-only base model.
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
}

impl Default for FixMatchPipelineConfig {
    fn default() -> Self {
        let standard = AugmentationPair::standard(Vec::new());
        Self {
            k: 10,
            fixmatch: FixMatchConfig::default(),
            weak: standard.weak,
            strong: standard.strong,
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

/// Consistency training on `k |L|` synthetic inputs. The base record is a
/// model trained on `L` alone; the student starts from a fresh `f0`.
pub fn fixmatch_pipeline(
    labeled: &Dataset,
    g: &Generator,
    f0: &ClassifierSpec,
    cfg: &FixMatchPipelineConfig,
    dev: &Dataset,
    test: &Dataset,
) -> Result<PipelineOutput> {
    check_lambda_k(0.5, cfg.k)?;
    cfg.train.validate()?;
    cfg.sampler.validate()?;
    labeled.require_non_empty()?;
    labeled.hard_labels()?;
    let mut warnings = Vec::new();
    let (base_model, trace) = train(f0.build()?, TrainingData::Single(labeled), &cfg.train, dev)?;
    let base = record(0, &base_model, &trace, dev, test)?;
    let (unlabeled, stats) = synthesize(g, cfg.k * labeled.len(), &cfg.sampler, labeled)?;
    warn_shortfall(&stats, &mut warnings);
    let aug = AugmentationPair {
        weak: cfg.weak,
        strong: cfg.strong,
        feature_std: feature_std(labeled)?,
    };
    let (model, trace) =
        fixmatch_train(f0.build()?, labeled, &unlabeled, &cfg.fixmatch, &aug, dev).map_err(|e| e.at_iteration(1))?;
    let mut rec = record(1, &model, &trace, dev, test)?;
    rec.synthetic_count = unlabeled.len();
    rec.rejected_count = stats.rejected;
    rec.unlabeled_hash = Some(dataset_hash(&unlabeled)?);
    let report = RunReport {
        pipeline: "fixmatch".into(),
        base,
        iterations: vec![rec],
        generation: Some(stats),
        config: serde_json::to_value(cfg)?,
        seeds: Seeds {
            train: cfg.fixmatch.seed,
            sampler: cfg.sampler.seed,
        },
        warnings,
    };
    Ok(PipelineOutput {
        checkpoints: vec![base_model, model.clone()],
        model,
        report,
    })
}

#[cfg(test)]
mod tests;
