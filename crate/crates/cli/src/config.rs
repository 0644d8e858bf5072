//! Experiment configuration: a TOML file, `--set` overrides, and the fully
//! resolved form that gets echoed into every output directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use gal_core::classifier::{AnnotationMode, ClassifierSpec, Family, FeatureMap, TrainConfig};
use gal_core::corpus::{load_dataset, Dataset, Modality, TaskSchema};
use gal_core::generator::SamplerConfig;
use gal_core::pipelines::{Augmentation, DistillConfig, FixMatchConfig, FixMatchPipelineConfig, SelfTrainConfig};
use gal_core::tasks::GaussianTask;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Every source of randomness in a run is derived from one of these.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub task: TaskConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    TwoBlobs,
    Xor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Built-in Gaussian task, resampled for every seed.
    Gaussian {
        preset: Preset,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
        #[serde(default = "default_train_size")]
        train_size: usize,
        #[serde(default = "default_dev_size")]
        dev_size: usize,
        #[serde(default = "default_test_size")]
        test_size: usize,
    },
    /// JSONL files shared by all seeds.
    Files {
        modality: Modality,
        num_classes: usize,
        #[serde(default = "one")]
        segment_count: usize,
        #[serde(default = "one")]
        feature_dim: usize,
        train: PathBuf,
        dev: PathBuf,
        test: PathBuf,
    },
}

fn default_train_size() -> usize {
    50
}

fn default_dev_size() -> usize {
    200
}

fn default_test_size() -> usize {
    2000
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorFamily {
    Ngram,
    Gmm,
}

/// Hyperparameter grids are searched on the dev split; single-element lists
/// pin a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<GeneratorFamily>,
    pub class_conditional: bool,
    pub orders: Vec<usize>,
    pub smoothing: Vec<f64>,
    pub components: Vec<usize>,
    pub max_iters: usize,
    pub tol: f64,
    pub top_k: usize,
    pub max_len: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let sampler = SamplerConfig::default();
        Self {
            family: None,
            class_conditional: false,
            orders: vec![1, 2, 3],
            smoothing: vec![0.01, 0.1, 1.0],
            components: vec![1, 2, 4],
            max_iters: 200,
            tol: 1e-6,
            top_k: sampler.top_k,
            max_len: sampler.max_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub family: FamilyName,
    pub hidden: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureMap>,
    pub train: TrainBlock,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            family: FamilyName::Linear,
            hidden: 0,
            features: None,
            train: TrainBlock::default(),
        }
    }
}

/// Training settings without a seed; the run seed is filled in per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainBlock {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub early_stop_patience: usize,
}

impl Default for TrainBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            l2: t.l2,
            early_stop_patience: t.early_stop_patience,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SelfTrain,
    Distill,
    SelfDistill,
    Fixmatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub iterations: usize,
    pub k: usize,
    /// Defaults to 0.5 for self-training and 0.2 for distillation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub label_mode: AnnotationMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence_threshold: Option<f64>,
    pub regenerate_each_iteration: bool,
    /// Teacher architecture for distillation; trained on the labeled split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher: Option<TeacherConfig>,
    pub fixmatch: FixMatchBlock,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let st = SelfTrainConfig::default();
        Self {
            mode: Mode::SelfTrain,
            iterations: st.iterations,
            k: st.k,
            lambda: None,
            label_mode: st.label_mode,
            confidence_threshold: None,
            regenerate_each_iteration: false,
            teacher: None,
            fixmatch: FixMatchBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub family: FamilyName,
    #[serde(default)]
    pub hidden: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixMatchBlock {
    pub tau: f64,
    pub mu: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub weak_noise: f64,
    pub strong_noise: f64,
    pub strong_dropout: f64,
}

impl Default for FixMatchBlock {
    fn default() -> Self {
        let f = FixMatchConfig::default();
        let p = FixMatchPipelineConfig::default();
        Self {
            tau: f.tau,
            mu: f.mu,
            batch_size: f.batch_size,
            learning_rate: f.learning_rate,
            epochs: f.epochs,
            early_stop_patience: f.early_stop_patience,
            weak_noise: p.weak.noise,
            strong_noise: p.strong.noise,
            strong_dropout: p.strong.dropout,
        }
    }
}

pub struct TaskData {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
}

/// Reads a config file and applies `key.path=value` overrides. Values are
/// parsed as TOML and fall back to plain strings.
pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: ExperimentConfig = table
        .try_into()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve(base)
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("override key `{key}` is malformed")));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn default_features(schema: &TaskSchema) -> FeatureMap {
    match schema.modality {
        Modality::Continuous => FeatureMap::Identity {
            dim: schema.feature_dim,
        },
        Modality::Text => FeatureMap::HashedNgrams {
            orders: vec![1, 2],
            dim: 1024,
            hash_seed: 0,
        },
    }
}

fn family(name: FamilyName, hidden: usize) -> Family {
    match name {
        FamilyName::Linear => Family::Linear,
        FamilyName::Mlp => Family::Mlp { hidden },
    }
}

impl ExperimentConfig {
    /// Fills every defaulted field, makes paths absolute and checks that
    /// referenced files exist.
    pub fn resolve(mut self, base: &Path) -> Result<Self> {
        let base = std::path::absolute(base).map_err(|e| CliError::config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds must not be empty"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(CliError::config("seeds must be distinct"));
        }
        self.output_dir = absolute(&base, &self.output_dir);
        match &mut self.task {
            TaskConfig::Gaussian { sigma, .. } => {
                let s = *sigma.get_or_insert(1.0);
                if s.is_nan() || s <= 0.0 {
                    return Err(CliError::config("task.sigma must be positive"));
                }
            }
            TaskConfig::Files { train, dev, test, .. } => {
                for p in [train, dev, test] {
                    *p = absolute(&base, p);
                    if !p.is_file() {
                        return Err(CliError::config(format!("missing data file: {}", p.display())));
                    }
                }
            }
        }
        let schema = self.schema()?;
        let g = &mut self.generator;
        g.family.get_or_insert(match schema.modality {
            Modality::Text => GeneratorFamily::Ngram,
            Modality::Continuous => GeneratorFamily::Gmm,
        });
        if g.orders.is_empty() || g.smoothing.is_empty() || g.components.is_empty() {
            return Err(CliError::config("generator grids must not be empty"));
        }
        self.classifier.features.get_or_insert_with(|| default_features(&schema));
        let p = &mut self.pipeline;
        p.lambda.get_or_insert(match p.mode {
            Mode::Distill => DistillConfig::default().lambda,
            _ => SelfTrainConfig::default().lambda,
        });
        if p.mode == Mode::Distill {
            let t = p.teacher.get_or_insert(TeacherConfig {
                family: FamilyName::Mlp,
                hidden: 32,
                features: None,
            });
            if t.features.is_none() {
                t.features = self.classifier.features.clone();
            }
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Internal(format!("cannot serialize config: {e}")))
    }

    pub fn schema(&self) -> Result<TaskSchema> {
        let schema = match &self.task {
            TaskConfig::Gaussian { preset, .. } => self.gaussian(*preset).schema()?,
            TaskConfig::Files {
                modality,
                num_classes,
                segment_count,
                feature_dim,
                ..
            } => {
                let s = TaskSchema {
                    modality: *modality,
                    num_classes: *num_classes,
                    segment_count: *segment_count,
                    feature_dim: *feature_dim,
                };
                s.validate()?;
                s
            }
        };
        Ok(schema)
    }

    fn gaussian(&self, preset: Preset) -> GaussianTask {
        let sigma = match &self.task {
            TaskConfig::Gaussian { sigma, .. } => sigma.unwrap_or(1.0),
            TaskConfig::Files { .. } => 1.0,
        };
        let mut task = match preset {
            Preset::TwoBlobs => GaussianTask::two_blobs(),
            Preset::Xor => GaussianTask::xor(sigma),
        };
        task.sigma = sigma;
        task
    }

    /// Train, dev and test splits for one seed.
    pub fn data(&self, seed: u64) -> Result<TaskData> {
        match &self.task {
            TaskConfig::Gaussian {
                preset,
                train_size,
                dev_size,
                test_size,
                ..
            } => {
                let (train, dev, test) = self.gaussian(*preset).splits(*train_size, *dev_size, *test_size, seed)?;
                Ok(TaskData { train, dev, test })
            }
            TaskConfig::Files { train, dev, test, .. } => {
                let schema = self.schema()?;
                Ok(TaskData {
                    train: load_dataset(train, &schema)?,
                    dev: load_dataset(dev, &schema)?,
                    test: load_dataset(test, &schema)?,
                })
            }
        }
    }

    fn features(&self) -> FeatureMap {
        self.classifier.features.clone().expect("resolved config")
    }

    pub fn classifier_spec(&self, seed: u64) -> Result<ClassifierSpec> {
        Ok(ClassifierSpec {
            family: family(self.classifier.family, self.classifier.hidden),
            feature_map: self.features(),
            num_classes: self.schema()?.num_classes,
            init_seed: seed,
        })
    }

    pub fn teacher_spec(&self, seed: u64) -> Result<ClassifierSpec> {
        let t = self
            .pipeline
            .teacher
            .as_ref()
            .ok_or_else(|| CliError::config("pipeline.teacher is required for distillation"))?;
        Ok(ClassifierSpec {
            family: family(t.family, t.hidden),
            feature_map: t.features.clone().unwrap_or_else(|| self.features()),
            num_classes: self.schema()?.num_classes,
            init_seed: seed,
        })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.classifier.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed,
            l2: t.l2,
            early_stop_patience: t.early_stop_patience,
        }
    }

    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            top_k: self.generator.top_k,
            max_len: self.generator.max_len,
            seed,
            ..SamplerConfig::default()
        }
    }

    fn lambda(&self) -> f64 {
        self.pipeline.lambda.expect("resolved config")
    }

    pub fn self_train_config(&self, seed: u64) -> SelfTrainConfig {
        let p = &self.pipeline;
        SelfTrainConfig {
            iterations: p.iterations,
            k: p.k,
            lambda: self.lambda(),
            label_mode: p.label_mode,
            confidence_threshold: p.confidence_threshold,
            train: self.train_config(seed),
            sampler: self.sampler(seed),
            regenerate_each_iteration: p.regenerate_each_iteration,
        }
    }

    pub fn distill_config(&self, seed: u64) -> DistillConfig {
        DistillConfig {
            k: self.pipeline.k,
            lambda: self.lambda(),
            train: self.train_config(seed),
            sampler: self.sampler(seed),
        }
    }

    pub fn fixmatch_config(&self, seed: u64) -> FixMatchPipelineConfig {
        let f = &self.pipeline.fixmatch;
        FixMatchPipelineConfig {
            k: self.pipeline.k,
            fixmatch: FixMatchConfig {
                tau: f.tau,
                mu: f.mu,
                batch_size: f.batch_size,
                learning_rate: f.learning_rate,
                epochs: f.epochs,
                early_stop_patience: f.early_stop_patience,
                seed,
            },
            weak: Augmentation {
                noise: f.weak_noise,
                dropout: 0.0,
            },
            strong: Augmentation {
                noise: f.strong_noise,
                dropout: f.strong_dropout,
            },
            train: self.train_config(seed),
            sampler: self.sampler(seed),
        }
    }
}
