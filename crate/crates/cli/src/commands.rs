use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gal_core::classifier::{annotate, evaluate, train, AnnotationMode, Classifier, Metrics, TrainingData};
use gal_core::corpus::{load_dataset, save_dataset, Dataset};
use gal_core::diagnostics::{agreement, ngram_overlap, recount, synthesis_stats, Averaging, SynthesisSummary};
use gal_core::generator::{
    fit_class_conditional, generate_dataset, likelihood_grid_csv, perplexity_grid_csv, select_gmm, select_ngram,
    GenerationStats, Generator, GeneratorSpec,
};
use gal_core::pipelines::{distill, fixmatch_pipeline, self_distill, self_train, PipelineOutput, RunReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, GeneratorFamily, Mode};
use crate::error::{CliError, Result};

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    let fail = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(fail)?;
    }
    fs::write(path, contents).map_err(fail)
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// `dir/stem.suffix` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Grid search on dev, then a class-conditional refit with the chosen
/// hyperparameters if requested. Returns the generator and the grid as CSV.
pub fn fit_generator(cfg: &ExperimentConfig, train: &Dataset, dev: &Dataset, seed: u64) -> Result<(Generator, String)> {
    let g = &cfg.generator;
    match g.family.expect("resolved config") {
        GeneratorFamily::Ngram => {
            let (lm, rows) = select_ngram(train, dev, &g.orders, &g.smoothing)?;
            log::info!("selected n = {}, smoothing k = {}", lm.order(), lm.smoothing_k());
            let generator = if g.class_conditional {
                let spec = GeneratorSpec::Ngram {
                    order: lm.order(),
                    smoothing_k: lm.smoothing_k(),
                };
                fit_class_conditional(train, &spec)?
            } else {
                Generator::Ngram(lm)
            };
            Ok((generator, perplexity_grid_csv(&rows)))
        }
        GeneratorFamily::Gmm => {
            let (gmm, rows) = select_gmm(train, dev, &g.components, g.max_iters, g.tol, seed)?;
            let generator = if g.class_conditional {
                let best = rows
                    .iter()
                    .max_by(|a, b| a.dev_log_likelihood.total_cmp(&b.dev_log_likelihood))
                    .expect("non-empty grid");
                log::info!("selected K = {}", best.components);
                let spec = GeneratorSpec::Gmm {
                    components: best.components,
                    max_iters: g.max_iters,
                    tol: g.tol,
                    seed,
                };
                fit_class_conditional(train, &spec)?
            } else {
                Generator::Gmm(gmm)
            };
            Ok((generator, likelihood_grid_csv(&rows)))
        }
    }
}

fn first_seed(cfg: &ExperimentConfig, seed: Option<u64>) -> u64 {
    seed.unwrap_or(cfg.seeds[0])
}

pub fn cmd_fit_generator(
    cfg: &ExperimentConfig,
    corpus: Option<&Path>,
    dev: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let seed = first_seed(cfg, seed);
    let schema = cfg.schema()?;
    let data = cfg.data(seed)?;
    let train = match corpus {
        Some(p) => load_dataset(p, &schema)?,
        None => data.train,
    };
    let dev = match dev {
        Some(p) => load_dataset(p, &schema)?,
        None => data.dev,
    };
    let (g, grid) = fit_generator(cfg, &train, &dev, seed)?;
    write_file(out, &g.to_checkpoint_json()?)?;
    write_file(&sibling(out, "selection.csv"), &grid)?;
    println!("{}", out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateStats {
    pub stats: GenerationStats,
    pub summary: SynthesisSummary,
    /// The same rates rebuilt from the per-draw event log.
    pub recount: SynthesisSummary,
}

/// Default synthetic set size as a multiple of the labeled set.
pub const DEFAULT_COUNT_MULTIPLIER: usize = 40;

pub fn cmd_generate(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    count: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let seed = first_seed(cfg, seed);
    let g = Generator::from_checkpoint_json(&read_file(checkpoint)?)?;
    let schema = cfg.schema()?;
    let count = match count {
        Some(c) => c,
        None => DEFAULT_COUNT_MULTIPLIER * cfg.data(seed)?.train.len(),
    };
    let generation = generate_dataset(&g, count, &cfg.sampler(seed), &schema)?;
    let stats = GenerateStats {
        summary: synthesis_stats(&generation.stats, None)?,
        recount: synthesis_stats(&recount(&generation.events), None)?,
        stats: generation.stats,
    };
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(|source| CliError::Write {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    save_dataset(&generation.dataset, out)?;
    write_file(&sibling(out, "stats.json"), &to_json(&stats)?)?;
    if stats.stats.shortfall() > 0 {
        log::warn!("draw budget exhausted: {} of {count} samples", stats.stats.accepted);
    }
    println!("{}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub base_test_accuracy: f64,
    pub final_test_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub base_test_accuracy: MeanStderr,
    pub final_test_accuracy: MeanStderr,
    pub gain: MeanStderr,
    pub per_seed: Vec<SeedResult>,
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

/// Collects files written for one seed so the manifest can list them.
struct SeedDir {
    root: PathBuf,
    written: Vec<ManifestEntry>,
}

impl SeedDir {
    fn put(&mut self, rel: &str, contents: &str) -> Result<()> {
        write_file(&self.root.join(rel), contents)?;
        self.written.push(ManifestEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
            bytes: contents.len(),
        });
        Ok(())
    }

    fn put_model(&mut self, rel: &str, f: &Classifier) -> Result<()> {
        self.put(rel, &f.to_json()?)
    }
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &mut SeedDir) -> Result<PipelineOutput> {
    let data = cfg.data(seed)?;
    let (l, dev, test) = (&data.train, &data.dev, &data.test);
    let spec = cfg.classifier_spec(seed)?;
    let train_cfg = cfg.train_config(seed);
    let mut fitted = || -> Result<Generator> {
        let (g, grid) = fit_generator(cfg, l, dev, seed)?;
        dir.put("generator.json", &g.to_checkpoint_json()?)?;
        dir.put("selection.csv", &grid)?;
        Ok(g)
    };
    let out = match cfg.pipeline.mode {
        Mode::SelfTrain => {
            let g = fitted()?;
            self_train(l, &g, &spec, &cfg.self_train_config(seed), dev, test)?
        }
        Mode::Distill => {
            let g = fitted()?;
            let (teacher, _) = train(cfg.teacher_spec(seed)?.build()?, TrainingData::Single(l), &train_cfg, dev)?;
            dir.put_model("teacher.json", &teacher)?;
            distill(l, &g, &teacher, &spec, &cfg.distill_config(seed), dev, test)?
        }
        Mode::SelfDistill => {
            let (teacher, _) = train(spec.build()?, TrainingData::Single(l), &train_cfg, dev)?;
            dir.put_model("teacher.json", &teacher)?;
            self_distill(l, &teacher, spec.build()?, &train_cfg, dev, test)?
        }
        Mode::Fixmatch => {
            let g = fitted()?;
            fixmatch_pipeline(l, &g, &spec, &cfg.fixmatch_config(seed), dev, test)?
        }
    };
    Ok(out)
}

fn run_one(cfg: &ExperimentConfig, seed: u64) -> Result<(SeedResult, f64)> {
    let start = Instant::now();
    let mut dir = SeedDir {
        root: cfg.output_dir.join(format!("seed-{seed}")),
        written: Vec::new(),
    };
    let out = run_seed(cfg, seed, &mut dir)?;
    for w in &out.report.warnings {
        log::warn!("seed {seed}: {w}");
    }
    dir.put("report.json", &out.report.to_json()?)?;
    dir.put("report.csv", &out.report.to_csv())?;
    for (i, f) in out.checkpoints.iter().enumerate() {
        dir.put_model(&format!("checkpoints/model-{i}.json"), f)?;
    }
    dir.put_model("model.json", &out.model)?;
    dir.written.sort_by(|a, b| a.path.cmp(&b.path));
    write_file(&dir.root.join("manifest.json"), &to_json(&dir.written)?)?;
    let result = SeedResult {
        seed,
        base_test_accuracy: out.report.base.test_accuracy,
        final_test_accuracy: out.report.final_record().test_accuracy,
    };
    log::info!(
        "seed {seed}: base {:.4} -> final {:.4}",
        result.base_test_accuracy,
        result.final_test_accuracy
    );
    Ok((result, start.elapsed().as_secs_f64()))
}

#[derive(Debug, Serialize)]
struct Timing {
    total_seconds: f64,
    per_seed: Vec<(u64, f64)>,
}

/// Runs every seed in parallel, each into `seed-<s>/`, then writes the
/// aggregate summary. Wall-clock time goes to `timing.json` only.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<Summary> {
    let start = Instant::now();
    write_file(&cfg.output_dir.join("resolved.toml"), &cfg.to_toml()?)?;
    let results: Vec<(SeedResult, f64)> = cfg.seeds.par_iter().map(|&s| run_one(cfg, s)).collect::<Result<_>>()?;
    let per_seed: Vec<SeedResult> = results.iter().map(|(r, _)| r.clone()).collect();
    let base: Vec<f64> = per_seed.iter().map(|r| r.base_test_accuracy).collect();
    let fin: Vec<f64> = per_seed.iter().map(|r| r.final_test_accuracy).collect();
    let gain: Vec<f64> = fin.iter().zip(&base).map(|(f, b)| f - b).collect();
    let summary = Summary {
        mode: cfg.pipeline.mode,
        seeds: cfg.seeds.clone(),
        base_test_accuracy: MeanStderr::of(&base),
        final_test_accuracy: MeanStderr::of(&fin),
        gain: MeanStderr::of(&gain),
        per_seed,
    };
    write_file(&cfg.output_dir.join("summary.json"), &to_json(&summary)?)?;
    let mut csv = String::from("seed,base_test_accuracy,final_test_accuracy\n");
    for r in &summary.per_seed {
        csv.push_str(&format!("{},{},{}\n", r.seed, r.base_test_accuracy, r.final_test_accuracy));
    }
    write_file(&cfg.output_dir.join("summary.csv"), &csv)?;
    let timing = Timing {
        total_seconds: start.elapsed().as_secs_f64(),
        per_seed: results.iter().map(|(r, t)| (r.seed, *t)).collect(),
    };
    write_file(&cfg.output_dir.join("timing.json"), &to_json(&timing)?)?;
    Ok(summary)
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    model: &Path,
    data: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<Metrics> {
    let f = Classifier::from_json(&read_file(model)?)?;
    let test = match data {
        Some(p) => load_dataset(p, &cfg.schema()?)?,
        None => cfg.data(first_seed(cfg, seed))?.test,
    };
    let metrics = evaluate(&f, &test)?;
    emit(out, &to_json(&metrics)?)?;
    Ok(metrics)
}

pub fn cmd_ngram_overlap(cfg: &ExperimentConfig, a: &Path, b: &Path, orders: &[usize], out: Option<&Path>) -> Result<()> {
    let schema = cfg.schema()?;
    let (a, b) = (load_dataset(a, &schema)?, load_dataset(b, &schema)?);
    let orders: BTreeSet<usize> = orders.iter().copied().collect();
    let report = ngram_overlap(&a, &b, &orders)?;
    emit(out, &report.to_csv())
}

pub enum Candidate<'a> {
    Labels(&'a Path),
    Model(&'a Path),
}

pub fn cmd_agreement(
    cfg: &ExperimentConfig,
    reference: &Path,
    candidate: Candidate<'_>,
    averaging: Averaging,
    out: Option<&Path>,
) -> Result<()> {
    let schema = cfg.schema()?;
    let reference = load_dataset(reference, &schema)?;
    let candidate = match candidate {
        Candidate::Labels(p) => load_dataset(p, &schema)?,
        Candidate::Model(p) => {
            let f = Classifier::from_json(&read_file(p)?)?;
            annotate(&f, &reference.unlabeled(), AnnotationMode::Hard)?
        }
    };
    let report = agreement(&reference.hard_labels()?, &candidate.hard_labels()?, averaging)?;
    emit(out, &to_json(&report)?)
}

pub enum SynthesisSource<'a> {
    Report(&'a Path),
    Stats(&'a Path),
}

pub fn cmd_synthesis(source: SynthesisSource<'_>, out: Option<&Path>) -> Result<()> {
    let summary = match source {
        SynthesisSource::Report(p) => RunReport::from_json(&read_file(p)?)?.synthesis_summary()?,
        SynthesisSource::Stats(p) => {
            let s: GenerateStats = serde_json::from_str(&read_file(p)?)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            synthesis_stats(&s.stats, None)?
        }
    };
    emit(out, &to_json(&summary)?)
}
