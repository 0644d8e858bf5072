//! Generative models `g(x)` and `g(x | y)` and bulk synthesis of unlabeled
//! data from them.

mod gmm;
mod ngram;
mod tabular;

use std::collections::HashSet;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example, Label, Modality, Payload, Provenance, TaskSchema};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub use gmm::{fit_gmm, GaussianMixture, GmmFit, VARIANCE_FLOOR};
pub use ngram::{NGramLM, Perplexity, SampledText};
pub use tabular::{TabularConditioning, TabularGenerator};

/// Checkpoint format version written by [`Generator::to_checkpoint_json`].
pub const CHECKPOINT_VERSION: u32 = 1;

/// Draws per independent random stream in bulk sampling.
const SHARD: usize = 256;

/// Maximum draws per requested sample in [`generate_dataset`].
pub const DRAW_BUDGET_FACTOR: usize = 20;

pub(crate) fn draw_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let mut u = rng.random::<f64>() * probs.iter().sum::<f64>();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub top_k: usize,
    /// Maximum sequence length, BOS and EOS included.
    pub max_len: usize,
    pub seed: u64,
    pub num_samples: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            top_k: 40,
            max_len: 64,
            seed: 0,
            num_samples: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        if self.max_len < 3 {
            return Err(Error::invalid("max_len must be at least 3 (BOS, one token, EOS)"));
        }
        Ok(())
    }
}

/// Top-k sampling of one token sequence. `class` must be given exactly when
/// the model is class-conditional.
pub fn sample_text(lm: &NGramLM, cfg: &SamplerConfig, class: Option<usize>, rng: &mut Rng) -> Result<SampledText> {
    cfg.validate()?;
    if cfg.top_k > lm.vocab().len() {
        return Err(Error::invalid(format!(
            "top_k {} exceeds vocabulary size {}",
            cfg.top_k,
            lm.vocab().len()
        )));
    }
    match (lm.is_class_conditional(), class) {
        (true, None) => Err(Error::invalid("class-conditional model needs a class")),
        (false, Some(_)) => Err(Error::invalid("unconditional model takes no class")),
        (true, Some(c)) if c >= lm.schema().num_classes => Err(Error::invalid(format!("class {c} out of range"))),
        _ => Ok(lm.sample(cfg.top_k, cfg.max_len, class, rng)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "conditioning", rename_all = "snake_case")]
pub enum GmmConditioning {
    Unconditional { mixture: GaussianMixture },
    ClassConditional { prior: Vec<f64>, classes: Vec<GaussianMixture> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureGenerator {
    pub schema: TaskSchema,
    pub conditioning: GmmConditioning,
}

impl GaussianMixtureGenerator {
    pub fn unconditional(schema: TaskSchema, mixture: GaussianMixture) -> Self {
        Self {
            schema,
            conditioning: GmmConditioning::Unconditional { mixture },
        }
    }

    pub fn class_conditional(schema: TaskSchema, prior: Vec<f64>, classes: Vec<GaussianMixture>) -> Result<Self> {
        if prior.len() != schema.num_classes || classes.len() != schema.num_classes {
            return Err(Error::DimensionMismatch {
                expected: schema.num_classes,
                actual: prior.len().min(classes.len()),
            });
        }
        if (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 || prior.iter().any(|p| *p < 0.0) {
            return Err(Error::invalid("class prior must be a probability vector"));
        }
        Ok(Self {
            schema,
            conditioning: GmmConditioning::ClassConditional { prior, classes },
        })
    }

    pub fn is_class_conditional(&self) -> bool {
        matches!(self.conditioning, GmmConditioning::ClassConditional { .. })
    }

    fn draw(&self, class: Option<usize>, rng: &mut Rng) -> Vec<f64> {
        match (&self.conditioning, class) {
            (GmmConditioning::Unconditional { mixture }, _) => mixture.sample(rng),
            (GmmConditioning::ClassConditional { classes, .. }, Some(c)) => classes[c].sample(rng),
            (GmmConditioning::ClassConditional { prior, classes }, None) => {
                let c = draw_categorical(prior, rng);
                classes[c].sample(rng)
            }
        }
    }

    /// Marginal `ln g(x)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        match &self.conditioning {
            GmmConditioning::Unconditional { mixture } => mixture.log_density(x),
            GmmConditioning::ClassConditional { prior, classes } => {
                let terms: Vec<f64> = prior
                    .iter()
                    .zip(classes)
                    .map(|(p, m)| p.ln() + m.log_density(x))
                    .collect();
                gmm::log_sum_exp(&terms)
            }
        }
    }
}

/// Ancestral sampling of `num` feature vectors. `class` must be given
/// exactly when the generator is class-conditional.
pub fn sample_gmm(g: &GaussianMixtureGenerator, num: usize, seed: u64, class: Option<usize>) -> Result<Dataset> {
    if num < 1 {
        return Err(Error::invalid("num must be at least 1"));
    }
    match (g.is_class_conditional(), class) {
        (true, None) => return Err(Error::invalid("class-conditional generator needs a class")),
        (false, Some(_)) => return Err(Error::invalid("unconditional generator takes no class")),
        (true, Some(c)) if c >= g.schema.num_classes => {
            return Err(Error::invalid(format!("class {c} out of range")));
        }
        _ => {}
    }
    let shards = num.div_ceil(SHARD);
    let examples: Vec<Example> = (0..shards)
        .into_par_iter()
        .flat_map_iter(|s| {
            let mut r = rng::stream(seed, s as u64);
            let count = SHARD.min(num - s * SHARD);
            (0..count)
                .map(|_| Example::new(Payload::Features(g.draw(class, &mut r)), Label::Absent, Provenance::Synthetic))
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(Dataset::new_unchecked("synthetic", g.schema.clone(), examples))
}

/// A fitted generator of any family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Generator {
    Ngram(NGramLM),
    Gmm(GaussianMixtureGenerator),
    Tabular(TabularGenerator),
}

/// One raw draw from a generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub payload: Payload,
    pub class: Option<usize>,
    pub truncated: bool,
}

impl Generator {
    pub fn schema(&self) -> &TaskSchema {
        match self {
            Generator::Ngram(lm) => lm.schema(),
            Generator::Gmm(g) => &g.schema,
            Generator::Tabular(t) => &t.schema,
        }
    }

    pub fn is_class_conditional(&self) -> bool {
        match self {
            Generator::Ngram(lm) => lm.is_class_conditional(),
            Generator::Gmm(g) => g.is_class_conditional(),
            Generator::Tabular(t) => matches!(t.conditioning, TabularConditioning::ClassConditional { .. }),
        }
    }

    pub fn class_prior(&self) -> Option<Vec<f64>> {
        match self {
            Generator::Ngram(lm) => lm.class_prior().map(<[f64]>::to_vec),
            Generator::Gmm(g) => match &g.conditioning {
                GmmConditioning::ClassConditional { prior, .. } => Some(prior.clone()),
                GmmConditioning::Unconditional { .. } => None,
            },
            Generator::Tabular(t) => match &t.conditioning {
                TabularConditioning::ClassConditional { prior, .. } => Some(prior.clone()),
                TabularConditioning::Unconditional { .. } => None,
            },
        }
    }

    /// One draw. Class-conditional generators draw the class from their
    /// prior when `class` is `None`.
    pub fn draw(&self, cfg: &SamplerConfig, class: Option<usize>, rng: &mut Rng) -> Draw {
        let class = match class {
            Some(c) => Some(c),
            None => self.class_prior().map(|p| draw_categorical(&p, rng)),
        };
        match self {
            Generator::Ngram(lm) => {
                let s = lm.sample(cfg.top_k, cfg.max_len, class, rng);
                Draw {
                    payload: lm.decode(&s.ids),
                    class,
                    truncated: s.truncated,
                }
            }
            Generator::Gmm(g) => Draw {
                payload: Payload::Features(g.draw(class, rng)),
                class,
                truncated: false,
            },
            Generator::Tabular(t) => Draw {
                payload: Payload::Features(t.points[t.sample_point(class, rng)].clone()),
                class,
                truncated: false,
            },
        }
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            format_version: u32,
            generator: &'a Generator,
        }
        Ok(serde_json::to_string(&Out {
            format_version: CHECKPOINT_VERSION,
            generator: self,
        })?)
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct In {
            format_version: u32,
            generator: Generator,
        }
        let c: In = serde_json::from_str(s)?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported generator checkpoint version {}",
                c.format_version
            )));
        }
        Ok(c.generator)
    }
}

/// Source of synthetic inputs for Monte Carlo estimators.
pub trait InputSampler: Sync {
    fn sample_input(&self, rng: &mut Rng) -> Payload;
}

impl InputSampler for Generator {
    fn sample_input(&self, rng: &mut Rng) -> Payload {
        self.draw(&SamplerConfig::default(), None, rng).payload
    }
}

/// A generator paired with explicit sampling parameters.
#[derive(Debug, Clone, Copy)]
pub struct ConfiguredSampler<'a> {
    pub generator: &'a Generator,
    pub config: &'a SamplerConfig,
}

impl InputSampler for ConfiguredSampler<'_> {
    fn sample_input(&self, rng: &mut Rng) -> Payload {
        self.generator.draw(self.config, None, rng).payload
    }
}

/// `g(x | y)` with pointwise densities, as needed by the Bayes-rule
/// classifier.
pub trait ConditionalGenerator: Sync {
    fn num_classes(&self) -> usize;
    fn sample_given(&self, class: usize, rng: &mut Rng) -> Result<Payload>;
    fn log_density_given(&self, x: &Payload, class: usize) -> Result<f64>;
}

impl ConditionalGenerator for Generator {
    fn num_classes(&self) -> usize {
        self.schema().num_classes
    }

    fn sample_given(&self, class: usize, rng: &mut Rng) -> Result<Payload> {
        if !self.is_class_conditional() {
            return Err(Error::invalid("generator is not class-conditional"));
        }
        if class >= self.num_classes() {
            return Err(Error::invalid(format!("class {class} out of range")));
        }
        Ok(self.draw(&SamplerConfig::default(), Some(class), rng).payload)
    }

    fn log_density_given(&self, x: &Payload, class: usize) -> Result<f64> {
        if class >= self.num_classes() {
            return Err(Error::invalid(format!("class {class} out of range")));
        }
        match (self, x) {
            (Generator::Ngram(lm), Payload::Segments(s)) if lm.is_class_conditional() => {
                Ok(lm.log_density(s, Some(class)))
            }
            (Generator::Gmm(g), Payload::Features(f)) => match &g.conditioning {
                GmmConditioning::ClassConditional { classes, .. } => Ok(classes[class].log_density(f)),
                GmmConditioning::Unconditional { .. } => Err(Error::invalid("generator is not class-conditional")),
            },
            (Generator::Tabular(t), _) if self.is_class_conditional() => Ok(t.log_density_given(x, class)),
            _ => Err(Error::invalid("payload/generator mismatch or unconditional generator")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawOutcome {
    Accepted,
    /// Wrong segment count or an empty segment.
    Rejected,
    Duplicate,
}

/// Counters for one bulk generation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub requested: usize,
    pub draws: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub duplicates: usize,
    pub truncated: usize,
    pub budget: usize,
}

impl GenerationStats {
    pub fn shortfall(&self) -> usize {
        self.requested - self.accepted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub dataset: Dataset,
    pub stats: GenerationStats,
    /// Outcome of every draw, in draw order.
    pub events: Vec<DrawOutcome>,
}

/// Draws until `count` unique, structurally valid samples exist or the
/// budget of `20 * count` draws runs out. Output is unlabeled even for
/// class-conditional generators.
pub fn generate_dataset(g: &Generator, count: usize, cfg: &SamplerConfig, schema: &TaskSchema) -> Result<Generation> {
    generate_impl(g, count, cfg, schema, false)
}

/// Like [`generate_dataset`] but keeps the conditioning class of a
/// class-conditional generator as a hard label.
pub fn generate_labeled(g: &Generator, count: usize, cfg: &SamplerConfig, schema: &TaskSchema) -> Result<Generation> {
    if !g.is_class_conditional() {
        return Err(Error::invalid("labeled generation needs a class-conditional generator"));
    }
    generate_impl(g, count, cfg, schema, true)
}

fn generate_impl(g: &Generator, count: usize, cfg: &SamplerConfig, schema: &TaskSchema, keep_labels: bool) -> Result<Generation> {
    if count < 1 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    cfg.validate()?;
    let gs = g.schema();
    if gs.modality != schema.modality
        || gs.num_classes != schema.num_classes
        || (schema.modality == Modality::Continuous && gs.feature_dim != schema.feature_dim)
    {
        return Err(Error::Schema("generator schema does not match the task schema".into()));
    }
    let budget = DRAW_BUDGET_FACTOR * count;
    let mut stats = GenerationStats {
        requested: count,
        budget,
        ..Default::default()
    };
    let mut events = Vec::new();
    let mut seen = HashSet::new();
    let mut examples = Vec::with_capacity(count);
    let mut next_shard = 0usize;

    'outer: while examples.len() < count && stats.draws < budget {
        let wanted = ((count - examples.len()) as f64 * 1.25).ceil() as usize;
        let remaining_budget = budget - next_shard * SHARD;
        let shard_count = wanted.min(remaining_budget).div_ceil(SHARD).max(1);
        let batch: Vec<Vec<Draw>> = (next_shard..next_shard + shard_count)
            .into_par_iter()
            .map(|s| {
                let mut r = rng::stream(cfg.seed, s as u64);
                (0..SHARD).map(|_| g.draw(cfg, None, &mut r)).collect()
            })
            .collect();
        next_shard += shard_count;
        for draw in batch.into_iter().flatten() {
            if examples.len() == count || stats.draws == budget {
                break 'outer;
            }
            stats.draws += 1;
            stats.truncated += usize::from(draw.truncated);
            let conforms = match &draw.payload {
                Payload::Segments(s) => s.len() == schema.segment_count && s.iter().all(|seg| !seg.is_empty()),
                Payload::Features(_) => true,
            };
            if !conforms {
                stats.rejected += 1;
                events.push(DrawOutcome::Rejected);
                continue;
            }
            if !seen.insert(draw.payload.key()) {
                stats.duplicates += 1;
                events.push(DrawOutcome::Duplicate);
                continue;
            }
            stats.accepted += 1;
            events.push(DrawOutcome::Accepted);
            let label = match (keep_labels, draw.class) {
                (true, Some(c)) => Label::Hard(c),
                _ => Label::Absent,
            };
            examples.push(Example::new(draw.payload, label, Provenance::Synthetic));
        }
    }
    if examples.is_empty() {
        return Err(Error::GenerationExhausted { draws: stats.draws });
    }
    if stats.shortfall() > 0 {
        log::warn!(
            "draw budget exhausted: {} of {} requested samples generated",
            stats.accepted,
            count
        );
    }
    Ok(Generation {
        dataset: Dataset::new_unchecked("synthetic", schema.clone(), examples),
        stats,
        events,
    })
}

/// Hyperparameters for fitting one generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Ngram { order: usize, smoothing_k: f64 },
    Gmm { components: usize, max_iters: usize, tol: f64, seed: u64 },
}

/// Fits `g(x)` on the inputs of `corpus`; labels are ignored.
pub fn fit_unconditional(corpus: &Dataset, spec: &GeneratorSpec) -> Result<Generator> {
    match spec {
        GeneratorSpec::Ngram { order, smoothing_k } => Ok(Generator::Ngram(NGramLM::fit(corpus, *order, *smoothing_k)?)),
        GeneratorSpec::Gmm {
            components,
            max_iters,
            tol,
            seed,
        } => {
            let fit = fit_gmm(corpus, *components, *max_iters, *tol, *seed)?;
            Ok(Generator::Gmm(GaussianMixtureGenerator::unconditional(corpus.schema.clone(), fit.mixture)))
        }
    }
}

/// Fits `g(x | y)` on a hard-labeled corpus: an n-gram model with class
/// pseudo-tokens for text, one mixture per class plus the empirical prior for
/// continuous data.
pub fn fit_class_conditional(corpus: &Dataset, spec: &GeneratorSpec) -> Result<Generator> {
    let labels = corpus.hard_labels()?;
    let c = corpus.schema.num_classes;
    let mut counts = vec![0usize; c];
    for &y in &labels {
        counts[y] += 1;
    }
    if let Some(empty) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass { class: empty });
    }
    match spec {
        GeneratorSpec::Ngram { order, smoothing_k } => Ok(Generator::Ngram(NGramLM::fit_class_conditional(
            corpus,
            *order,
            *smoothing_k,
        )?)),
        GeneratorSpec::Gmm {
            components,
            max_iters,
            tol,
            seed,
        } => {
            let prior: Vec<f64> = counts.iter().map(|&n| n as f64 / labels.len() as f64).collect();
            let mut classes = Vec::with_capacity(c);
            for class in 0..c {
                let members = corpus
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &y)| y == class)
                    .map(|(e, _)| e.clone())
                    .collect();
                let subset = corpus.with_examples(format!("{}/class{class}", corpus.name), members);
                let k = (*components).min(subset.len());
                classes.push(fit_gmm(&subset, k, *max_iters, *tol, rng::derive(*seed, class as u64))?.mixture);
            }
            Ok(Generator::Gmm(GaussianMixtureGenerator::class_conditional(
                corpus.schema.clone(),
                prior,
                classes,
            )?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityRow {
    pub n: usize,
    pub smoothing_k: f64,
    pub dev_perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRow {
    pub components: usize,
    /// Mean per-example dev log-likelihood.
    pub dev_log_likelihood: f64,
}

/// Fits every `(n, k)` on the grid and keeps the lowest dev perplexity
/// (first grid point on ties).
pub fn select_ngram(train: &Dataset, dev: &Dataset, orders: &[usize], smoothings: &[f64]) -> Result<(NGramLM, Vec<PerplexityRow>)> {
    let mut rows = Vec::new();
    let mut best: Option<(f64, NGramLM)> = None;
    for &n in orders {
        for &k in smoothings {
            let lm = NGramLM::fit(train, n, k)?;
            let ppl = lm.perplexity(dev)?.value;
            rows.push(PerplexityRow {
                n,
                smoothing_k: k,
                dev_perplexity: ppl,
            });
            if best.as_ref().is_none_or(|(b, _)| ppl < *b) {
                best = Some((ppl, lm));
            }
        }
    }
    let (_, lm) = best.ok_or_else(|| Error::invalid("empty n-gram grid"))?;
    Ok((lm, rows))
}

/// Fits a mixture for each component count and keeps the best dev
/// log-likelihood.
pub fn select_gmm(
    train: &Dataset,
    dev: &Dataset,
    components: &[usize],
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<(GaussianMixtureGenerator, Vec<LikelihoodRow>)> {
    dev.schema.require(Modality::Continuous, "select_gmm")?;
    dev.require_non_empty()?;
    let mut rows = Vec::new();
    let mut best: Option<(f64, GaussianMixture)> = None;
    for &k in components {
        let fit = fit_gmm(train, k, max_iters, tol, seed)?;
        let ll = dev
            .iter()
            .map(|e| fit.mixture.log_density(e.payload.features().expect("schema checked")))
            .sum::<f64>()
            / dev.len() as f64;
        rows.push(LikelihoodRow {
            components: k,
            dev_log_likelihood: ll,
        });
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, fit.mixture));
        }
    }
    let (_, m) = best.ok_or_else(|| Error::invalid("empty component grid"))?;
    Ok((GaussianMixtureGenerator::unconditional(train.schema.clone(), m), rows))
}

pub fn perplexity_grid_csv(rows: &[PerplexityRow]) -> String {
    let mut out = String::from("n,smoothing_k,dev_perplexity\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.n, r.smoothing_k, r.dev_perplexity));
    }
    out
}

pub fn likelihood_grid_csv(rows: &[LikelihoodRow]) -> String {
    let mut out = String::from("components,dev_log_likelihood\n");
    for r in rows {
        out.push_str(&format!("{},{}\n", r.components, r.dev_log_likelihood));
    }
    out
}
