//! Risk functionals: empirical, vicinal, generative, their λ-combination,
//! class-conditional risk and the Bayes-rule classifier built from a
//! class-conditional generator. All Monte Carlo estimates carry a standard
//! error.

use rand::Rng as _;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{cross_entropy, SoftLabel, SoftPredictor};
use crate::corpus::{Dataset, Modality, Payload};
use crate::error::{Error, Result};
use crate::generator::{draw_categorical, ConditionalGenerator, InputSampler};
use crate::rng;

const SHARD: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    /// Sample standard deviation (n - 1) over `sqrt(num_samples)`.
    pub std_error: f64,
    pub num_samples: usize,
}

impl RiskEstimate {
    pub fn from_losses(losses: &[f64]) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::invalid("risk estimate needs at least one sample"));
        }
        let n = losses.len() as f64;
        let mean = losses.iter().sum::<f64>() / n;
        let std_error = if losses.len() > 1 {
            let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            value: mean,
            std_error,
            num_samples: losses.len(),
        })
    }

    /// True when `|value - reference| <= k * std_error`.
    pub fn agrees_with(&self, reference: f64, k: f64) -> bool {
        (self.value - reference).abs() <= k * self.std_error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Vicinity {
    Gaussian { sigma: f64 },
    Mixup { beta_alpha: f64 },
    /// Mixup with a constant interpolation weight.
    MixupFixed { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VicinityConfig {
    pub kind: Vicinity,
    pub mc_samples: usize,
    pub seed: u64,
}

impl VicinityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < 1 {
            return Err(Error::invalid("mc_samples must be at least 1"));
        }
        let ok = match self.kind {
            Vicinity::Gaussian { sigma } => sigma > 0.0 && sigma.is_finite(),
            Vicinity::Mixup { beta_alpha } => beta_alpha > 0.0 && beta_alpha.is_finite(),
            Vicinity::MixupFixed { gamma } => (0.0..=1.0).contains(&gamma),
        };
        if !ok {
            return Err(Error::invalid(format!("invalid vicinity parameters: {:?}", self.kind)));
        }
        Ok(())
    }
}

fn hard_loss<F: SoftPredictor + ?Sized>(f: &F, x: &Payload, y: usize) -> Result<f64> {
    cross_entropy(&SoftLabel::one_hot(y, f.num_classes()), &f.predict(x)?)
}

/// Mean cross-entropy of `f` against the hard labels of `labeled`.
pub fn empirical_risk<F: SoftPredictor + ?Sized>(f: &F, labeled: &Dataset) -> Result<RiskEstimate> {
    labeled.require_non_empty()?;
    let labels = labeled.hard_labels()?;
    let losses = labeled
        .examples()
        .par_iter()
        .zip(labels.par_iter())
        .map(|(e, &y)| hard_loss(f, &e.payload, y))
        .collect::<Result<Vec<_>>>()?;
    RiskEstimate::from_losses(&losses)
}

/// Monte Carlo risk under a Gaussian or mixup vicinity around each labeled
/// point. Continuous features only.
pub fn vicinal_risk<F: SoftPredictor + ?Sized>(f: &F, labeled: &Dataset, cfg: &VicinityConfig) -> Result<RiskEstimate> {
    labeled.schema.require(Modality::Continuous, "vicinal_risk")?;
    labeled.require_non_empty()?;
    cfg.validate()?;
    let labels = labeled.hard_labels()?;
    let c = f.num_classes();
    let xs: Vec<&[f64]> = labeled
        .iter()
        .map(|e| e.payload.features().expect("schema checked"))
        .collect();
    let beta = match cfg.kind {
        Vicinity::Mixup { beta_alpha } => {
            Some(Beta::new(beta_alpha, beta_alpha).map_err(|e| Error::invalid(e.to_string()))?)
        }
        _ => None,
    };
    let losses: Vec<f64> = (0..xs.len())
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.seed, i as u64);
            (0..cfg.mc_samples)
                .map(|_| match cfg.kind {
                    Vicinity::Gaussian { sigma } => {
                        let x: Vec<f64> = xs[i]
                            .iter()
                            .map(|v| {
                                let z: f64 = StandardNormal.sample(&mut r);
                                v + sigma * z
                            })
                            .collect();
                        hard_loss(f, &Payload::Features(x), labels[i])
                    }
                    Vicinity::Mixup { .. } | Vicinity::MixupFixed { .. } => {
                        let j = r.random_range(0..xs.len());
                        let gamma = match (cfg.kind, &beta) {
                            (Vicinity::MixupFixed { gamma }, _) => gamma,
                            (_, Some(b)) => b.sample(&mut r),
                            _ => unreachable!("beta built for mixup"),
                        };
                        let x: Vec<f64> = xs[i]
                            .iter()
                            .zip(xs[j])
                            .map(|(a, b)| gamma * a + (1.0 - gamma) * b)
                            .collect();
                        let mut target = vec![0.0; c];
                        target[labels[i]] += gamma;
                        target[labels[j]] += 1.0 - gamma;
                        let q = SoftLabel::new(target)?;
                        cross_entropy(&q, &f.predict(&Payload::Features(x))?)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    RiskEstimate::from_losses(&losses)
}

/// Draws `n` inputs in fixed-size shards, each with its own stream, and
/// evaluates `loss` on them.
fn sharded<T, L>(n: usize, seed: u64, draw: impl Fn(&mut rng::Rng) -> T + Sync, loss: L) -> Result<Vec<f64>>
where
    L: Fn(T) -> Result<f64> + Sync,
{
    let shards = n.div_ceil(SHARD);
    let per_shard = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::stream(seed, s as u64);
            (0..SHARD.min(n - s * SHARD))
                .map(|_| loss(draw(&mut r)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_shard.into_iter().flatten().collect())
}

/// Monte Carlo mean over `x ~ g` of the soft cross-entropy
/// `H(f_t(x), f_next(x))`.
pub fn generative_risk<F, T, G>(f_next: &F, f_t: &T, g: &G, mc_samples: usize, seed: u64) -> Result<RiskEstimate>
where
    F: SoftPredictor + ?Sized,
    T: SoftPredictor + ?Sized,
    G: InputSampler + ?Sized,
{
    if mc_samples < 1 {
        return Err(Error::invalid("mc_samples must be at least 1"));
    }
    if f_next.num_classes() != f_t.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: f_t.num_classes(),
            actual: f_next.num_classes(),
        });
    }
    let losses = sharded(mc_samples, seed, |r| g.sample_input(r), |x| {
        cross_entropy(&f_t.predict(&x)?, &f_next.predict(&x)?)
    })?;
    RiskEstimate::from_losses(&losses)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GalRisk {
    pub lambda: f64,
    pub combined: RiskEstimate,
    pub empirical: RiskEstimate,
    pub generative: RiskEstimate,
}

fn combine(lambda: f64, a: RiskEstimate, b: RiskEstimate) -> GalRisk {
    GalRisk {
        lambda,
        combined: RiskEstimate {
            value: lambda * a.value + (1.0 - lambda) * b.value,
            std_error: ((lambda * a.std_error).powi(2) + ((1.0 - lambda) * b.std_error).powi(2)).sqrt(),
            num_samples: a.num_samples + b.num_samples,
        },
        empirical: a,
        generative: b,
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// `λ · empirical + (1 - λ) · generative`; standard errors combine as if the
/// two estimates were independent.
pub fn gal_risk<F, T, G>(
    f_next: &F,
    f_t: &T,
    g: &G,
    labeled: &Dataset,
    lambda: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<GalRisk>
where
    F: SoftPredictor + ?Sized,
    T: SoftPredictor + ?Sized,
    G: InputSampler + ?Sized,
{
    check_lambda(lambda)?;
    let a = empirical_risk(f_next, labeled)?;
    let b = generative_risk(f_next, f_t, g, mc_samples, seed)?;
    Ok(combine(lambda, a, b))
}

/// [`gal_risk`] over a grid of λ, sharing one estimate of each component.
#[allow(clippy::too_many_arguments)]
pub fn gal_risk_sweep<F, T, G>(
    f_next: &F,
    f_t: &T,
    g: &G,
    labeled: &Dataset,
    lambdas: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<GalRisk>>
where
    F: SoftPredictor + ?Sized,
    T: SoftPredictor + ?Sized,
    G: InputSampler + ?Sized,
{
    for &l in lambdas {
        check_lambda(l)?;
    }
    let a = empirical_risk(f_next, labeled)?;
    let b = generative_risk(f_next, f_t, g, mc_samples, seed)?;
    Ok(lambdas.iter().map(|&l| combine(l, a, b)).collect())
}

pub fn sweep_csv(rows: &[GalRisk]) -> String {
    let mut out = String::from("lambda,value,std_error,empirical,generative\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.lambda, r.combined.value, r.combined.std_error, r.empirical.value, r.generative.value
        ));
    }
    out
}

fn check_prior(prior: &SoftLabel, num_classes: usize) -> Result<()> {
    if prior.num_classes() != num_classes {
        return Err(Error::DimensionMismatch {
            expected: num_classes,
            actual: prior.num_classes(),
        });
    }
    Ok(())
}

/// Monte Carlo mean over `y ~ prior`, `x ~ g(x | y)` of `H(one_hot(y), f(x))`.
pub fn class_conditional_risk<F, G>(f: &F, g: &G, prior: &SoftLabel, mc_samples: usize, seed: u64) -> Result<RiskEstimate>
where
    F: SoftPredictor + ?Sized,
    G: ConditionalGenerator + ?Sized,
{
    if mc_samples < 1 {
        return Err(Error::invalid("mc_samples must be at least 1"));
    }
    check_prior(prior, g.num_classes())?;
    check_prior(prior, f.num_classes())?;
    let losses = sharded(
        mc_samples,
        seed,
        |r| {
            let y = draw_categorical(prior.as_slice(), r);
            (y, g.sample_given(y, r))
        },
        |(y, x)| hard_loss(f, &x?, y),
    )?;
    RiskEstimate::from_losses(&losses)
}

/// Posterior `P(y | x) ∝ g(x | y) P(y)`, computed in the log domain.
pub fn bayes_optimal_from_generative<G>(g: &G, prior: &SoftLabel, x: &Payload) -> Result<SoftLabel>
where
    G: ConditionalGenerator + ?Sized,
{
    check_prior(prior, g.num_classes())?;
    let mut logs = Vec::with_capacity(prior.num_classes());
    for (y, p) in prior.as_slice().iter().enumerate() {
        logs.push(if *p > 0.0 {
            g.log_density_given(x, y)? + p.ln()
        } else {
            f64::NEG_INFINITY
        });
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::ZeroDensity);
    }
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    SoftLabel::new(weights.into_iter().map(|w| w / z).collect())
}

/// The Bayes-rule classifier as a [`SoftPredictor`].
#[derive(Debug, Clone)]
pub struct BayesOptimal<'a, G: ?Sized> {
    pub generator: &'a G,
    pub prior: SoftLabel,
}

impl<G: ConditionalGenerator + ?Sized> SoftPredictor for BayesOptimal<'_, G> {
    fn num_classes(&self) -> usize {
        self.prior.num_classes()
    }

    fn predict(&self, x: &Payload) -> Result<SoftLabel> {
        bayes_optimal_from_generative(self.generator, &self.prior, x)
    }
}
