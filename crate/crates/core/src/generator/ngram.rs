//! Count-based n-gram language model with add-k smoothing and backoff to
//! lower orders for unseen contexts.
//!
//! Prediction support is every vocabulary id except BOS (and the per-class
//! pseudo-tokens of a class-conditional model). Sampling additionally never
//! emits UNK.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Label, Modality, Payload, TaskSchema, Vocab, BOS, EOS, UNK};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "NGramCheckpoint", into = "NGramCheckpoint")]
pub struct NGramLM {
    schema: TaskSchema,
    order: usize,
    smoothing_k: f64,
    vocab: Vocab,
    class_prior: Option<Vec<f64>>,
    /// `tables[m - 1]` maps contexts of length `m - 1` to next-token counts.
    tables: Vec<HashMap<Vec<u32>, ContextCounts>>,
}

/// Output of one sampling episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledText {
    /// Generated ids without BOS/EOS; SEP kept as the segment delimiter.
    pub ids: Vec<u32>,
    /// True when `max_len` was reached before EOS.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perplexity {
    /// `f64::INFINITY` when some token had probability zero.
    pub value: f64,
    pub tokens: usize,
    pub zero_probability_tokens: usize,
}

impl Perplexity {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

impl NGramLM {
    /// Fits an unconditional model; labels are ignored.
    pub fn fit(corpus: &Dataset, order: usize, smoothing_k: f64) -> Result<Self> {
        Self::fit_impl(corpus, order, smoothing_k, false)
    }

    /// Fits `g(x | y)` by inserting a per-class pseudo-token after BOS.
    pub fn fit_class_conditional(corpus: &Dataset, order: usize, smoothing_k: f64) -> Result<Self> {
        Self::fit_impl(corpus, order, smoothing_k, true)
    }

    fn fit_impl(corpus: &Dataset, order: usize, smoothing_k: f64, conditional: bool) -> Result<Self> {
        corpus.schema.require(Modality::Text, "fit_ngram")?;
        corpus.require_non_empty()?;
        if order < 1 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        if !smoothing_k.is_finite() || smoothing_k < 0.0 {
            return Err(Error::invalid("smoothing_k must be finite and non-negative"));
        }
        let vocab = Vocab::build([corpus]);
        let num_classes = corpus.schema.num_classes;
        let class_prior = if conditional {
            let labels = corpus.hard_labels()?;
            let mut counts = vec![0usize; num_classes];
            for y in labels {
                counts[y] += 1;
            }
            if let Some(c) = counts.iter().position(|&n| n == 0) {
                return Err(Error::EmptyClass { class: c });
            }
            Some(counts.iter().map(|&n| n as f64 / corpus.len() as f64).collect())
        } else {
            None
        };
        let mut lm = Self {
            schema: corpus.schema.clone(),
            order,
            smoothing_k,
            vocab,
            class_prior,
            tables: vec![HashMap::new(); order],
        };
        for ex in corpus {
            let Payload::Segments(segs) = &ex.payload else {
                unreachable!("schema checked")
            };
            let class = if conditional { ex.label.hard() } else { None };
            let mut history = lm.prefix(class);
            let mut predicted = lm.vocab.encode(segs);
            predicted.push(EOS);
            for tok in predicted {
                for m in 1..=order {
                    let ctx = history[history.len() - (m - 1)..].to_vec();
                    let cc = lm.tables[m - 1].entry(ctx).or_default();
                    cc.total += 1;
                    *cc.next.entry(tok).or_default() += 1;
                }
                history.push(tok);
            }
        }
        Ok(lm)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn schema(&self) -> &TaskSchema {
        &self.schema
    }

    pub fn is_class_conditional(&self) -> bool {
        self.class_prior.is_some()
    }

    pub fn class_prior(&self) -> Option<&[f64]> {
        self.class_prior.as_deref()
    }

    fn class_token(&self, class: usize) -> u32 {
        (self.vocab.len() + class) as u32
    }

    /// BOS padding (plus class pseudo-token) that precedes every sequence.
    fn prefix(&self, class: Option<usize>) -> Vec<u32> {
        let mut h = vec![BOS; self.order.saturating_sub(1).max(1)];
        if let Some(c) = class {
            h.push(self.class_token(c));
        }
        h
    }

    /// Number of ids a model can predict.
    pub fn support_size(&self) -> usize {
        self.vocab.len() - 1
    }

    /// Ids the sampler may emit: the support without UNK.
    pub fn emittable(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.vocab.len() as u32).filter(|&t| t != BOS && t != UNK)
    }

    /// `P(token | history)` where `history` ends with the most recent token.
    pub fn prob(&self, history: &[u32], token: u32) -> f64 {
        if token == BOS || token as usize >= self.vocab.len() {
            return 0.0;
        }
        let denom_extra = self.smoothing_k * self.support_size() as f64;
        for m in (1..=self.order).rev() {
            if history.len() < m - 1 {
                continue;
            }
            let ctx = &history[history.len() - (m - 1)..];
            if let Some(cc) = self.tables[m - 1].get(ctx) {
                let c = cc.next.get(&token).copied().unwrap_or(0) as f64;
                return (c + self.smoothing_k) / (cc.total as f64 + denom_extra);
            }
        }
        // The empty unigram context always exists after fitting.
        unreachable!("unigram table is never empty")
    }

    /// Next-token distribution over the full support, in id order.
    pub fn next_distribution(&self, history: &[u32]) -> Vec<(u32, f64)> {
        (0..self.vocab.len() as u32)
            .filter(|&t| t != BOS)
            .map(|t| (t, self.prob(history, t)))
            .collect()
    }

    /// Log-probability of a token stream (SEP-joined, no BOS/EOS), EOS
    /// included. `None` if some token has probability zero.
    pub fn log_prob(&self, ids: &[u32], class: Option<usize>) -> Option<f64> {
        let mut history = self.prefix(class);
        let mut total = 0.0;
        for &tok in ids.iter().chain(std::iter::once(&EOS)) {
            let p = self.prob(&history, tok);
            if p <= 0.0 {
                return None;
            }
            total += p.ln();
            history.push(tok);
        }
        Some(total)
    }

    /// `ln g(x | y)` for a class-conditional model, `ln g(x)` otherwise.
    pub fn log_density(&self, segments: &[Vec<String>], class: Option<usize>) -> f64 {
        self.log_prob(&self.vocab.encode(segments), class).unwrap_or(f64::NEG_INFINITY)
    }

    /// Exponentiated mean negative log-probability per predicted token
    /// (SEP and EOS included). Class-conditional models read hard labels.
    pub fn perplexity(&self, heldout: &Dataset) -> Result<Perplexity> {
        heldout.schema.require(Modality::Text, "perplexity")?;
        heldout.require_non_empty()?;
        let mut nll = 0.0;
        let mut tokens = 0usize;
        let mut zeros = 0usize;
        for (i, ex) in heldout.iter().enumerate() {
            let Payload::Segments(segs) = &ex.payload else {
                unreachable!("schema checked")
            };
            let class = if self.is_class_conditional() {
                match ex.label {
                    Label::Hard(c) => Some(c),
                    _ => return Err(Error::Unlabeled { index: i }),
                }
            } else {
                None
            };
            let mut history = self.prefix(class);
            for tok in self.vocab.encode(segs).into_iter().chain(std::iter::once(EOS)) {
                let p = self.prob(&history, tok);
                if p > 0.0 {
                    nll -= p.ln();
                } else {
                    zeros += 1;
                }
                tokens += 1;
                history.push(tok);
            }
        }
        if zeros > 0 {
            log::warn!("{zeros} of {tokens} held-out tokens have zero probability; perplexity is infinite");
        }
        Ok(Perplexity {
            value: if zeros > 0 { f64::INFINITY } else { (nll / tokens as f64).exp() },
            tokens,
            zero_probability_tokens: zeros,
        })
    }

    /// Top-k sampling from BOS until EOS or `max_len` (specials included).
    pub fn sample(&self, top_k: usize, max_len: usize, class: Option<usize>, rng: &mut Rng) -> SampledText {
        let capacity = max_len.saturating_sub(2).max(1);
        let mut history = self.prefix(class);
        let start = history.len();
        loop {
            let next = self.draw_next(&history, top_k, rng);
            if next == EOS {
                return SampledText {
                    ids: history[start..].to_vec(),
                    truncated: false,
                };
            }
            if history.len() - start == capacity {
                return SampledText {
                    ids: history[start..].to_vec(),
                    truncated: true,
                };
            }
            history.push(next);
        }
    }

    fn draw_next(&self, history: &[u32], top_k: usize, rng: &mut Rng) -> u32 {
        let mut cands: Vec<(u32, f64)> = self.emittable().map(|t| (t, self.prob(history, t))).collect();
        // Highest probability first, ascending id among ties.
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cands.truncate(top_k.max(1));
        let total: f64 = cands.iter().map(|c| c.1).sum();
        if total <= 0.0 {
            return EOS;
        }
        let mut u = rng.random::<f64>() * total;
        for &(t, p) in &cands {
            if u < p {
                return t;
            }
            u -= p;
        }
        cands.iter().rev().find(|c| c.1 > 0.0).map(|c| c.0).unwrap_or(EOS)
    }

    pub fn decode(&self, ids: &[u32]) -> Payload {
        Payload::Segments(self.vocab.decode(ids))
    }
}

// Serialized form: contexts sorted so checkpoints are byte-stable.
#[derive(Serialize, Deserialize)]
struct NGramCheckpoint {
    schema: TaskSchema,
    order: usize,
    smoothing_k: f64,
    vocab: Vocab,
    class_prior: Option<Vec<f64>>,
    tables: Vec<Vec<ContextEntry>>,
}

#[derive(Serialize, Deserialize)]
struct ContextEntry {
    context: Vec<u32>,
    next: Vec<(u32, u64)>,
}

impl From<NGramLM> for NGramCheckpoint {
    fn from(lm: NGramLM) -> Self {
        let tables = lm
            .tables
            .into_iter()
            .map(|t| {
                let sorted: BTreeMap<_, _> = t.into_iter().collect();
                sorted
                    .into_iter()
                    .map(|(context, cc)| {
                        let next: BTreeMap<_, _> = cc.next.into_iter().collect();
                        ContextEntry {
                            context,
                            next: next.into_iter().collect(),
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            schema: lm.schema,
            order: lm.order,
            smoothing_k: lm.smoothing_k,
            vocab: lm.vocab,
            class_prior: lm.class_prior,
            tables,
        }
    }
}

impl From<NGramCheckpoint> for NGramLM {
    fn from(c: NGramCheckpoint) -> Self {
        let tables = c
            .tables
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .map(|e| {
                        let next: HashMap<u32, u64> = e.next.into_iter().collect();
                        let total = next.values().sum();
                        (e.context, ContextCounts { total, next })
                    })
                    .collect()
            })
            .collect();
        Self {
            schema: c.schema,
            order: c.order,
            smoothing_k: c.smoothing_k,
            vocab: c.vocab,
            class_prior: c.class_prior,
            tables,
        }
    }
}
