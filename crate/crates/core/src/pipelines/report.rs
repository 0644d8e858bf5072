use serde::{Deserialize, Serialize};

use crate::diagnostics::{synthesis_stats, SynthesisSummary};
use crate::error::{Error, Result};
use crate::generator::GenerationStats;

/// Metrics of one trained model within a run. Iteration 0 is the reference
/// model: the L-only base model for self-training, the teacher for
/// distillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    pub test_cross_entropy: f64,
    pub synthetic_count: usize,
    pub rejected_count: usize,
    /// Synthetic examples dropped by the confidence filter.
    pub filtered_count: usize,
    /// SHA-256 of the unlabeled synthetic set used in this iteration.
    pub unlabeled_hash: Option<String>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub train: u64,
    pub sampler: u64,
}

/// Everything a run produced except wall-clock time, so that two runs with
/// the same configuration serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pipeline: String,
    pub base: IterationRecord,
    pub iterations: Vec<IterationRecord>,
    pub generation: Option<GenerationStats>,
    pub config: serde_json::Value,
    pub seeds: Seeds,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn final_record(&self) -> &IterationRecord {
        self.iterations.last().unwrap_or(&self.base)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per model, reference model first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "iteration,dev_accuracy,test_accuracy,test_cross_entropy,synthetic_count,rejected_count,filtered_count\n",
        );
        for r in std::iter::once(&self.base).chain(&self.iterations) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iteration,
                r.dev_accuracy,
                r.test_accuracy,
                r.test_cross_entropy,
                r.synthetic_count,
                r.rejected_count,
                r.filtered_count
            ));
        }
        out
    }

    /// Generation rates of the run; the retention figure uses the last
    /// iteration's filter.
    pub fn synthesis_summary(&self) -> Result<SynthesisSummary> {
        let stats = self
            .generation
            .as_ref()
            .ok_or_else(|| Error::invalid("run report has no generation counters"))?;
        let retained = self
            .iterations
            .last()
            .map(|r| r.synthetic_count - r.filtered_count);
        synthesis_stats(stats, retained)
    }
}
