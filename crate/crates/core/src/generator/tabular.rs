//! Generators over a finite set of feature vectors. Their distributions can
//! be enumerated exactly, which makes them the reference family for checking
//! Monte Carlo estimators.

use serde::{Deserialize, Serialize};

use crate::corpus::{Payload, TaskSchema};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "conditioning", rename_all = "snake_case")]
pub enum TabularConditioning {
    Unconditional { probs: Vec<f64> },
    /// `table[y][i]` is `g(points[i] | y)`.
    ClassConditional { prior: Vec<f64>, table: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularGenerator {
    pub schema: TaskSchema,
    pub points: Vec<Vec<f64>>,
    pub conditioning: TabularConditioning,
}

fn check_simplex(p: &[f64], what: &str, len: usize) -> Result<()> {
    if p.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            actual: p.len(),
        });
    }
    if p.iter().any(|v| v.is_nan() || *v < 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("{what} must be a probability vector")));
    }
    Ok(())
}

impl TabularGenerator {
    pub fn unconditional(schema: TaskSchema, points: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        check_simplex(&probs, "point probabilities", points.len())?;
        Self::checked(schema, points, TabularConditioning::Unconditional { probs })
    }

    pub fn class_conditional(
        schema: TaskSchema,
        points: Vec<Vec<f64>>,
        prior: Vec<f64>,
        table: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_simplex(&prior, "class prior", schema.num_classes)?;
        if table.len() != schema.num_classes {
            return Err(Error::DimensionMismatch {
                expected: schema.num_classes,
                actual: table.len(),
            });
        }
        for row in &table {
            check_simplex(row, "conditional table row", points.len())?;
        }
        Self::checked(schema, points, TabularConditioning::ClassConditional { prior, table })
    }

    fn checked(schema: TaskSchema, points: Vec<Vec<f64>>, conditioning: TabularConditioning) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("tabular generator needs at least one point"));
        }
        if let Some(p) = points.iter().find(|p| p.len() != schema.feature_dim) {
            return Err(Error::DimensionMismatch {
                expected: schema.feature_dim,
                actual: p.len(),
            });
        }
        Ok(Self {
            schema,
            points,
            conditioning,
        })
    }

    /// Marginal probability of each point.
    pub fn marginal(&self) -> Vec<f64> {
        match &self.conditioning {
            TabularConditioning::Unconditional { probs } => probs.clone(),
            TabularConditioning::ClassConditional { prior, table } => (0..self.points.len())
                .map(|i| prior.iter().zip(table).map(|(py, row)| py * row[i]).sum())
                .collect(),
        }
    }

    pub fn point_index(&self, x: &Payload) -> Option<usize> {
        let f = x.features()?;
        self.points.iter().position(|p| p.as_slice() == f)
    }

    pub fn sample_point(&self, class: Option<usize>, rng: &mut Rng) -> usize {
        match (&self.conditioning, class) {
            (TabularConditioning::ClassConditional { table, .. }, Some(c)) => super::draw_categorical(&table[c], rng),
            _ => super::draw_categorical(&self.marginal(), rng),
        }
    }

    /// `ln g(x | y)`; minus infinity off the support.
    pub fn log_density_given(&self, x: &Payload, class: usize) -> f64 {
        match (&self.conditioning, self.point_index(x)) {
            (TabularConditioning::ClassConditional { table, .. }, Some(i)) => table[class][i].ln(),
            _ => f64::NEG_INFINITY,
        }
    }
}
