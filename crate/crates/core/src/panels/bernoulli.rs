//! Beta-Bernoulli panels over a binary variable with at most one binary
//! parent.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{IdssError, Result};

use super::{Expansion, Term};

fn one() -> f64 {
    1.0
}

/// Belief about `P(Y = 1 | parent = row)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum BetaRow {
    /// A probability known exactly, e.g. set by an intervention.
    Fixed { fixed: f64 },
    /// Beta prior plus the integer counts absorbed so far. The posterior is
    /// `Be(alpha + successes, beta + failures)`; keeping counts apart from
    /// the prior makes any reordering of the evidence bit-identical.
    Beta {
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default = "one")]
        beta: f64,
        #[serde(default)]
        successes: u64,
        #[serde(default)]
        failures: u64,
    },
}

impl BetaRow {
    pub fn uniform() -> Self {
        BetaRow::Beta {
            alpha: 1.0,
            beta: 1.0,
            successes: 0,
            failures: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaRow::Fixed { fixed } if !(0.0..=1.0).contains(&fixed) => {
                Err(IdssError::invalid(format!("fixed probability {fixed} outside [0, 1]")))
            }
            BetaRow::Beta { alpha, beta, .. }
                if !(alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0) =>
            {
                Err(IdssError::invalid(format!(
                    "Beta hyperparameters ({alpha}, {beta}) must be positive and finite"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Posterior hyperparameters, `None` for a fixed row.
    pub fn posterior(&self) -> Option<(f64, f64)> {
        match *self {
            BetaRow::Fixed { .. } => None,
            BetaRow::Beta {
                alpha,
                beta,
                successes,
                failures,
            } => Some((alpha + successes as f64, beta + failures as f64)),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            BetaRow::Fixed { fixed } => fixed,
            _ => {
                let (a, b) = self.posterior().unwrap_or((1.0, 1.0));
                a / (a + b)
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self.posterior() {
            None => 0.0,
            Some((a, b)) => a * b / ((a + b) * (a + b) * (a + b + 1.0)),
        }
    }

    /// Absorb `successes` out of `trials`.
    pub fn update(&mut self, successes: u64, trials: u64) -> Result<()> {
        if successes > trials {
            return Err(IdssError::invalid(format!(
                "{successes} successes out of {trials} trials"
            )));
        }
        match self {
            BetaRow::Fixed { .. } => {
                if trials > 0 {
                    return Err(IdssError::invalid("cannot update a fixed probability"));
                }
            }
            BetaRow::Beta {
                successes: s,
                failures: f,
                ..
            } => {
                *s += successes;
                *f += trials - successes;
            }
        }
        Ok(())
    }
}

/// One row without a parent, two rows (parent = 0, parent = 1) with one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BernoulliState {
    pub rows: Vec<BetaRow>,
}

impl Default for BernoulliState {
    fn default() -> Self {
        Self {
            rows: vec![BetaRow::uniform()],
        }
    }
}

impl BernoulliState {
    pub fn validate(&self, has_parent: bool) -> Result<()> {
        let want = if has_parent { 2 } else { 1 };
        if self.rows.len() != want {
            return Err(IdssError::shape(format!(
                "Bernoulli state has {} rows, expected {want}",
                self.rows.len()
            )));
        }
        self.rows.iter().try_for_each(BetaRow::validate)
    }

    pub fn means(&self) -> Vec<f64> {
        self.rows.iter().map(BetaRow::mean).collect()
    }

    pub fn update(&mut self, row: usize, successes: u64, trials: u64) -> Result<()> {
        let n = self.rows.len();
        self.rows
            .get_mut(row)
            .ok_or_else(|| IdssError::invalid(format!("row {row} of {n}")))?
            .update(successes, trials)
    }

    /// Every row set to a known probability.
    pub fn fixed(&self, p: f64) -> Self {
        Self {
            rows: vec![BetaRow::Fixed { fixed: p }; self.rows.len()],
        }
    }

    /// For a binary `Y`, `E[Y] = E[Y^2]`, and under parameter independence
    /// `E[Y] = mu_0 + (mu_1 - mu_0) E[parent]`.
    pub(crate) fn expand(&self, term: &Term, has_parent: bool) -> Result<Expansion> {
        if term.len() != 1 {
            return Err(IdssError::shape("Bernoulli variables have a single region"));
        }
        self.validate(has_parent)?;
        let c = term.lin[0] + term.quad[(0, 0)];
        let mu = self.means();
        if has_parent {
            let mut parent = Term::zeros(1);
            parent.lin[0] = c * (mu[1] - mu[0]);
            Ok(Expansion {
                constant: c * mu[0],
                parent: Some(parent),
            })
        } else {
            Ok(Expansion {
                constant: c * mu[0],
                parent: None,
            })
        }
    }
}
