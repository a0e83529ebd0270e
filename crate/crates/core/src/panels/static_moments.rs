//! Panels whose model is opaque to the engine and which simply deliver the
//! first two moments of their output at each time slot.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{IdssError, Result};
use crate::moments::MomentVector;

use super::{Expansion, Term};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StaticMomentsState {
    /// `moments[t - 1]` holds slot `t`.
    pub moments: Vec<MomentVector>,
}

impl StaticMomentsState {
    pub fn at(&self, t: u32) -> Result<&MomentVector> {
        self.moments
            .get(t.max(1) as usize - 1)
            .ok_or_else(|| IdssError::invalid(format!("no moments delivered for time {t}")))
    }

    pub fn validate(&self, regions: usize, slots: u32) -> Result<()> {
        if self.moments.len() < slots as usize {
            return Err(IdssError::shape(format!(
                "{} time slots delivered, {slots} needed",
                self.moments.len()
            )));
        }
        if let Some(m) = self.moments.iter().find(|m| m.len() != regions) {
            return Err(IdssError::shape(format!(
                "moments over {} regions for a {regions}-region variable",
                m.len()
            )));
        }
        Ok(())
    }

    /// `lin^T a + sum_ij Q_ij (C_ij + a_i a_j)`.
    pub(crate) fn expand(&self, t: u32, term: &Term) -> Result<Expansion> {
        let m = self.at(t)?;
        if m.len() != term.len() {
            return Err(IdssError::shape(format!(
                "term over {} regions, moments over {}",
                term.len(),
                m.len()
            )));
        }
        let constant = term.lin.dot(m.mean()) + term.quad.component_mul(&m.second_raw()).sum();
        Ok(Expansion {
            constant,
            parent: None,
        })
    }
}
