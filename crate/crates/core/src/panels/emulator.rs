//! Emulators of a deterministic simulator, one per region:
//! `Y = theta_0 + theta_1 X + e(X)` with `e` a zero-mean Gaussian process.
//!
//! Only the process variance at zero lag enters the moments the engine
//! needs, so the correlation function is not stored.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{IdssError, Result};

use super::{Expansion, Term};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EmulatorRegion {
    /// Intercept mean and variance.
    pub a0: f64,
    pub c0: f64,
    /// Slope mean and variance.
    pub a1: f64,
    pub c1: f64,
    /// Mean of the residual process variance.
    pub r: f64,
}

impl EmulatorRegion {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a0, self.c0, self.a1, self.c1, self.r];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(IdssError::invalid("emulator parameters must be finite"));
        }
        if self.c0 < 0.0 || self.c1 < 0.0 || self.r < 0.0 {
            return Err(IdssError::invalid("emulator variances must be nonnegative"));
        }
        Ok(())
    }

    /// `a0^2 + r + c0`.
    pub fn tau0(&self) -> f64 {
        self.a0 * self.a0 + self.r + self.c0
    }

    /// `a1^2 + c1`.
    pub fn tau1(&self) -> f64 {
        self.a1 * self.a1 + self.c1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EmulatorState {
    pub regions: Vec<EmulatorRegion>,
}

impl EmulatorState {
    pub fn validate(&self, regions: usize, parent_regions: Option<usize>) -> Result<()> {
        if self.regions.len() != regions {
            return Err(IdssError::shape(format!(
                "{} emulators for {regions} regions",
                self.regions.len()
            )));
        }
        match parent_regions {
            Some(p) if p == regions => {}
            Some(p) => {
                return Err(IdssError::shape(format!(
                    "emulator input has {p} regions, output {regions}"
                )))
            }
            None => return Err(IdssError::Structure("an emulator needs an input variable".into())),
        }
        self.regions.iter().try_for_each(EmulatorRegion::validate)
    }

    /// Regions have independent emulators, so
    /// `E[Y_l^2] = tau0 + 2 a0 a1 E[X_l] + tau1 E[X_l^2]` and, for `l != k`,
    /// `E[Y_l Y_k] = E[(a0_l + a1_l X_l)(a0_k + a1_k X_k)]`.
    pub(crate) fn expand(&self, parent_regions: Option<usize>, term: &Term) -> Result<Expansion> {
        let r = self.regions.len();
        if term.len() != r {
            return Err(IdssError::shape(format!("term over {} regions, model has {r}", term.len())));
        }
        self.validate(r, parent_regions)?;
        let g = &self.regions;
        let mut constant = 0.0;
        let mut parent = Term::zeros(r);
        for l in 0..r {
            constant += term.lin[l] * g[l].a0;
            parent.lin[l] += term.lin[l] * g[l].a1;
            for k in 0..r {
                let q = term.quad[(l, k)];
                if q == 0.0 {
                    continue;
                }
                if l == k {
                    constant += q * g[l].tau0();
                    parent.lin[l] += q * 2.0 * g[l].a0 * g[l].a1;
                    parent.quad[(l, l)] += q * g[l].tau1();
                } else {
                    constant += q * g[l].a0 * g[k].a0;
                    parent.lin[k] += q * g[l].a0 * g[k].a1;
                    parent.lin[l] += q * g[l].a1 * g[k].a0;
                    parent.quad[(l, k)] += q * g[l].a1 * g[k].a1;
                }
            }
        }
        Ok(Expansion {
            constant,
            parent: Some(parent),
        })
    }
}
