//! Multiregression dynamic model panels: one dynamic linear regression per
//! region on contemporaneous parent values.

use nalgebra::{DMatrix, DVector};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{IdssError, Result};
use crate::moments::{clip_psd, serde_matrix, serde_vector, MomentVector};

use super::{Expansion, Term};

/// Which parent values enter each region's regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Regressors {
    /// Every region of the parent.
    Full,
    /// Only the parent's value in the same region.
    Regionwise,
    /// Known regressors, used when the variable has no parent.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Evolution {
    #[serde(with = "serde_matrix")]
    #[schemars(with = "Vec<Vec<f64>>")]
    pub g: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    #[schemars(with = "Vec<Vec<f64>>")]
    pub w: DMatrix<f64>,
}

/// State of one region's regression vector.
///
/// `mean` and `cov` describe the regression vector at the first scored time
/// slot. `evolution[k]` moves it into slot `k + 2`; the last entry repeats
/// and an empty list means a static vector. `obs_variance[t - 1]` is the
/// mean observation variance at slot `t`, again with the last repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MdmRegion {
    #[serde(with = "serde_vector")]
    #[schemars(with = "Vec<f64>")]
    pub mean: DVector<f64>,
    #[serde(with = "serde_matrix")]
    #[schemars(with = "Vec<Vec<f64>>")]
    pub cov: DMatrix<f64>,
    #[serde(default)]
    pub evolution: Vec<Evolution>,
    pub obs_variance: Vec<f64>,
}

impl MdmRegion {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.dim();
        MomentVector::new(self.mean.clone(), self.cov.clone())?;
        for e in &self.evolution {
            if e.g.shape() != (s, s) || e.w.shape() != (s, s) {
                return Err(IdssError::shape(format!(
                    "evolution matrices must be {s}x{s}"
                )));
            }
            MomentVector::new(DVector::zeros(s), e.w.clone())?;
        }
        if self.obs_variance.is_empty() {
            return Err(IdssError::invalid("observation variance missing"));
        }
        if self.obs_variance.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(IdssError::invalid("observation variances must be nonnegative"));
        }
        Ok(())
    }

    pub fn obs_variance_at(&self, t: u32) -> f64 {
        let i = (t.max(1) as usize - 1).min(self.obs_variance.len() - 1);
        self.obs_variance[i]
    }

    fn step(&self, k: usize) -> Option<&Evolution> {
        self.evolution.get(k).or(self.evolution.last())
    }

    /// Mean and covariance of the regression vector at slot `t`.
    pub fn theta_at(&self, t: u32) -> (DVector<f64>, DMatrix<f64>) {
        let mut m = self.mean.clone();
        let mut c = self.cov.clone();
        for k in 0..(t.max(1) as usize - 1) {
            if let Some(e) = self.step(k) {
                m = &e.g * m;
                c = &e.g * c * e.g.transpose() + &e.w;
                c = (&c + c.transpose()) * 0.5;
            }
        }
        (m, c)
    }

    /// One prior-to-posterior update on observing `y` with regressors `f`.
    /// The covariance uses the Joseph form so it stays symmetric PSD.
    pub fn filter_step(&mut self, y: f64, f: &DVector<f64>) -> Result<()> {
        let s = self.dim();
        if f.len() != s {
            return Err(IdssError::shape(format!("{} regressors for dimension {s}", f.len())));
        }
        let (g, w) = match self.step(0) {
            Some(e) => (e.g.clone(), e.w.clone()),
            None => (DMatrix::identity(s, s), DMatrix::zeros(s, s)),
        };
        let v = self.obs_variance_at(1);
        let a = &g * &self.mean;
        let r = &g * &self.cov * g.transpose() + w;
        let rf = &r * f;
        let q = f.dot(&rf) + v;
        if !(q > 0.0) || !q.is_finite() {
            return Err(IdssError::DegenerateForecast(q));
        }
        let e = y - f.dot(&a);
        let k = &rf / q;
        let ikf = DMatrix::identity(s, s) - &k * f.transpose();
        let c = &ikf * &r * ikf.transpose() + &k * k.transpose() * v;
        self.mean = a + &k * e;
        self.cov = clip_psd(c)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MdmState {
    pub regions: Vec<MdmRegion>,
}

impl MdmState {
    fn selection(regressors: &Regressors, l: usize, parent_regions: usize) -> DMatrix<f64> {
        match regressors {
            Regressors::Full => DMatrix::identity(parent_regions, parent_regions),
            Regressors::Regionwise => {
                let mut s = DMatrix::zeros(1, parent_regions);
                s[(0, l)] = 1.0;
                s
            }
            Regressors::Fixed(_) => DMatrix::zeros(0, parent_regions),
        }
    }

    pub fn validate(&self, regressors: &Regressors, parent_regions: Option<usize>, regions: usize) -> Result<()> {
        if self.regions.len() != regions {
            return Err(IdssError::shape(format!(
                "{} region models for {regions} regions",
                self.regions.len()
            )));
        }
        let dim = match (regressors, parent_regions) {
            (Regressors::Fixed(f), None) => f.len(),
            (Regressors::Full, Some(p)) => p,
            (Regressors::Regionwise, Some(p)) => {
                if p != regions {
                    return Err(IdssError::shape(format!(
                        "regionwise regression on a parent with {p} regions into {regions}"
                    )));
                }
                1
            }
            (Regressors::Fixed(_), Some(_)) => {
                return Err(IdssError::Structure("fixed regressors on a variable with a parent".into()))
            }
            (_, None) => {
                return Err(IdssError::Structure(
                    "parent regressors declared for a variable without a parent".into(),
                ))
            }
        };
        for r in &self.regions {
            r.validate()?;
            if r.dim() != dim {
                return Err(IdssError::shape(format!(
                    "regression vector of dimension {} where {dim} regressors enter",
                    r.dim()
                )));
            }
        }
        Ok(())
    }

    /// Substitute `E[Y^l] = m_l^T S_l E[X]` and
    /// `E[Y^l Y^k] = m_l^T S_l E[X X^T] S_k^T m_k + [l = k](tr(S_l E[X X^T] S_l^T C_l) + b_l)`,
    /// where `(m_l, C_l)` are the regression-vector moments at slot `t`.
    pub(crate) fn expand(
        &self,
        regressors: &Regressors,
        t: u32,
        parent_regions: Option<usize>,
        term: &Term,
    ) -> Result<Expansion> {
        let r = self.regions.len();
        if term.len() != r {
            return Err(IdssError::shape(format!("term over {} regions, model has {r}", term.len())));
        }
        self.validate(regressors, parent_regions, r)?;
        let thetas: Vec<_> = self.regions.iter().map(|g| g.theta_at(t)).collect();
        let b: Vec<f64> = self.regions.iter().map(|g| g.obs_variance_at(t)).collect();
        let mut constant: f64 = (0..r).map(|l| term.quad[(l, l)] * b[l]).sum();

        match (regressors, parent_regions) {
            (Regressors::Fixed(f), _) => {
                let f = DVector::from_column_slice(f);
                let mean: Vec<f64> = thetas.iter().map(|(m, _)| f.dot(m)).collect();
                for l in 0..r {
                    constant += term.lin[l] * mean[l];
                    for k in 0..r {
                        let mut e = mean[l] * mean[k];
                        if l == k {
                            e += (f.transpose() * &thetas[l].1 * &f)[(0, 0)];
                        }
                        constant += term.quad[(l, k)] * e;
                    }
                }
                Ok(Expansion {
                    constant,
                    parent: None,
                })
            }
            (_, Some(p)) => {
                let sel: Vec<DMatrix<f64>> = (0..r).map(|l| Self::selection(regressors, l, p)).collect();
                // u_l = S_l^T m_l, the parent-space loading of region l's mean.
                let u: Vec<DVector<f64>> = (0..r).map(|l| sel[l].transpose() * &thetas[l].0).collect();
                let mut parent = Term::zeros(p);
                for l in 0..r {
                    parent.lin += &u[l] * term.lin[l];
                    for k in 0..r {
                        let q = term.quad[(l, k)];
                        if q == 0.0 {
                            continue;
                        }
                        parent.quad += &u[l] * u[k].transpose() * q;
                        if l == k {
                            parent.quad += sel[l].transpose() * &thetas[l].1 * &sel[l] * q;
                        }
                    }
                }
                Ok(Expansion {
                    constant,
                    parent: Some(parent),
                })
            }
            (_, None) => Err(IdssError::Structure("regression without parent".into())),
        }
    }
}
