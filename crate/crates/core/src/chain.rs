//! The four-panel regional chain `Y1 -> Y2 -> Y3 -> Y4` with quadratic
//! disutilities, and its closed-form expected utility.
//!
//! * `Y1` comes from a panel delivering only means and covariances.
//! * `Y2^l = Y1^T theta2^l + v`, a regression on every region of `Y1`
//!   whose coefficients evolve as `theta2(t) = G(t) theta2(t-1) + w`.
//! * `Y3^l = theta23^l Y2^l + v`, a random-walk coefficient.
//! * `Y4^l = theta04^l + theta34^l Y3^l + e`, an emulator.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::admissibility::soundness::SoundnessDeclaration;
use crate::causal::CausalDeclaration;
use crate::ck::{
    CkBundle, Decision, DecisionSpace, Marginal, StructuralConsensus, UtilitySpec, UtilityTerm,
    VariableDecl,
};
use crate::config::{ConfigDocument, OracleSettings};
use crate::error::{IdssError, Result};
use crate::ids::PanelId;
use crate::moments::MomentVector;
use crate::panels::{
    DecisionStates, EmulatorRegion, EmulatorState, Evolution, MdmRegion, MdmState, Panel,
    PanelModel, Regressors, StaticMomentsState,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainParameters {
    pub regions: usize,
    pub horizon: u32,
    /// `weight[t-1][l][i]` is the criterion weight on `Y_{i+1}^l(t)`.
    pub weight: Vec<Vec<[f64; 4]>>,
    /// `gamma[t-1][l][i]`, the quadratic disutility coefficients.
    pub gamma: Vec<Vec<[f64; 4]>>,
    /// Mean and covariance of `Y1(t)`.
    pub a1: Vec<DVector<f64>>,
    pub c1: Vec<DMatrix<f64>>,
    /// Prior moments of `theta2^l(1)`.
    pub a2: Vec<DVector<f64>>,
    pub c2: Vec<DMatrix<f64>>,
    /// `g2[l][t-2]`, `w2[l][t-2]`: evolution into slot `t`.
    pub g2: Vec<Vec<DMatrix<f64>>>,
    pub w2: Vec<Vec<DMatrix<f64>>>,
    /// `b2[l][t-1]`, mean observation variance of `Y2^l(t)`.
    pub b2: Vec<Vec<f64>>,
    pub a23: Vec<f64>,
    pub c23: Vec<f64>,
    /// `r23[l][t-2]`, mean random-walk variance into slot `t`.
    pub r23: Vec<Vec<f64>>,
    pub b3: Vec<Vec<f64>>,
    pub a04: Vec<f64>,
    pub a34: Vec<f64>,
    pub c04: Vec<f64>,
    pub c34: Vec<f64>,
    pub r4: Vec<f64>,
}

fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let m = &l * l.transpose() * (scale / n as f64);
    (&m + m.transpose()) * 0.5
}

impl ChainParameters {
    /// A random valid instance with moderate uncertainty.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, regions: usize, horizon: u32) -> Self {
        let r = regions;
        let tt = horizon as usize;
        let steps = tt.saturating_sub(1);
        let mut raw_w: Vec<Vec<[f64; 4]>> = (0..tt)
            .map(|_| (0..r).map(|_| std::array::from_fn(|_| rng.random_range(0.1..1.0))).collect())
            .collect();
        let total: f64 = raw_w.iter().flatten().flatten().sum();
        for w in raw_w.iter_mut().flatten().flatten() {
            *w /= total;
        }
        let vec = |rng: &mut R, lo: f64, hi: f64| DVector::from_fn(r, |_, _| rng.random_range(lo..hi));
        Self {
            regions: r,
            horizon,
            weight: raw_w,
            gamma: (0..tt)
                .map(|_| (0..r).map(|_| std::array::from_fn(|_| rng.random_range(0.5..2.0))).collect())
                .collect(),
            a1: (0..tt).map(|_| vec(rng, -1.0, 1.0)).collect(),
            c1: (0..tt).map(|_| random_psd(rng, r, 0.3)).collect(),
            a2: (0..r).map(|_| vec(rng, -0.8, 0.8)).collect(),
            c2: (0..r).map(|_| random_psd(rng, r, 0.1)).collect(),
            g2: (0..r)
                .map(|_| {
                    (0..steps)
                        .map(|_| {
                            DMatrix::identity(r, r)
                                + DMatrix::from_fn(r, r, |_, _| rng.random_range(-0.3..0.3))
                        })
                        .collect()
                })
                .collect(),
            w2: (0..r)
                .map(|_| (0..steps).map(|_| random_psd(rng, r, 0.05)).collect())
                .collect(),
            b2: (0..r)
                .map(|_| (0..tt).map(|_| rng.random_range(0.0..0.3)).collect())
                .collect(),
            a23: (0..r)
                .map(|_| rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect(),
            c23: (0..r).map(|_| rng.random_range(0.0..0.1)).collect(),
            r23: (0..r)
                .map(|_| (0..steps).map(|_| rng.random_range(0.0..0.05)).collect())
                .collect(),
            b3: (0..r)
                .map(|_| (0..tt).map(|_| rng.random_range(0.0..0.3)).collect())
                .collect(),
            a04: (0..r).map(|_| rng.random_range(-1.0..1.0)).collect(),
            a34: (0..r).map(|_| rng.random_range(0.5..1.5)).collect(),
            c04: (0..r).map(|_| rng.random_range(0.0..0.2)).collect(),
            c34: (0..r).map(|_| rng.random_range(0.0..0.05)).collect(),
            r4: (0..r).map(|_| rng.random_range(0.0..0.3)).collect(),
        }
    }

    /// The same instance with every variance and covariance set to zero.
    pub fn certain(&self) -> Self {
        let r = self.regions;
        let zero = DMatrix::zeros(r, r);
        let mut out = self.clone();
        out.c1.iter_mut().for_each(|c| *c = zero.clone());
        out.c2.iter_mut().for_each(|c| *c = zero.clone());
        out.w2.iter_mut().flatten().for_each(|c| *c = zero.clone());
        out.b2.iter_mut().flatten().for_each(|b| *b = 0.0);
        out.c23.iter_mut().for_each(|c| *c = 0.0);
        out.r23.iter_mut().flatten().for_each(|c| *c = 0.0);
        out.b3.iter_mut().flatten().for_each(|b| *b = 0.0);
        for v in [&mut out.c04, &mut out.c34, &mut out.r4] {
            v.iter_mut().for_each(|c| *c = 0.0);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let (r, tt) = (self.regions, self.horizon as usize);
        let steps = tt.saturating_sub(1);
        let ok = r > 0
            && tt > 0
            && self.weight.len() == tt
            && self.gamma.len() == tt
            && self.weight.iter().chain(&self.gamma).all(|x| x.len() == r)
            && self.a1.len() == tt
            && self.c1.len() == tt
            && self.a1.iter().all(|a| a.len() == r)
            && self.c1.iter().all(|c| c.shape() == (r, r))
            && self.a2.len() == r
            && self.c2.len() == r
            && self.a2.iter().all(|a| a.len() == r)
            && self.c2.iter().all(|c| c.shape() == (r, r))
            && self.g2.len() == r
            && self.w2.len() == r
            && self.g2.iter().chain(&self.w2).all(|g| g.len() == steps && g.iter().all(|m| m.shape() == (r, r)))
            && [&self.b2, &self.b3].iter().all(|b| b.len() == r && b.iter().all(|x| x.len() == tt))
            && self.r23.len() == r
            && self.r23.iter().all(|x| x.len() == steps)
            && [&self.a23, &self.c23, &self.a04, &self.a34, &self.c04, &self.c34, &self.r4]
                .iter()
                .all(|v| v.len() == r);
        if !ok {
            return Err(IdssError::shape("chain parameters do not match regions and horizon"));
        }
        for c in self.c1.iter().chain(&self.c2).chain(self.w2.iter().flatten()) {
            MomentVector::new(DVector::zeros(r), c.clone())?;
        }
        let nonneg = self
            .b2
            .iter()
            .chain(&self.b3)
            .chain(&self.r23)
            .flatten()
            .chain(&self.c23)
            .chain(&self.c04)
            .chain(&self.c34)
            .chain(&self.r4);
        if nonneg.clone().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(IdssError::invalid("chain variances must be nonnegative"));
        }
        Ok(())
    }

    /// Moments of `theta2^l(t)`.
    fn theta2(&self, l: usize, t: u32) -> (DVector<f64>, DMatrix<f64>) {
        let mut m = self.a2[l].clone();
        let mut s = self.c2[l].clone();
        for k in 0..(t as usize - 1) {
            let g = &self.g2[l][k];
            m = g * m;
            s = g * s * g.transpose() + &self.w2[l][k];
        }
        (m, s)
    }

    /// The CK bundle and panels encoding this chain under one decision.
    pub fn engine(&self) -> Result<(CkBundle, BTreeMap<PanelId, Panel>)> {
        self.validate()?;
        let r = self.regions;
        let names = ["Y1", "Y2", "Y3", "Y4"];
        let owners = ["G1", "G2", "G3", "G4"];
        let structure = StructuralConsensus {
            panels: owners.iter().map(|&p| p.into()).collect(),
            variables: names
                .iter()
                .zip(owners)
                .map(|(&v, o)| VariableDecl {
                    id: v.into(),
                    owner: o.into(),
                    regions: r,
                    time_indexed: true,
                })
                .collect(),
            edges: vec![
                ("Y1".into(), "Y2".into()),
                ("Y2".into(), "Y3".into()),
                ("Y3".into(), "Y4".into()),
            ],
            horizon: self.horizon,
        };
        let mut terms = Vec::new();
        for t in 0..self.horizon as usize {
            for l in 0..r {
                for (i, name) in names.iter().enumerate() {
                    terms.push(UtilityTerm {
                        variable: (*name).into(),
                        time: t as u32 + 1,
                        region: l,
                        weight: self.weight[t][l][i],
                        weight_by_decision: BTreeMap::new(),
                        marginal: Marginal::Quadratic {
                            gamma: self.gamma[t][l][i],
                        },
                        with: None,
                    });
                }
            }
        }
        let ck = CkBundle {
            decisions: DecisionSpace {
                decisions: vec![Decision {
                    id: "d0".into(),
                    label: "baseline".into(),
                    intervention: None,
                }],
                baseline: "d0".into(),
            },
            structure,
            utility: UtilitySpec { terms },
            causal: None::<CausalDeclaration>,
        };

        let g1 = StaticMomentsState {
            moments: self
                .a1
                .iter()
                .zip(&self.c1)
                .map(|(a, c)| MomentVector::new(a.clone(), c.clone()))
                .collect::<Result<_>>()?,
        };
        let g2 = MdmState {
            regions: (0..r)
                .map(|l| MdmRegion {
                    mean: self.a2[l].clone(),
                    cov: self.c2[l].clone(),
                    evolution: self.g2[l]
                        .iter()
                        .zip(&self.w2[l])
                        .map(|(g, w)| Evolution {
                            g: g.clone(),
                            w: w.clone(),
                        })
                        .collect(),
                    obs_variance: self.b2[l].clone(),
                })
                .collect(),
        };
        let g3 = MdmState {
            regions: (0..r)
                .map(|l| MdmRegion {
                    mean: DVector::from_element(1, self.a23[l]),
                    cov: DMatrix::from_element(1, 1, self.c23[l]),
                    evolution: self.r23[l]
                        .iter()
                        .map(|&w| Evolution {
                            g: DMatrix::identity(1, 1),
                            w: DMatrix::from_element(1, 1, w),
                        })
                        .collect(),
                    obs_variance: self.b3[l].clone(),
                })
                .collect(),
        };
        let g4 = EmulatorState {
            regions: (0..r)
                .map(|l| EmulatorRegion {
                    a0: self.a04[l],
                    c0: self.c04[l],
                    a1: self.a34[l],
                    c1: self.c34[l],
                    r: self.r4[l],
                })
                .collect(),
        };
        let models = [
            PanelModel::StaticMoments {
                states: DecisionStates::shared(g1),
            },
            PanelModel::Mdm {
                regressors: Regressors::Full,
                states: DecisionStates::shared(g2),
            },
            PanelModel::Mdm {
                regressors: Regressors::Regionwise,
                states: DecisionStates::shared(g3),
            },
            PanelModel::Emulator {
                states: DecisionStates::shared(g4),
            },
        ];
        let panels = owners
            .iter()
            .zip(names)
            .zip(models)
            .map(|((&o, v), model)| {
                (
                    PanelId::from(o),
                    Panel {
                        id: o.into(),
                        variable: v.into(),
                        model,
                    },
                )
            })
            .collect();
        Ok((ck, panels))
    }
}

impl ChainParameters {
    /// A complete configuration document for the chain, with every panel
    /// declaring all soundness conditions.
    pub fn document(&self) -> Result<ConfigDocument> {
        let (ck, panels) = self.engine()?;
        let ids: Vec<PanelId> = panels.keys().cloned().collect();
        Ok(ConfigDocument {
            decisions: ck.decisions,
            structure: ck.structure,
            utility: ck.utility,
            causal: ck.causal,
            panels: panels.into_values().collect(),
            evidence: Vec::new(),
            soundness: Some(SoundnessDeclaration::complete(&ids)),
            oracle: OracleSettings::default(),
        })
    }
}

/// Closed-form expected utility of the chain:
///
/// `U = -sum_t sum_l [ g1 tau1 + u2 (g2 + u3 (g3 + tau34 g4)) + b3 (g3 + tau34 g4)
///                     + g4 tau4 + 2 g4 a04 a34 a23 a1^T m ]`
///
/// with `g_i = k gamma_i`, `tau1 = a1_l^2 + c1_ll`, `m` and `S` the moments
/// of `theta2^l(t)`, `u2 = E[Y2^2] = m^T (C1 + a1 a1^T) m + b2 + sum_ij S_ij (a1_i a1_j + C1_ij)`,
/// `u3 = a23^2 + c23 + sum_{s<=t} r23(s)`, `tau4 = a04^2 + r4 + c04` and
/// `tau34 = a34^2 + c34`.
pub fn closed_form_chain_score(p: &ChainParameters) -> Result<f64> {
    p.validate()?;
    let mut total = 0.0;
    for t in 1..=p.horizon {
        let ti = t as usize - 1;
        let a1 = &p.a1[ti];
        let c1 = &p.c1[ti];
        let raw1 = c1 + a1 * a1.transpose();
        for l in 0..p.regions {
            let k = p.weight[ti][l];
            let g = p.gamma[ti][l];
            let gb: [f64; 4] = std::array::from_fn(|i| k[i] * g[i]);
            let tau1 = a1[l] * a1[l] + c1[(l, l)];
            let (m, s) = p.theta2(l, t);
            let u2 = (m.transpose() * &raw1 * &m)[(0, 0)] + p.b2[l][ti] + s.component_mul(&raw1).sum();
            let u3 = p.a23[l] * p.a23[l] + p.c23[l] + p.r23[l][..ti].iter().sum::<f64>();
            let tau4 = p.a04[l] * p.a04[l] + p.r4[l] + p.c04[l];
            let tau34 = p.a34[l] * p.a34[l] + p.c34[l];
            let ey2 = a1.dot(&m);
            let inner = gb[2] + tau34 * gb[3];
            total -= gb[0] * tau1
                + u2 * (gb[1] + u3 * inner)
                + p.b3[l][ti] * inner
                + gb[3] * tau4
                + 2.0 * gb[3] * p.a04[l] * p.a34[l] * p.a23[l] * ey2;
        }
    }
    Ok(total)
}

/// The score obtained by plugging point values through the chain of means,
/// ignoring all uncertainty.
pub fn plug_in_chain_score(p: &ChainParameters) -> Result<f64> {
    p.validate()?;
    let mut total = 0.0;
    for t in 1..=p.horizon {
        let ti = t as usize - 1;
        for l in 0..p.regions {
            let (m, _) = p.theta2(l, t);
            let y1 = p.a1[ti][l];
            let y2 = p.a1[ti].dot(&m);
            let y3 = p.a23[l] * y2;
            let y4 = p.a04[l] + p.a34[l] * y3;
            for (i, y) in [y1, y2, y3, y4].into_iter().enumerate() {
                total -= p.weight[ti][l][i] * p.gamma[ti][l][i] * y * y;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn null_utility_scores_zero() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        let mut p = ChainParameters::random(&mut rng, 2, 2);
        p.gamma.iter_mut().flatten().flatten().for_each(|g| *g = 0.0);
        assert_eq!(closed_form_chain_score(&p).unwrap(), 0.0);
    }

    #[test]
    fn certainty_recovers_plug_in() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        for (r, t) in [(1, 1), (2, 2), (3, 3)] {
            let p = ChainParameters::random(&mut rng, r, t).certain();
            let a = closed_form_chain_score(&p).unwrap();
            let b = plug_in_chain_score(&p).unwrap();
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn weights_are_normalised() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let p = ChainParameters::random(&mut rng, 3, 2);
        let (ck, _) = p.engine().unwrap();
        assert!(crate::ck::validate_ck(&ck).is_empty());
    }
}
