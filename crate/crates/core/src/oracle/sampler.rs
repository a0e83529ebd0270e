//! Forward Monte Carlo from the panels' generative models.
//!
//! Each draw samples every panel's parameters once, then every variable at
//! every time slot in forward order. Draw `s` uses its own counter-seeded
//! generator, and results are accumulated per fixed-size
//! chunk and merged in chunk order, so the estimate is bit-identical under
//! sequential and parallel execution.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::ck::{CkBundle, Marginal, UtilitySpec};
use crate::error::{IdssError, Result};
use crate::ids::{DecisionId, PanelId};
use crate::panels::{BetaRow, Panel, PanelView, Regressors, TreeEdge};
use crate::par::{map_indexed, Strategy};
use crate::propagation::{resolve, Resolved};

use super::rng::stream_rng;

pub const MIN_SAMPLES: usize = 1000;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub mean: f64,
    /// Standard error of `mean`.
    pub se: f64,
    pub n: usize,
    pub seed: u64,
}

impl OracleEstimate {
    /// Whether `x` lies within `k` standard errors of the estimate.
    pub fn covers(&self, x: f64, k: f64) -> bool {
        (x - self.mean).abs() <= k * self.se
    }

    /// Distance from `x` in standard errors.
    pub fn z_score(&self, x: f64) -> f64 {
        if self.se == 0.0 {
            if x == self.mean {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (x - self.mean) / self.se
        }
    }
}

/// Running count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Welford) -> Welford {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        Welford {
            n,
            mean: self.mean + d * w,
            m2: self.m2 + other.m2 + d * d * self.n as f64 * w,
        }
    }
}

/// `mean + root * z` with `root root^T = cov`; `root` is lower triangular
/// whenever the covariance admits a Cholesky factor.
#[derive(Debug, Clone)]
struct Gaussian {
    dim: usize,
    mean: Vec<f64>,
    /// Row-major.
    root: Vec<f64>,
    triangular: bool,
}

impl Gaussian {
    fn new(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Self {
        let d = mean.len();
        let mut root = vec![0.0; d * d];
        let triangular = match cov.clone().cholesky() {
            Some(ch) => {
                let l = ch.l();
                for i in 0..d {
                    for j in 0..=i {
                        root[i * d + j] = l[(i, j)];
                    }
                }
                true
            }
            None => {
                let eig = cov.clone().symmetric_eigen();
                for i in 0..d {
                    for j in 0..d {
                        root[i * d + j] = eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt();
                    }
                }
                false
            }
        };
        Self {
            dim: d,
            mean: mean.iter().copied().collect(),
            root,
            triangular,
        }
    }

    fn draw(&self, rng: &mut Xoshiro256PlusPlus, z: &mut [f64], out: &mut [f64]) {
        let d = self.dim;
        if d == 1 {
            let e: f64 = rng.sample(StandardNormal);
            out[0] = self.mean[0] + self.root[0] * e;
            return;
        }
        let z = &mut z[..d];
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for (i, ((o, m), row)) in out[..d].iter_mut().zip(&self.mean).zip(self.root.chunks_exact(d)).enumerate() {
            let k = if self.triangular { i + 1 } else { d };
            *o = m + row[..k].iter().zip(&z[..k]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone)]
struct Step {
    g: Vec<f64>,
    w: Gaussian,
}

#[derive(Debug, Clone)]
struct MdmPlan {
    theta: Gaussian,
    steps: Vec<Step>,
    /// Observation standard deviation per slot.
    obs_sd: Vec<f64>,
}

#[derive(Debug, Clone)]
enum RegressorPlan {
    Full,
    Regionwise,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone)]
enum RowPlan {
    Fixed(f64),
    Beta(Beta<f64>),
}

#[derive(Debug, Clone)]
enum EdgePlan {
    Vertex(usize),
    Leaf(f64),
}

#[derive(Debug, Clone)]
struct VertexPlan {
    stage: usize,
    edges: Vec<EdgePlan>,
}

#[derive(Debug, Clone)]
enum Plan {
    Static(Vec<Gaussian>),
    Mdm {
        regressors: RegressorPlan,
        regions: Vec<MdmPlan>,
    },
    /// `(a0, sd0, a1, sd1, residual sd)` per region.
    Emulator(Vec<[f64; 5]>),
    Bernoulli(Vec<RowPlan>),
    Tree {
        stages: Vec<Vec<Gamma<f64>>>,
        /// Start of each stage's probabilities in the parameter buffer.
        offsets: Vec<usize>,
        vertices: Vec<VertexPlan>,
    },
}

impl Plan {
    fn compile(view: &PanelView, slots: u32) -> Result<Self> {
        Ok(match view {
            PanelView::StaticMoments(s) => Plan::Static(
                (1..=slots)
                    .map(|t| s.at(t).map(|m| Gaussian::new(m.mean(), m.cov())))
                    .collect::<Result<_>>()?,
            ),
            PanelView::Mdm(reg, s) => Plan::Mdm {
                regressors: match reg {
                    Regressors::Full => RegressorPlan::Full,
                    Regressors::Regionwise => RegressorPlan::Regionwise,
                    Regressors::Fixed(f) => RegressorPlan::Fixed(f.clone()),
                },
                regions: s
                    .regions
                    .iter()
                    .map(|r| MdmPlan {
                        theta: Gaussian::new(&r.mean, &r.cov),
                        steps: r
                            .evolution
                            .iter()
                            .map(|e| Step {
                                g: e.g.transpose().as_slice().to_vec(),
                                w: Gaussian::new(&DVector::zeros(r.dim()), &e.w),
                            })
                            .collect(),
                        obs_sd: (1..=slots).map(|t| r.obs_variance_at(t).sqrt()).collect(),
                    })
                    .collect(),
            },
            PanelView::Emulator(s) => Plan::Emulator(
                s.regions
                    .iter()
                    .map(|e| [e.a0, e.c0.sqrt(), e.a1, e.c1.sqrt(), e.r.sqrt()])
                    .collect(),
            ),
            PanelView::Bernoulli(s) => Plan::Bernoulli(
                s.rows
                    .iter()
                    .map(|row| match *row {
                        BetaRow::Fixed { fixed } => Ok(RowPlan::Fixed(fixed)),
                        _ => {
                            let (a, b) = row.posterior().expect("not fixed");
                            Beta::new(a, b)
                                .map(RowPlan::Beta)
                                .map_err(|e| IdssError::invalid(e.to_string()))
                        }
                    })
                    .collect::<Result<_>>()?,
            ),
            PanelView::StagedTree(tree, state) => {
                let index: BTreeMap<&str, usize> = tree
                    .vertices
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.id.as_str(), i))
                    .collect();
                let mut stage_names: Vec<&str> = Vec::new();
                let mut stages = Vec::new();
                let mut vertices = Vec::new();
                for (i, v) in tree.vertices.iter().enumerate() {
                    let stage = match stage_names.iter().position(|s| *s == v.stage()) {
                        Some(k) => k,
                        None => {
                            let alpha = tree.stage_dirichlet(state, i).posterior();
                            stages.push(
                                alpha
                                    .iter()
                                    .map(|&a| Gamma::new(a, 1.0).map_err(|e| IdssError::invalid(e.to_string())))
                                    .collect::<Result<Vec<_>>>()?,
                            );
                            stage_names.push(v.stage());
                            stages.len() - 1
                        }
                    };
                    let edges = v
                        .edges
                        .iter()
                        .map(|e| match e {
                            TreeEdge::Leaf { value } => Ok(EdgePlan::Leaf(*value)),
                            TreeEdge::Vertex { to } => index
                                .get(to.as_str())
                                .map(|&j| EdgePlan::Vertex(j))
                                .ok_or_else(|| IdssError::Structure(format!("unknown vertex `{to}`"))),
                        })
                        .collect::<Result<_>>()?;
                    vertices.push(VertexPlan { stage, edges });
                }
                let offsets = stages
                    .iter()
                    .scan(0, |acc, s: &Vec<Gamma<f64>>| {
                        let o = *acc;
                        *acc += s.len();
                        Some(o)
                    })
                    .collect();
                Plan::Tree {
                    stages,
                    offsets,
                    vertices,
                }
            }
        })
    }

    /// Parameter storage the plan needs per draw.
    fn param_len(&self) -> usize {
        match self {
            Plan::Static(_) => 0,
            Plan::Mdm { regions, .. } => regions.iter().map(|r| r.theta.dim).sum(),
            Plan::Emulator(r) => 2 * r.len(),
            Plan::Bernoulli(rows) => rows.len(),
            Plan::Tree { stages, .. } => stages.iter().map(Vec::len).sum(),
        }
    }

    fn scratch_len(&self) -> usize {
        match self {
            Plan::Static(g) => g.iter().map(|g| g.dim).max().unwrap_or(0),
            Plan::Mdm { regions, .. } => regions.iter().map(|r| r.theta.dim).max().unwrap_or(0),
            _ => 0,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn draw(
        &self,
        slot: u32,
        parent: Option<&[f64]>,
        params: &mut [f64],
        rng: &mut Xoshiro256PlusPlus,
        z: &mut [f64],
        tmp: &mut [f64],
        out: &mut [f64],
    ) {
        let first = slot == 1;
        let t = slot as usize - 1;
        match self {
            Plan::Static(slots) => slots[t.min(slots.len() - 1)].draw(rng, z, out),
            Plan::Mdm { regressors, regions } => {
                let mut off = 0;
                for (l, r) in regions.iter().enumerate() {
                    let d = r.theta.dim;
                    let theta = &mut params[off..off + d];
                    off += d;
                    if first {
                        r.theta.draw(rng, z, theta);
                    } else if let Some(step) = r.steps.get(t - 1).or(r.steps.last()) {
                        for i in 0..d {
                            tmp[i] = step.g[i * d..(i + 1) * d]
                                .iter()
                                .zip(theta.iter())
                                .map(|(a, b)| a * b)
                                .sum();
                        }
                        step.w.draw(rng, z, theta);
                        for i in 0..d {
                            theta[i] += tmp[i];
                        }
                    }
                    let x: &[f64] = match regressors {
                        RegressorPlan::Full => parent.unwrap_or(&[]),
                        RegressorPlan::Regionwise => parent.map_or(&[][..], |p| &p[l..l + 1]),
                        RegressorPlan::Fixed(f) => f,
                    };
                    let mean: f64 = x.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
                    let e: f64 = rng.sample(StandardNormal);
                    out[l] = mean + r.obs_sd[t.min(r.obs_sd.len() - 1)] * e;
                }
            }
            Plan::Emulator(regions) => {
                let x = parent.unwrap_or(&[]);
                for (l, &[a0, sd0, a1, sd1, sdr]) in regions.iter().enumerate() {
                    if first {
                        let z0: f64 = rng.sample(StandardNormal);
                        let z1: f64 = rng.sample(StandardNormal);
                        params[2 * l] = a0 + sd0 * z0;
                        params[2 * l + 1] = a1 + sd1 * z1;
                    }
                    let e: f64 = rng.sample(StandardNormal);
                    out[l] = params[2 * l] + params[2 * l + 1] * x[l] + sdr * e;
                }
            }
            Plan::Bernoulli(rows) => {
                if first {
                    for (p, row) in params.iter_mut().zip(rows) {
                        *p = match row {
                            RowPlan::Fixed(f) => *f,
                            RowPlan::Beta(b) => b.sample(rng),
                        };
                    }
                }
                let row = parent.map_or(0, |p| usize::from(p[0] > 0.5));
                let u: f64 = rng.random();
                out[0] = if u < params[row] { 1.0 } else { 0.0 };
            }
            Plan::Tree {
                stages,
                offsets,
                vertices,
            } => {
                if first {
                    let mut off = 0;
                    for gammas in stages {
                        let probs = &mut params[off..off + gammas.len()];
                        off += gammas.len();
                        for (p, g) in probs.iter_mut().zip(gammas) {
                            *p = g.sample(rng);
                        }
                        let total: f64 = probs.iter().sum();
                        if total > 0.0 {
                            probs.iter_mut().for_each(|p| *p /= total);
                        } else {
                            let k = rng.random_range(0..probs.len());
                            probs.iter_mut().enumerate().for_each(|(i, p)| *p = f64::from(u8::from(i == k)));
                        }
                    }
                }
                let mut v = 0;
                out[0] = loop {
                    let vx = &vertices[v];
                    let probs = &params[offsets[vx.stage]..offsets[vx.stage] + vx.edges.len()];
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut k = vx.edges.len() - 1;
                    for (i, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            k = i;
                            break;
                        }
                    }
                    match vx.edges[k] {
                        EdgePlan::Vertex(j) => v = j,
                        EdgePlan::Leaf(value) => break value,
                    }
                };
            }
        }
    }
}

/// The generative model of every panel under one decision, compiled for
/// repeated forward sampling.
#[derive(Debug, Clone)]
pub struct GenerativeSpec {
    resolved: Resolved,
    plans: Vec<Plan>,
    offsets: Vec<usize>,
    param_offsets: Vec<usize>,
    parent_node: Vec<Option<usize>>,
    scratch: usize,
    values: usize,
}

impl GenerativeSpec {
    pub fn new(ck: &CkBundle, panels: &BTreeMap<PanelId, Panel>, decision: &str) -> Result<Self> {
        let res = resolve(ck, panels, decision)?;
        let plans = res
            .views
            .iter()
            .zip(&ck.structure.variables)
            .map(|(view, decl)| Plan::compile(view, if decl.time_indexed { ck.structure.horizon } else { 1 }))
            .collect::<Result<Vec<_>>>()?;
        let mut offsets = Vec::with_capacity(res.nodes.len());
        let mut values = 0;
        for n in &res.nodes {
            offsets.push(values);
            values += res.regions[n.var];
        }
        let mut param_offsets = vec![0];
        for p in &plans {
            param_offsets.push(param_offsets.last().expect("non-empty") + p.param_len());
        }
        let parent_node = res.nodes.iter().map(|&n| res.parent_node(n)).collect();
        let scratch = plans.iter().map(Plan::scratch_len).max().unwrap_or(0);
        Ok(Self {
            resolved: res,
            plans,
            offsets,
            param_offsets,
            parent_node,
            scratch,
            values,
        })
    }

    pub fn decision(&self) -> &DecisionId {
        &self.resolved.decision
    }

    fn sample(&self, seed: u64, s: u64, terms: &[UtilityPlan], sc: &mut Scratch) -> Result<f64> {
        let Scratch {
            values,
            params,
            z,
            tmp,
        } = sc;
        let mut rng = stream_rng(seed, 0, s);
        for (i, node) in self.resolved.nodes.iter().enumerate() {
            let v = node.var;
            let r = self.resolved.regions[v];
            let (before, rest) = values.split_at_mut(self.offsets[i]);
            let out = &mut rest[..r];
            let parent = self.parent_node[i].map(|p| {
                let pr = self.resolved.regions[self.resolved.nodes[p].var];
                &before[self.offsets[p]..self.offsets[p] + pr]
            });
            let params = &mut params[self.param_offsets[v]..self.param_offsets[v + 1]];
            self.plans[v].draw(node.slot, parent, params, &mut rng, z, tmp, out);
            if out.iter().any(|y| !y.is_finite()) {
                return Err(IdssError::NonFiniteDraw(format!(
                    "`{}` at slot {} in draw {s}",
                    self.resolved.variables[v], node.slot
                )));
            }
        }
        Ok(terms
            .iter()
            .map(|u| {
                let y = values[u.value] * u.factor.map_or(1.0, |j| values[j]);
                u.weight * u.marginal.evaluate(y)
            })
            .sum())
    }
}

/// A utility attribute located in the flat value buffer.
struct UtilityPlan {
    value: usize,
    factor: Option<usize>,
    weight: f64,
    marginal: Marginal,
}

struct Scratch {
    values: Vec<f64>,
    params: Vec<f64>,
    z: Vec<f64>,
    tmp: Vec<f64>,
}

pub fn mc_expected_utility(spec: &GenerativeSpec, utility: &UtilitySpec, n: usize, seed: u64) -> Result<OracleEstimate> {
    mc_expected_utility_with(spec, utility, n, seed, Strategy::default())
}

/// Estimate `E[U]` from `n` forward draws.
pub fn mc_expected_utility_with(
    spec: &GenerativeSpec,
    utility: &UtilitySpec,
    n: usize,
    seed: u64,
    strategy: Strategy,
) -> Result<OracleEstimate> {
    if n < MIN_SAMPLES {
        return Err(IdssError::invalid(format!("{n} samples; at least {MIN_SAMPLES} required")));
    }
    let res = &spec.resolved;
    let weights = utility.weights_for(res.decision.as_str());
    let terms = utility
        .terms
        .iter()
        .zip(weights)
        .map(|(t, k)| {
            let var = res
                .var_index(t.variable.as_str())
                .ok_or_else(|| IdssError::UnknownVariable(t.variable.clone()))?;
            let node = res
                .node(var, t.time)
                .ok_or_else(|| IdssError::invalid(format!("`{}` has no slot at time {}", t.variable, t.time)))?;
            if t.region >= res.regions[var] {
                return Err(IdssError::invalid(format!("`{}` has no region {}", t.variable, t.region)));
            }
            let factor = match &t.with {
                None => None,
                Some(f) => {
                    let xv = res
                        .var_index(f.variable.as_str())
                        .ok_or_else(|| IdssError::UnknownVariable(f.variable.clone()))?;
                    if f.region >= res.regions[xv] {
                        return Err(IdssError::invalid(format!("`{}` has no region {}", f.variable, f.region)));
                    }
                    let xnode = res
                        .node(xv, t.time)
                        .or_else(|| res.node(xv, 1))
                        .ok_or_else(|| IdssError::invalid(format!("`{}` has no time slot", f.variable)))?;
                    Some(spec.offsets[xnode] + f.region)
                }
            };
            Ok(UtilityPlan {
                value: spec.offsets[node] + t.region,
                factor,
                weight: k,
                marginal: t.marginal,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let chunks = n.div_ceil(CHUNK);
    let partial = map_indexed(strategy, chunks, |c| -> Result<Welford> {
        let mut sc = Scratch {
            values: vec![0.0; spec.values],
            params: vec![0.0; *spec.param_offsets.last().expect("non-empty")],
            z: vec![0.0; spec.scratch],
            tmp: vec![0.0; spec.scratch],
        };
        let mut acc = Welford::default();
        for s in c * CHUNK..((c + 1) * CHUNK).min(n) {
            acc.push(spec.sample(seed, s as u64, &terms, &mut sc)?);
        }
        Ok(acc)
    });
    let mut total = Welford::default();
    for p in partial {
        total = total.merge(p?);
    }
    let var = total.m2 / (total.n - 1) as f64;
    Ok(OracleEstimate {
        mean: total.mean,
        se: (var / total.n as f64).sqrt(),
        n,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut one = Welford::default();
        xs.iter().for_each(|&x| one.push(x));
        let (a, b) = xs.split_at(313);
        let mut wa = Welford::default();
        a.iter().for_each(|&x| wa.push(x));
        let mut wb = Welford::default();
        b.iter().for_each(|&x| wb.push(x));
        let merged = wa.merge(wb);
        assert!((merged.mean - one.mean).abs() < 1e-12);
        assert!((merged.m2 - one.m2).abs() < 1e-8 * one.m2);
    }

    #[test]
    fn gaussian_root_reproduces_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let g = Gaussian::new(&DVector::zeros(2), &cov);
        assert!(g.triangular);
        let l = DMatrix::from_row_slice(2, 2, &g.root);
        assert!((&l * l.transpose() - cov).abs().max() < 1e-12);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let g = Gaussian::new(&DVector::zeros(2), &singular);
        assert!(!g.triangular);
        let l = DMatrix::from_row_slice(2, 2, &g.root);
        assert!((&l * l.transpose() - singular).abs().max() < 1e-12);
    }
}
