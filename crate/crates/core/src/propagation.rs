//! Backward moment-message propagation.
//!
//! The expected utility of a policy is computed by sweeping once from the
//! last variable at the last time slot back to the first. The message holds
//! a constant and, for every variable slot not yet absorbed, coefficients on
//! that slot's first and second moments. Absorbing a slot asks its panel to
//! substitute those moments, which leaves a constant and a pending term on
//! the parent slot.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ck::{ancestral_order, CkBundle, Factor, Marginal, UtilitySpec};
use crate::error::{IdssError, Result};
use crate::ids::{DecisionId, PanelId, VariableId};
use crate::panels::{Panel, PanelView, Placement, Term};
use crate::par::{self, Strategy};

/// One variable at one time slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub var: usize,
    pub slot: u32,
}

/// Every panel's beliefs under one decision, laid out along the DAG.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub decision: DecisionId,
    pub variables: Vec<VariableId>,
    pub owners: Vec<PanelId>,
    pub regions: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub views: Vec<PanelView>,
    /// Forward order: time slots outermost, then ancestral order.
    pub nodes: Vec<Node>,
    node_of: Vec<Vec<Option<usize>>>,
}

impl Resolved {
    pub fn node(&self, var: usize, slot: u32) -> Option<usize> {
        self.node_of[var].get(slot as usize - 1).copied().flatten()
    }

    pub fn var_index(&self, id: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.as_str() == id)
    }

    pub fn parent_node(&self, n: Node) -> Option<usize> {
        let p = self.parent[n.var]?;
        self.node(p, n.slot).or_else(|| self.node(p, 1))
    }

    /// Whether two variables are linked by a chain of parent edges in
    /// either direction.
    pub fn connected(&self, a: usize, b: usize) -> bool {
        let root = |mut v: usize| {
            while let Some(p) = self.parent[v] {
                v = p;
            }
            v
        };
        root(a) == root(b)
    }

    fn parent_regions(&self, var: usize) -> Option<usize> {
        self.parent[var].map(|p| self.regions[p])
    }

    fn expand(&self, node: usize, term: &Term) -> Result<(f64, Option<(usize, Term)>)> {
        let n = self.nodes[node];
        let e = self.views[n.var]
            .expand(n.slot, self.parent_regions(n.var), term)
            .map_err(|e| self.delivery(n.var, e))?;
        match (e.parent, self.parent_node(n)) {
            (Some(t), Some(p)) => Ok((e.constant, Some((p, t)))),
            (None, _) => Ok((e.constant, None)),
            (Some(_), None) => Err(IdssError::Structure(format!(
                "`{}` expands onto a parent that is not in the structure",
                self.variables[n.var]
            ))),
        }
    }

    fn delivery(&self, var: usize, e: IdssError) -> IdssError {
        match e {
            IdssError::Delivery { .. } => e,
            other => IdssError::Delivery {
                panel: self.owners[var].clone(),
                variable: self.variables[var].clone(),
                reason: other.to_string(),
            },
        }
    }

    /// Absorb every pending term, last node first, returning the constant.
    pub fn sweep(&self, mut constant: f64, mut pending: BTreeMap<usize, Term>) -> Result<f64> {
        while let Some((node, term)) = pending.pop_last() {
            if term.is_zero() {
                continue;
            }
            let (c, up) = self.expand(node, &term)?;
            constant += c;
            if let Some((p, t)) = up {
                if p >= node {
                    return Err(IdssError::Structure("parent slot does not precede its child".into()));
                }
                match pending.get_mut(&p) {
                    Some(existing) => existing.add(&t)?,
                    None => {
                        pending.insert(p, t);
                    }
                }
            }
        }
        Ok(constant)
    }

    /// First moments and raw second-moment matrices of every node, computed
    /// forwards by expanding unit terms.
    pub fn forward_moments(&self) -> Result<Vec<NodeMoments>> {
        let mut out: Vec<NodeMoments> = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            let r = self.regions[n.var];
            let mut mean = DVector::zeros(r);
            let mut second = DMatrix::zeros(r, r);
            let eval = |term: &Term| -> Result<f64> {
                let (c, up) = self.expand(i, term)?;
                Ok(match up {
                    None => c,
                    Some((p, t)) => c + out[p].evaluate(&t),
                })
            };
            for l in 0..r {
                let mut t = Term::zeros(r);
                t.lin[l] = 1.0;
                mean[l] = eval(&t)?;
                for k in l..r {
                    let mut t = Term::zeros(r);
                    if k == l {
                        t.quad[(l, l)] = 1.0;
                    } else {
                        t.quad[(l, k)] = 0.5;
                        t.quad[(k, l)] = 0.5;
                    }
                    let v = eval(&t)?;
                    second[(l, k)] = v;
                    second[(k, l)] = v;
                }
            }
            out.push(NodeMoments { mean, second });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMoments {
    pub mean: DVector<f64>,
    /// `E[Y Y^T]`.
    pub second: DMatrix<f64>,
}

impl NodeMoments {
    pub fn evaluate(&self, t: &Term) -> f64 {
        t.lin.dot(&self.mean) + t.quad.component_mul(&self.second).sum()
    }

    pub fn variance(&self, l: usize) -> f64 {
        (self.second[(l, l)] - self.mean[l] * self.mean[l]).max(0.0)
    }
}

/// Lay out panel beliefs for `decision`. Decisions that set a variable
/// replace its panel's beliefs by the degenerate ones; under a causal
/// declaration panels without a state for the decision reuse the baseline.
pub fn resolve(ck: &CkBundle, panels: &BTreeMap<PanelId, Panel>, decision: &str) -> Result<Resolved> {
    let sc = &ck.structure;
    let dec = ck
        .decisions
        .get(decision)
        .ok_or_else(|| IdssError::UnknownDecision(decision.into()))?;
    let order = ancestral_order(sc)?;
    let index = |id: &str| sc.variables.iter().position(|v| v.id.as_str() == id);

    let nvar = sc.variables.len();
    let mut parent = vec![None; nvar];
    for (i, v) in sc.variables.iter().enumerate() {
        let ps: Vec<_> = sc.parents(v.id.as_str()).collect();
        if ps.len() > 1 {
            return Err(IdssError::Structure(format!(
                "`{}` has {} parents; moment messages need at most one",
                v.id,
                ps.len()
            )));
        }
        parent[i] = ps.first().and_then(|p| index(p.as_str()));
    }

    let regions: Vec<usize> = sc.variables.iter().map(|v| v.regions).collect();
    let mut views = Vec::with_capacity(nvar);
    for (i, v) in sc.variables.iter().enumerate() {
        let panel = panels
            .values()
            .find(|p| p.variable == v.id)
            .ok_or_else(|| IdssError::Delivery {
                panel: v.owner.clone(),
                variable: v.id.clone(),
                reason: "no panel model delivers this variable".into(),
            })?;
        if panel.id != v.owner {
            return Err(IdssError::Structure(format!(
                "`{}` is owned by `{}` but delivered by `{}`",
                v.id, v.owner, panel.id
            )));
        }
        let has_parent = parent[i].is_some();
        let view = match &dec.intervention {
            Some(iv) if iv.variable == v.id => panel.intervened_view(iv.value, has_parent)?,
            _ => match panel.view(decision, has_parent)? {
                Some(view) => view,
                None if ck.causal.is_some() => {
                    panel.require_view(ck.decisions.baseline.as_str(), has_parent)?
                }
                None => panel.require_view(decision, has_parent)?,
            },
        };
        let slots = if v.time_indexed { sc.horizon } else { 1 };
        let placement = Placement {
            regions: v.regions,
            parent_regions: parent[i].map(|p| regions[p]),
            slots,
        };
        view.validate(placement).map_err(|e| IdssError::Delivery {
            panel: panel.id.clone(),
            variable: v.id.clone(),
            reason: e.to_string(),
        })?;
        views.push(view);
    }

    let mut nodes = Vec::new();
    let mut node_of = vec![vec![None; sc.horizon as usize]; nvar];
    for t in 1..=sc.horizon {
        for id in &order {
            let i = index(id.as_str()).expect("ordered variable is declared");
            if t == 1 || sc.variables[i].time_indexed {
                node_of[i][t as usize - 1] = Some(nodes.len());
                nodes.push(Node { var: i, slot: t });
            }
        }
    }

    Ok(Resolved {
        decision: dec.id.clone(),
        variables: sc.variables.iter().map(|v| v.id.clone()).collect(),
        owners: sc.variables.iter().map(|v| v.owner.clone()).collect(),
        regions,
        parent,
        views,
        nodes,
        node_of,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermScore {
    pub attribute: String,
    pub variable: VariableId,
    pub time: u32,
    pub region: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    pub decision: DecisionId,
    pub total: f64,
    pub breakdown: Vec<TermScore>,
}

/// Message contribution of one weighted utility term.
enum Contribution {
    Pending { node: usize, constant: f64, term: Term },
    Constant(f64),
}

fn contributions(res: &Resolved, utility: &UtilitySpec, weights: &[f64]) -> Result<Vec<Contribution>> {
    let mut forward: Option<Vec<NodeMoments>> = None;
    let mut out = Vec::with_capacity(utility.terms.len());
    for (term, &k) in utility.terms.iter().zip(weights) {
        let var = res
            .var_index(term.variable.as_str())
            .ok_or_else(|| IdssError::UnknownVariable(term.variable.clone()))?;
        let node = res.node(var, term.time).ok_or_else(|| {
            IdssError::invalid(format!("`{}` has no slot at time {}", term.variable, term.time))
        })?;
        let r = res.regions[var];
        if term.region >= r {
            return Err(IdssError::invalid(format!(
                "`{}` has no region {}",
                term.variable, term.region
            )));
        }
        let l = term.region;
        let mut t = Term::zeros(r);
        if let Some(f) = &term.with {
            let Marginal::Affine { a, b, .. } = term.marginal else {
                return Err(IdssError::invalid(format!(
                    "product term `{}` needs an affine marginal",
                    term.label()
                )));
            };
            t.lin[l] = k * b;
            let (xnode, xterm) = product_term(res, node, &t, f)?;
            out.push(Contribution::Pending {
                node: xnode,
                constant: k * a,
                term: xterm,
            });
            continue;
        }
        let c = match term.marginal {
            Marginal::Quadratic { gamma } => {
                t.quad[(l, l)] = -k * gamma;
                0.0
            }
            Marginal::Affine { a, b, .. } => {
                t.lin[l] = k * b;
                k * a
            }
            Marginal::Exponential { c } => {
                if forward.is_none() {
                    forward = Some(res.forward_moments()?);
                }
                let m = &forward.as_ref().expect("computed above")[node];
                out.push(Contribution::Constant(
                    k * exponential_gaussian_score(m.mean[l], m.variance(l), c)?,
                ));
                continue;
            }
        };
        out.push(Contribution::Pending {
            node,
            constant: c,
            term: t,
        });
    }
    Ok(out)
}

/// The pending term on `f` equivalent to `term` on `node` multiplied by `f`.
///
/// When `f` is the parent `X` of `Y`, `E[Y | X] = c + p . X`, so
/// `E[X_j Y] = E[c X_j + X_j (p . X)]`. Otherwise the two must lie in
/// unconnected parts of the structure and `E[X_j Y] = E[Y] E[X_j]`.
fn product_term(res: &Resolved, node: usize, term: &Term, f: &Factor) -> Result<(usize, Term)> {
    let y = res.nodes[node];
    let xv = res
        .var_index(f.variable.as_str())
        .ok_or_else(|| IdssError::UnknownVariable(f.variable.clone()))?;
    let rx = res.regions[xv];
    if f.region >= rx {
        return Err(IdssError::invalid(format!("`{}` has no region {}", f.variable, f.region)));
    }
    let j = f.region;
    let mut out = Term::zeros(rx);
    if res.parent[y.var] == Some(xv) {
        let xnode = res.parent_node(y).expect("parent is laid out");
        let (c, up) = res.expand(node, term)?;
        out.lin[j] += c;
        if let Some((p, pt)) = up {
            debug_assert_eq!(p, xnode);
            if pt.quad.iter().any(|&q| q != 0.0) {
                return Err(IdssError::Structure(format!(
                    "`{}` is not linear in its parent; the product with `{}` is a cubic moment",
                    res.variables[y.var], f.variable
                )));
            }
            for i in 0..rx {
                out.quad[(i, j)] += 0.5 * pt.lin[i];
                out.quad[(j, i)] += 0.5 * pt.lin[i];
            }
        }
        return Ok((xnode, out));
    }
    if res.connected(y.var, xv) {
        return Err(IdssError::Structure(format!(
            "`{}` must be the parent of `{}` or share no ancestry with it",
            f.variable, res.variables[y.var]
        )));
    }
    let xnode = res
        .node(xv, y.slot)
        .or_else(|| res.node(xv, 1))
        .ok_or_else(|| IdssError::invalid(format!("`{}` has no time slot", f.variable)))?;
    out.lin[j] = res.sweep(0.0, BTreeMap::from([(node, term.clone())]))?;
    Ok((xnode, out))
}

fn score_resolved(res: &Resolved, utility: &UtilitySpec, weights: &[f64]) -> Result<PolicyScore> {
    let parts = contributions(res, utility, weights)?;
    let mut breakdown = Vec::with_capacity(parts.len());
    let mut constant = 0.0;
    let mut pending: BTreeMap<usize, Term> = BTreeMap::new();
    for (part, term) in parts.iter().zip(&utility.terms) {
        let value = match part {
            Contribution::Constant(c) => {
                constant += c;
                *c
            }
            Contribution::Pending {
                node,
                constant: c,
                term: t,
            } => {
                constant += c;
                match pending.get_mut(node) {
                    Some(existing) => existing.add(t)?,
                    None => {
                        pending.insert(*node, t.clone());
                    }
                }
                res.sweep(*c, BTreeMap::from([(*node, t.clone())]))?
            }
        };
        breakdown.push(TermScore {
            attribute: term.label(),
            variable: term.variable.clone(),
            time: term.time,
            region: term.region,
            value,
        });
    }
    let total = res.sweep(constant, pending)?;
    Ok(PolicyScore {
        decision: res.decision.clone(),
        total,
        breakdown,
    })
}

/// Expected utility of `decision` with the bundle's criterion weights, or
/// with `weights` (one per utility term) when given.
pub fn score_policy_with(
    ck: &CkBundle,
    panels: &BTreeMap<PanelId, Panel>,
    decision: &str,
    weights: Option<&[f64]>,
) -> Result<PolicyScore> {
    let res = resolve(ck, panels, decision)?;
    let w = match weights {
        Some(w) if w.len() != ck.utility.terms.len() => {
            return Err(IdssError::shape(format!(
                "{} weights for {} utility terms",
                w.len(),
                ck.utility.terms.len()
            )))
        }
        Some(w) => w.to_vec(),
        None => ck.utility.weights_for(decision),
    };
    score_resolved(&res, &ck.utility, &w)
}

pub fn score_policy(ck: &CkBundle, panels: &BTreeMap<PanelId, Panel>, decision: &str) -> Result<PolicyScore> {
    score_policy_with(ck, panels, decision, None)
}

/// Every decision scored, best first. Ties keep declaration order.
pub fn rank_policies(
    ck: &CkBundle,
    panels: &BTreeMap<PanelId, Panel>,
    strategy: Strategy,
) -> Result<Vec<PolicyScore>> {
    let ids: Vec<&DecisionId> = ck.decisions.ids().collect();
    let scored = par::map_indexed(strategy, ids.len(), |i| score_policy(ck, panels, ids[i].as_str()));
    let mut scores = scored.into_iter().collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| b.total.total_cmp(&a.total));
    Ok(scores)
}

/// `sum_i k_i U_i`.
pub fn value_independent_score(scores: &[f64], weights: &[f64]) -> Result<f64> {
    if scores.len() != weights.len() {
        return Err(IdssError::shape(format!(
            "{} panel scores for {} weights",
            scores.len(),
            weights.len()
        )));
    }
    Ok(scores.iter().zip(weights).map(|(u, k)| u * k).sum())
}

/// Expected value of `1 - exp(-c Y)` for Gaussian `Y` with mean `e` and
/// variance `v`: `1 - exp(-c (e - c v / 2))`.
pub fn exponential_gaussian_score(e: f64, v: f64, c: f64) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(IdssError::invalid(format!("risk coefficient {c} must be positive")));
    }
    if !(v >= 0.0) {
        return Err(IdssError::invalid(format!("negative variance {v}")));
    }
    Ok(-(-c * (e - 0.5 * c * v)).exp_m1())
}

/// Expected joint table `(00, 01, 10, 11)` of two binary variables
/// `Y1 -> Y2` from `E[P(Y1 = 1)]` and the two conditional means.
///
/// Each pair of cells sharing a value of `Y1` is split so that it sums back
/// to that margin in floating point, which makes the pairwise sum
/// `(t00 + t01) + (t10 + t11)` exactly one.
pub fn binary_two_panel_table(mu1: f64, mu20: f64, mu21: f64) -> Result<[f64; 4]> {
    for (name, x) in [("mu1", mu1), ("mu20", mu20), ("mu21", mu21)] {
        if !(0.0..=1.0).contains(&x) {
            return Err(IdssError::invalid(format!("{name} = {x} lies outside [0, 1]")));
        }
    }
    let q = 1.0 - mu1;
    let t01 = q * mu20;
    let t11 = mu1 * mu21;
    Ok([split_rest(q, t01), t01, split_rest(mu1, t11), t11])
}

/// `x` close to `total - part` with `x + part == total` after rounding.
fn split_rest(total: f64, part: f64) -> f64 {
    let mut x = total - part;
    while x + part > total {
        x = x.next_down();
    }
    while x + part < total {
        x = x.next_up();
    }
    x
}
