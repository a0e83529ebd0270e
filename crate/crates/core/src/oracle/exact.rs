//! Exact oracles: enumeration over small discrete models and closed-form
//! conjugate posteriors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::causal::CausalBn;
use crate::error::{IdssError, Result};
use crate::panels::{StagedTree, StagedTreeState, TreeEdge};

pub const MAX_STATES: usize = 1_000_000;

/// A joint distribution over finitely many discrete variables, stored as a
/// full table with the first variable most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel {
    pub cardinalities: Vec<usize>,
    pub probabilities: Vec<f64>,
}

impl DiscreteModel {
    pub fn new(cardinalities: Vec<usize>, probabilities: Vec<f64>) -> Result<Self> {
        let states = cardinalities
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .filter(|&s| s <= MAX_STATES)
            .ok_or_else(|| IdssError::invalid(format!("more than {MAX_STATES} joint states")))?;
        if cardinalities.contains(&0) || probabilities.len() != states {
            return Err(IdssError::shape(format!(
                "{} probabilities for {states} joint states",
                probabilities.len()
            )));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(IdssError::invalid("probabilities must be nonnegative"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(IdssError::invalid(format!("probabilities sum to {total}")));
        }
        Ok(Self {
            cardinalities,
            probabilities,
        })
    }

    pub fn from_bn(bn: &CausalBn) -> Result<Self> {
        Self::new(bn.nodes.iter().map(|n| n.cardinality).collect(), bn.joint()?)
    }

    pub fn decode(&self, mut index: usize, out: &mut [usize]) {
        for (o, &c) in out.iter_mut().zip(&self.cardinalities).rev() {
            *o = index % c;
            index /= c;
        }
    }
}

/// `sum_x p(x) u(x)` over every joint state.
pub fn enumerate_expected_utility(model: &DiscreteModel, utility: impl Fn(&[usize]) -> f64) -> Result<f64> {
    let mut x = vec![0; model.cardinalities.len()];
    let mut total = 0.0;
    for (k, &p) in model.probabilities.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        model.decode(k, &mut x);
        let u = utility(&x);
        if !u.is_finite() {
            return Err(IdssError::invalid(format!("utility is {u} at state {x:?}")));
        }
        total += p * u;
    }
    Ok(total)
}

/// Joint after setting node `variable` to `value`: the product of every
/// other node's conditional table, with the set node's factor replaced by
/// an indicator.
pub fn truncated_factorization(bn: &CausalBn, variable: &str, value: usize) -> Result<Vec<f64>> {
    bn.validate()?;
    let k = bn
        .position(variable)
        .ok_or_else(|| IdssError::UnknownVariable(variable.into()))?;
    if value >= bn.nodes[k].cardinality {
        return Err(IdssError::invalid(format!("`{variable}` has no state {value}")));
    }
    let cards: Vec<usize> = bn.nodes.iter().map(|n| n.cardinality).collect();
    let parents: Vec<Vec<usize>> = bn
        .nodes
        .iter()
        .map(|n| n.parents.iter().filter_map(|p| bn.position(p.as_str())).collect())
        .collect();
    let states: usize = cards.iter().product();
    let mut x = vec![0usize; cards.len()];
    let mut out = Vec::with_capacity(states);
    for idx in 0..states {
        let mut rem = idx;
        for j in (0..cards.len()).rev() {
            x[j] = rem % cards[j];
            rem /= cards[j];
        }
        if x[k] != value {
            out.push(0.0);
            continue;
        }
        let mut p = 1.0;
        for (j, node) in bn.nodes.iter().enumerate() {
            if j == k {
                continue;
            }
            let mut row = 0;
            for &q in &parents[j] {
                row = row * cards[q] + x[q];
            }
            p *= node.cpt[row][x[j]];
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMoments {
    pub mean: f64,
    pub variance: f64,
}

/// `Be(alpha, beta)` prior, `successes` out of `trials`.
pub fn beta_binomial_posterior(alpha: f64, beta: f64, successes: u64, trials: u64) -> Result<PosteriorMoments> {
    if successes > trials || !(alpha > 0.0 && beta > 0.0) {
        return Err(IdssError::invalid("invalid Beta-binomial inputs"));
    }
    let a = alpha + successes as f64;
    let b = beta + (trials - successes) as f64;
    Ok(PosteriorMoments {
        mean: a / (a + b),
        variance: a * b / ((a + b) * (a + b) * (a + b + 1.0)),
    })
}

/// Known-variance normal observations of a normal mean, by precision
/// weighting.
pub fn normal_normal_posterior(prior_mean: f64, prior_var: f64, obs_var: f64, ys: &[f64]) -> Result<PosteriorMoments> {
    if !(prior_var > 0.0 && obs_var > 0.0) {
        return Err(IdssError::invalid("variances must be positive"));
    }
    let precision = 1.0 / prior_var + ys.len() as f64 / obs_var;
    let weighted = prior_mean / prior_var + ys.iter().sum::<f64>() / obs_var;
    Ok(PosteriorMoments {
        mean: weighted / precision,
        variance: 1.0 / precision,
    })
}

/// Posterior mean of a Dirichlet after multinomial counts.
pub fn dirichlet_posterior_mean(alpha: &[f64], counts: &[u64]) -> Result<Vec<f64>> {
    if alpha.len() != counts.len() || alpha.iter().any(|a| !(*a > 0.0)) {
        return Err(IdssError::invalid("invalid Dirichlet inputs"));
    }
    let post: Vec<f64> = alpha.iter().zip(counts).map(|(a, &n)| a + n as f64).collect();
    let total: f64 = post.iter().sum();
    Ok(post.iter().map(|a| a / total).collect())
}

/// Root-to-leaf paths as `(vertex, edge)` pairs, found by recursion.
fn tree_paths(tree: &StagedTree) -> Result<Vec<Vec<(usize, usize)>>> {
    let index: BTreeMap<&str, usize> = tree
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (v.id.as_str(), i))
        .collect();
    fn walk(
        tree: &StagedTree,
        index: &BTreeMap<&str, usize>,
        v: usize,
        prefix: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) -> Result<()> {
        if prefix.len() > tree.vertices.len() {
            return Err(IdssError::Structure("tree has a cycle".into()));
        }
        for (k, e) in tree.vertices[v].edges.iter().enumerate() {
            prefix.push((v, k));
            match e {
                TreeEdge::Leaf { .. } => out.push(prefix.clone()),
                TreeEdge::Vertex { to } => {
                    let j = *index
                        .get(to.as_str())
                        .ok_or_else(|| IdssError::Structure(format!("unknown vertex `{to}`")))?;
                    walk(tree, index, j, prefix, out)?;
                }
            }
            prefix.pop();
        }
        Ok(())
    }
    let mut out = Vec::new();
    if !tree.vertices.is_empty() {
        walk(tree, &index, 0, &mut Vec::new(), &mut out)?;
    }
    Ok(out)
}

/// Posterior predictive probability of each leaf of a staged tree after
/// observing `outcomes` (leaf indices, left to right), computed as a ratio
/// of Dirichlet-multinomial marginal likelihoods.
pub fn tree_predictive_by_enumeration(
    tree: &StagedTree,
    prior: &StagedTreeState,
    outcomes: &[usize],
) -> Result<Vec<f64>> {
    let paths = tree_paths(tree)?;
    let stage_of: Vec<&str> = tree.vertices.iter().map(|v| v.stage()).collect();
    let mut alpha: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (i, s) in stage_of.iter().enumerate() {
        alpha
            .entry(*s)
            .or_insert_with(|| tree.stage_dirichlet(prior, i).posterior());
    }
    let counts_for = |leaves: &[usize]| -> Result<BTreeMap<&str, Vec<u64>>> {
        let mut counts: BTreeMap<&str, Vec<u64>> = alpha.iter().map(|(s, a)| (*s, vec![0; a.len()])).collect();
        for &o in leaves {
            let path = paths
                .get(o)
                .ok_or_else(|| IdssError::invalid(format!("leaf {o} of {}", paths.len())))?;
            for &(v, k) in path {
                counts.get_mut(stage_of[v]).expect("stage listed")[k] += 1;
            }
        }
        Ok(counts)
    };
    let log_ml = |counts: &BTreeMap<&str, Vec<u64>>| -> f64 {
        counts
            .iter()
            .map(|(s, n)| {
                let a = &alpha[s];
                let a0: f64 = a.iter().sum();
                let n0 = n.iter().sum::<u64>() as f64;
                ln_gamma(a0) - ln_gamma(a0 + n0)
                    + a.iter()
                        .zip(n)
                        .map(|(&ak, &nk)| ln_gamma(ak + nk as f64) - ln_gamma(ak))
                        .sum::<f64>()
            })
            .sum()
    };
    let base = log_ml(&counts_for(outcomes)?);
    let mut with = outcomes.to_vec();
    with.push(0);
    (0..paths.len())
        .map(|j| {
            *with.last_mut().expect("pushed") = j;
            Ok((log_ml(&counts_for(&with)?) - base).exp())
        })
        .collect()
}
