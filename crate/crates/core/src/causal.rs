//! Causal extrapolation from the observational regime to interventions.
//!
//! When the structure is declared causal, beliefs under a decision that sets
//! a variable are a known function of the baseline beliefs: the set
//! variable becomes degenerate and its children read the matching rows of
//! their tables. Nothing else changes and nothing new is elicited.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::ck::Intervention;
use crate::error::{IdssError, Result};
use crate::ids::VariableId;

/// Variables the panels agree may be manipulated, with the structure read
/// causally for them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CausalDeclaration {
    pub interventionable: Vec<VariableId>,
}

impl CausalDeclaration {
    pub fn covers(&self, variable: &str) -> bool {
        self.interventionable.iter().any(|v| v.as_str() == variable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalNode {
    pub id: VariableId,
    pub cardinality: usize,
    #[serde(default)]
    pub parents: Vec<VariableId>,
    /// One distribution per parent configuration, configurations in
    /// mixed-radix order with the first parent most significant.
    pub cpt: Vec<Vec<f64>>,
}

/// A discrete Bayesian network with nodes listed in ancestral order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalBn {
    pub nodes: Vec<CausalNode>,
}

impl CausalBn {
    pub fn position(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id.as_str() == id)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.cardinality == 0 {
                return Err(IdssError::invalid(format!("`{}` has no states", node.id)));
            }
            let mut rows = 1usize;
            for p in &node.parents {
                let j = self
                    .position(p.as_str())
                    .ok_or_else(|| IdssError::UnknownVariable(p.clone()))?;
                if j >= i {
                    return Err(IdssError::Structure(format!(
                        "parent `{p}` of `{}` is not listed before it",
                        node.id
                    )));
                }
                rows *= self.nodes[j].cardinality;
            }
            if node.cpt.len() != rows {
                return Err(IdssError::shape(format!(
                    "`{}` has {} table rows, expected {rows}",
                    node.id,
                    node.cpt.len()
                )));
            }
            for row in &node.cpt {
                if row.len() != node.cardinality {
                    return Err(IdssError::shape(format!("`{}` has a row of the wrong width", node.id)));
                }
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(IdssError::invalid(format!("`{}` has a probability outside [0, 1]", node.id)));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(IdssError::invalid(format!("`{}` has a row summing to {total}", node.id)));
                }
            }
        }
        Ok(())
    }

    /// Number of joint configurations.
    pub fn states(&self) -> usize {
        self.nodes.iter().map(|n| n.cardinality).product()
    }

    /// Decode a joint index, first node most significant.
    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate().rev() {
            out[i] = index % node.cardinality;
            index /= node.cardinality;
        }
        out
    }

    pub(crate) fn row_index(&self, node: &CausalNode, config: &[usize]) -> usize {
        node.parents.iter().fold(0, |acc, p| {
            let j = self.position(p.as_str()).unwrap_or(0);
            acc * self.nodes[j].cardinality + config[j]
        })
    }

    /// The joint distribution by the chain rule over every configuration.
    pub fn joint(&self) -> Result<Vec<f64>> {
        self.validate()?;
        Ok((0..self.states())
            .map(|k| {
                let x = self.decode(k);
                self.nodes
                    .iter()
                    .enumerate()
                    .map(|(i, n)| n.cpt[self.row_index(n, &x)][x[i]])
                    .product()
            })
            .collect())
    }

    /// Marginal distribution of one node.
    pub fn marginal(&self, id: &str) -> Result<Vec<f64>> {
        let i = self
            .position(id)
            .ok_or_else(|| IdssError::UnknownVariable(id.into()))?;
        let mut out = vec![0.0; self.nodes[i].cardinality];
        for (k, p) in self.joint()?.into_iter().enumerate() {
            out[self.decode(k)[i]] += p;
        }
        Ok(out)
    }
}

/// Beliefs under the decision that sets `intervention`, derived from the
/// baseline network. `None` is the idle decision and returns the baseline.
pub fn causal_expand(
    baseline: &CausalBn,
    declaration: &CausalDeclaration,
    intervention: Option<&Intervention>,
) -> Result<CausalBn> {
    baseline.validate()?;
    let Some(iv) = intervention else {
        return Ok(baseline.clone());
    };
    if !declaration.covers(iv.variable.as_str()) {
        return Err(IdssError::Structure(format!(
            "`{}` is not declared interventionable",
            iv.variable
        )));
    }
    let k = baseline
        .position(iv.variable.as_str())
        .ok_or_else(|| IdssError::UnknownVariable(iv.variable.clone()))?;
    let value = iv.value as usize;
    let card = baseline.nodes[k].cardinality;
    if value >= card {
        return Err(IdssError::invalid(format!(
            "`{}` has {card} states, cannot set it to {value}",
            iv.variable
        )));
    }
    let mut out = baseline.clone();
    let mut degenerate = vec![0.0; card];
    degenerate[value] = 1.0;
    out.nodes[k].parents.clear();
    out.nodes[k].cpt = vec![degenerate];

    for child in out.nodes.iter_mut() {
        let Some(pos) = child.parents.iter().position(|p| *p == iv.variable) else {
            continue;
        };
        // Row index = sum_j x_j * stride_j; keep the rows where the set
        // parent takes `value`.
        let cards: Vec<usize> = child
            .parents
            .iter()
            .map(|p| baseline.nodes[baseline.position(p.as_str()).unwrap_or(0)].cardinality)
            .collect();
        let stride: usize = cards[pos + 1..].iter().product();
        let kept = child
            .cpt
            .iter()
            .enumerate()
            .filter(|(r, _)| (r / stride) % card == value)
            .map(|(_, row)| row.clone())
            .collect();
        child.cpt = kept;
        child.parents.remove(pos);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> CausalBn {
        serde_json::from_str(
            r#"{"nodes":[
                {"id":"Y1","cardinality":2,"cpt":[[0.9,0.1]]},
                {"id":"Y2","cardinality":2,"parents":["Y1"],"cpt":[[0.8,0.2],[0.7,0.3]]}
            ]}"#,
        )
        .unwrap()
    }

    fn decl() -> CausalDeclaration {
        CausalDeclaration {
            interventionable: vec!["Y1".into()],
        }
    }

    #[test]
    fn idle_intervention_is_identity() {
        let bn = two_node();
        assert_eq!(causal_expand(&bn, &decl(), None).unwrap(), bn);
    }

    #[test]
    fn setting_the_root_keeps_the_matching_row() {
        let iv = Intervention {
            variable: "Y1".into(),
            value: 1,
        };
        let out = causal_expand(&two_node(), &decl(), Some(&iv)).unwrap();
        assert_eq!(out.nodes[0].cpt, vec![vec![0.0, 1.0]]);
        assert!(out.nodes[1].parents.is_empty());
        assert_eq!(out.nodes[1].cpt, vec![vec![0.7, 0.3]]);
    }

    #[test]
    fn undeclared_variable_is_refused() {
        let iv = Intervention {
            variable: "Y2".into(),
            value: 0,
        };
        assert!(matches!(
            causal_expand(&two_node(), &decl(), Some(&iv)),
            Err(IdssError::Structure(_))
        ));
    }

    #[test]
    fn joint_sums_to_one() {
        let total: f64 = two_node().joint().unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
