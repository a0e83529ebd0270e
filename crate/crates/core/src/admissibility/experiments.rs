//! Panel compatibility of a collection of designed experiments.
//!
//! A collection is compatible when its joint likelihood factorizes by
//! panel: each experiment either touches one panel's parameters, or is a
//! randomized intervention on a declared causal structure that sets every
//! parent of the response, so the response counts depend only on the
//! response panel's block.

use std::collections::BTreeSet;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::causal::CausalDeclaration;
use crate::ck::StructuralConsensus;
use crate::error::{IdssError, Result};
use crate::ids::VariableId;

use super::EvidenceItem;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Design {
    /// Treatments were allocated at random and blind.
    pub randomized: bool,
    /// Variables set by the experimenter.
    #[serde(default)]
    pub manipulated: Vec<VariableId>,
    pub response: VariableId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentVerdict {
    pub id: String,
    pub compatible: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub compatible: bool,
    pub verdicts: Vec<ExperimentVerdict>,
}

pub fn check_experiment_compatibility(
    experiments: &[EvidenceItem],
    sc: &StructuralConsensus,
    causal: Option<&CausalDeclaration>,
) -> Result<CompatibilityReport> {
    let mut verdicts = Vec::with_capacity(experiments.len());
    for e in experiments {
        let verdict = |compatible: bool, reason: String| ExperimentVerdict {
            id: e.id.clone(),
            compatible,
            reason,
        };
        if e.footprint.len() == 1 {
            verdicts.push(verdict(true, "single-panel footprint".into()));
            continue;
        }
        let Some(design) = e.design.as_ref().filter(|d| d.randomized) else {
            verdicts.push(verdict(
                false,
                "observational data spanning several panels".into(),
            ));
            continue;
        };
        let decl = causal.ok_or_else(|| {
            IdssError::Structure(format!(
                "experiment `{}` is a randomized intervention but no causal structure is declared",
                e.id
            ))
        })?;
        sc.require_variable(&design.response)?;
        for v in &design.manipulated {
            sc.require_variable(v)?;
            if !decl.covers(v.as_str()) {
                return Err(IdssError::Structure(format!(
                    "experiment `{}` manipulates `{v}`, which the causal declaration does not cover",
                    e.id
                )));
            }
        }
        let manipulated: BTreeSet<&str> = design.manipulated.iter().map(|v| v.as_str()).collect();
        let unset: Vec<&str> = sc
            .parents(design.response.as_str())
            .map(|p| p.as_str())
            .filter(|p| !manipulated.contains(p))
            .collect();
        if unset.is_empty() {
            verdicts.push(verdict(
                true,
                format!("every parent of `{}` is set by randomization", design.response),
            ));
        } else {
            verdicts.push(verdict(
                false,
                format!("parents {unset:?} of `{}` are not manipulated", design.response),
            ));
        }
    }
    Ok(CompatibilityReport {
        compatible: verdicts.iter().all(|v| v.compatible),
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admissibility::{Payload, SamplingTag};
    use crate::ck::VariableDecl;

    fn sc() -> StructuralConsensus {
        StructuralConsensus {
            panels: vec!["G1".into(), "G2".into()],
            variables: ["Y1", "Y2"]
                .iter()
                .enumerate()
                .map(|(i, v)| VariableDecl {
                    id: (*v).into(),
                    owner: PanelId(format!("G{}", i + 1)),
                    regions: 1,
                    time_indexed: false,
                })
                .collect(),
            edges: vec![("Y1".into(), "Y2".into())],
            horizon: 1,
        }
    }

    use crate::ids::PanelId;

    fn experiment(footprint: &[&str], design: Option<Design>) -> EvidenceItem {
        EvidenceItem {
            id: "e".into(),
            footprint: footprint.iter().map(|&p| p.into()).collect(),
            sampling: SamplingTag::SingleMargin,
            payload: Payload::BernoulliCounts {
                variable: "Y2".into(),
                row: 1,
                successes: 4,
                trials: 20,
            },
            decisions: vec![],
            design,
        }
    }

    #[test]
    fn empty_and_partitioned() {
        assert!(check_experiment_compatibility(&[], &sc(), None).unwrap().compatible);
        let two = [experiment(&["G1"], None), experiment(&["G2"], None)];
        assert!(check_experiment_compatibility(&two, &sc(), None).unwrap().compatible);
    }

    #[test]
    fn randomized_intervention_on_parents() {
        let design = Design {
            randomized: true,
            manipulated: vec!["Y1".into()],
            response: "Y2".into(),
        };
        let e = [experiment(&["G1", "G2"], Some(design.clone()))];
        let decl = CausalDeclaration {
            interventionable: vec!["Y1".into()],
        };
        assert!(check_experiment_compatibility(&e, &sc(), Some(&decl)).unwrap().compatible);
        assert!(matches!(
            check_experiment_compatibility(&e, &sc(), None),
            Err(IdssError::Structure(_))
        ));
        let observational = [experiment(&["G1", "G2"], None)];
        assert!(!check_experiment_compatibility(&observational, &sc(), Some(&decl)).unwrap().compatible);
    }
}
