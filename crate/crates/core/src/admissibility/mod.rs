//! The admissibility gate.
//!
//! Evidence is admitted only when its likelihood separates into factors
//! that each touch one panel's parameter block. Items are routed whole to
//! their single panel, or split into per-panel conditional counts when they
//! are complete samples over an ancestrally closed set of binary variables.
//! Everything else is rejected and quarantined.

pub mod closure;
pub mod experiments;
pub mod quarantine;
pub mod soundness;

use std::collections::{BTreeMap, BTreeSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::ck::StructuralConsensus;
use crate::error::{IdssError, Result};
use crate::ids::{DecisionId, PanelId, VariableId};
use crate::moments::MomentVector;

pub use experiments::{check_experiment_compatibility, CompatibilityReport, Design};
pub use quarantine::{QuarantineLog, QuarantineRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingTag {
    /// Every unit records every variable in the table.
    CompleteSample,
    /// Units record a variable set closed under taking parents.
    AncestralSample,
    /// Counts on one margin only.
    SingleMargin,
    /// Counts of a function of several variables.
    DerivedFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Payload {
    BernoulliCounts {
        variable: VariableId,
        /// Parent value the counts condition on; 0 without a parent.
        #[serde(default)]
        row: usize,
        successes: u64,
        trials: u64,
    },
    TreeCounts {
        variable: VariableId,
        counts: BTreeMap<String, Vec<u64>>,
    },
    MdmObservation {
        variable: VariableId,
        #[serde(default)]
        region: usize,
        y: f64,
        regressors: Vec<f64>,
    },
    MomentUpdate {
        variable: VariableId,
        #[serde(default = "one")]
        time: u32,
        moments: MomentVector,
    },
    /// Counts over joint configurations of binary variables, first variable
    /// most significant.
    JointTable {
        variables: Vec<VariableId>,
        counts: Vec<u64>,
    },
    /// Counts of a binary function of several variables, e.g. an exposure
    /// indicator `W = Y1 Y2`.
    FunctionCounts {
        function: String,
        variables: Vec<VariableId>,
        successes: u64,
        trials: u64,
    },
}

fn one() -> u32 {
    1
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::BernoulliCounts { .. } => "bernoulli-counts",
            Payload::TreeCounts { .. } => "tree-counts",
            Payload::MdmObservation { .. } => "mdm-observation",
            Payload::MomentUpdate { .. } => "moment-update",
            Payload::JointTable { .. } => "joint-table",
            Payload::FunctionCounts { .. } => "function-counts",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EvidenceItem {
    pub id: String,
    /// Panels whose parameter blocks the likelihood depends on.
    pub footprint: BTreeSet<PanelId>,
    pub sampling: SamplingTag,
    pub payload: Payload,
    /// Decisions whose panel states the evidence informs; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decisions: Vec<DecisionId>,
    /// Present when the item reports a designed experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<Design>,
}

/// The part of an item a single panel absorbs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PanelUpdate {
    BernoulliCounts { row: usize, successes: u64, trials: u64 },
    TreeCounts { counts: BTreeMap<String, Vec<u64>> },
    MdmObservation { region: usize, y: f64, regressors: Vec<f64> },
    MomentUpdate { time: u32, moments: MomentVector },
}

impl PanelUpdate {
    pub fn kind(&self) -> &'static str {
        match self {
            PanelUpdate::BernoulliCounts { .. } => "bernoulli-counts",
            PanelUpdate::TreeCounts { .. } => "tree-counts",
            PanelUpdate::MdmObservation { .. } => "mdm-observation",
            PanelUpdate::MomentUpdate { .. } => "moment-update",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routed {
    pub panel: PanelId,
    pub variable: VariableId,
    pub update: PanelUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionCode {
    /// The likelihood couples parameter blocks of several panels.
    ConfoundsParameters,
    /// A joint sample omits a parent of a recorded variable.
    NotAncestral,
    /// The declared footprint disagrees with the variables' owners.
    FootprintMismatch,
    /// The item cannot be split into the panels' conjugate updates.
    UnsupportedSplit,
}

impl RejectionCode {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectionCode::ConfoundsParameters => "confounds-parameters",
            RejectionCode::NotAncestral => "not-ancestral",
            RejectionCode::FootprintMismatch => "footprint-mismatch",
            RejectionCode::UnsupportedSplit => "unsupported-split",
        }
    }
}

impl std::fmt::Display for RejectionCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Admission {
    Admitted { routed: Vec<Routed> },
    Rejected { code: RejectionCode, narrative: String },
}

impl Admission {
    pub fn is_admitted(&self) -> bool {
        matches!(self, Admission::Admitted { .. })
    }

    fn reject(code: RejectionCode, narrative: impl Into<String>) -> Self {
        Admission::Rejected {
            code,
            narrative: narrative.into(),
        }
    }
}

fn malformed(item: &EvidenceItem, reason: impl Into<String>) -> IdssError {
    IdssError::Evidence {
        id: item.id.clone(),
        reason: reason.into(),
    }
}

/// Structural checks on an item: footprint names declared panels, the
/// payload is internally consistent and matches the sampling tag.
pub fn validate_item(item: &EvidenceItem, sc: &StructuralConsensus) -> Result<()> {
    if item.footprint.is_empty() {
        return Err(malformed(item, "empty footprint"));
    }
    if let Some(p) = item.footprint.iter().find(|p| !sc.has_panel(p.as_str())) {
        return Err(IdssError::UnknownPanel(p.clone()));
    }
    let tag_ok = match (&item.payload, item.sampling) {
        (Payload::FunctionCounts { .. }, t) => t == SamplingTag::DerivedFunction,
        (_, SamplingTag::DerivedFunction) => false,
        (Payload::JointTable { .. }, t) => {
            matches!(t, SamplingTag::CompleteSample | SamplingTag::AncestralSample)
        }
        _ => true,
    };
    if !tag_ok {
        return Err(malformed(
            item,
            format!("a {} payload cannot carry the {:?} tag", item.payload.kind(), item.sampling),
        ));
    }
    let check_var = |v: &VariableId| sc.require_variable(v).map(|_| ());
    match &item.payload {
        Payload::BernoulliCounts {
            variable,
            successes,
            trials,
            ..
        } => {
            check_var(variable)?;
            if successes > trials {
                return Err(malformed(item, format!("{successes} successes out of {trials}")));
            }
        }
        Payload::FunctionCounts {
            variables,
            successes,
            trials,
            ..
        } => {
            variables.iter().try_for_each(check_var)?;
            if successes > trials {
                return Err(malformed(item, format!("{successes} successes out of {trials}")));
            }
        }
        Payload::TreeCounts { variable, .. }
        | Payload::MdmObservation { variable, .. }
        | Payload::MomentUpdate { variable, .. } => check_var(variable)?,
        Payload::JointTable { variables, counts } => {
            variables.iter().try_for_each(check_var)?;
            let uniq: BTreeSet<_> = variables.iter().collect();
            if uniq.len() != variables.len() || variables.is_empty() {
                return Err(malformed(item, "joint table variables must be distinct and non-empty"));
            }
            if variables.len() > 20 || counts.len() != 1usize << variables.len() {
                return Err(malformed(
                    item,
                    format!("{} cells for {} binary variables", counts.len(), variables.len()),
                ));
            }
        }
    }
    if let Payload::MdmObservation { y, regressors, .. } = &item.payload {
        if !y.is_finite() || regressors.iter().any(|x| !x.is_finite()) {
            return Err(malformed(item, "observations must be finite"));
        }
    }
    Ok(())
}

/// Decide whether `item` may enter the system and, if so, which panel
/// absorbs which part.
pub fn admit_evidence(item: &EvidenceItem, sc: &StructuralConsensus) -> Result<Admission> {
    validate_item(item, sc)?;
    let owners = |vars: &[VariableId]| -> BTreeSet<PanelId> {
        vars.iter()
            .filter_map(|v| sc.owner(v.as_str()).cloned())
            .collect()
    };

    if let Payload::JointTable { variables, counts } = &item.payload {
        let owned = owners(variables);
        if owned != item.footprint {
            return Ok(Admission::reject(
                RejectionCode::FootprintMismatch,
                format!(
                    "table variables are owned by {} but the footprint declares {}",
                    join(&owned),
                    join(&item.footprint)
                ),
            ));
        }
        return Ok(split_joint_table(variables, counts, sc));
    }

    if item.footprint.len() > 1 {
        return Ok(Admission::reject(
            RejectionCode::ConfoundsParameters,
            format!(
                "the likelihood of `{}` depends jointly on the parameters of {}; absorbing it \
                 would make those panels' beliefs dependent",
                item.id,
                join(&item.footprint)
            ),
        ));
    }
    let panel = item.footprint.iter().next().expect("footprint is non-empty").clone();

    let (variable, update) = match &item.payload {
        Payload::BernoulliCounts {
            variable,
            row,
            successes,
            trials,
        } => (
            variable,
            PanelUpdate::BernoulliCounts {
                row: *row,
                successes: *successes,
                trials: *trials,
            },
        ),
        Payload::TreeCounts { variable, counts } => (
            variable,
            PanelUpdate::TreeCounts {
                counts: counts.clone(),
            },
        ),
        Payload::MdmObservation {
            variable,
            region,
            y,
            regressors,
        } => (
            variable,
            PanelUpdate::MdmObservation {
                region: *region,
                y: *y,
                regressors: regressors.clone(),
            },
        ),
        Payload::MomentUpdate {
            variable,
            time,
            moments,
        } => (
            variable,
            PanelUpdate::MomentUpdate {
                time: *time,
                moments: moments.clone(),
            },
        ),
        Payload::FunctionCounts {
            variables,
            successes,
            trials,
            function,
        } => {
            let owned = owners(variables);
            if owned != item.footprint {
                return Ok(Admission::reject(
                    RejectionCode::FootprintMismatch,
                    format!("`{function}` reads variables owned by {}", join(&owned)),
                ));
            }
            if variables.len() != 1 || sc.parents(variables[0].as_str()).next().is_some() {
                return Ok(Admission::reject(
                    RejectionCode::UnsupportedSplit,
                    format!("`{function}` is not a margin the panel can absorb"),
                ));
            }
            (
                &variables[0],
                PanelUpdate::BernoulliCounts {
                    row: 0,
                    successes: *successes,
                    trials: *trials,
                },
            )
        }
        Payload::JointTable { .. } => unreachable!("handled above"),
    };
    if sc.owner(variable.as_str()) != Some(&panel) {
        return Ok(Admission::reject(
            RejectionCode::FootprintMismatch,
            format!("`{variable}` is not owned by footprint panel `{panel}`"),
        ));
    }
    Ok(Admission::Admitted {
        routed: vec![Routed {
            panel,
            variable: variable.clone(),
            update,
        }],
    })
}

/// Conditional counts per variable given its parent, valid when the table
/// records every parent of every variable in it.
fn split_joint_table(variables: &[VariableId], counts: &[u64], sc: &StructuralConsensus) -> Admission {
    let k = variables.len();
    let pos = |id: &str| variables.iter().position(|v| v.as_str() == id);
    let mut parent_pos = Vec::with_capacity(k);
    for v in variables {
        let parents: Vec<&VariableId> = sc.parents(v.as_str()).collect();
        if let Some(missing) = parents.iter().find(|p| pos(p.as_str()).is_none()) {
            return Admission::reject(
                RejectionCode::NotAncestral,
                format!("`{v}` is recorded without its parent `{missing}`"),
            );
        }
        if parents.len() > 1 {
            return Admission::reject(
                RejectionCode::UnsupportedSplit,
                format!("`{v}` has several parents"),
            );
        }
        if sc.variable(v.as_str()).is_some_and(|d| d.regions != 1) {
            return Admission::reject(
                RejectionCode::UnsupportedSplit,
                format!("`{v}` is not a single binary variable"),
            );
        }
        parent_pos.push(parents.first().and_then(|p| pos(p.as_str())));
    }
    let bit = |cell: usize, i: usize| (cell >> (k - 1 - i)) & 1;
    let mut routed = Vec::new();
    for (i, v) in variables.iter().enumerate() {
        let owner = sc.owner(v.as_str()).expect("validated").clone();
        let rows = if parent_pos[i].is_some() { 2 } else { 1 };
        for row in 0..rows {
            let (mut s, mut n) = (0u64, 0u64);
            for (cell, &c) in counts.iter().enumerate() {
                if parent_pos[i].is_some_and(|p| bit(cell, p) != row) {
                    continue;
                }
                n += c;
                if bit(cell, i) == 1 {
                    s += c;
                }
            }
            routed.push(Routed {
                panel: owner.clone(),
                variable: v.clone(),
                update: PanelUpdate::BernoulliCounts {
                    row,
                    successes: s,
                    trials: n,
                },
            });
        }
    }
    Admission::Admitted { routed }
}

fn join<'a, I: IntoIterator<Item = &'a PanelId>>(ids: I) -> String {
    let v: Vec<&str> = ids.into_iter().map(|p| p.as_str()).collect();
    format!("{{{}}}", v.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ck::VariableDecl;

    fn sc() -> StructuralConsensus {
        StructuralConsensus {
            panels: vec!["G1".into(), "G2".into()],
            variables: vec![
                VariableDecl {
                    id: "Y1".into(),
                    owner: "G1".into(),
                    regions: 1,
                    time_indexed: false,
                },
                VariableDecl {
                    id: "Y2".into(),
                    owner: "G2".into(),
                    regions: 1,
                    time_indexed: false,
                },
            ],
            edges: vec![("Y1".into(), "Y2".into())],
            horizon: 1,
        }
    }

    fn item(footprint: &[&str], sampling: SamplingTag, payload: Payload) -> EvidenceItem {
        EvidenceItem {
            id: "x".into(),
            footprint: footprint.iter().map(|&p| p.into()).collect(),
            sampling,
            payload,
            decisions: vec![],
            design: None,
        }
    }

    #[test]
    fn exposure_counts_confound_the_panels() {
        let w = item(
            &["G1", "G2"],
            SamplingTag::DerivedFunction,
            Payload::FunctionCounts {
                function: "W = Y1 Y2".into(),
                variables: vec!["Y1".into(), "Y2".into()],
                successes: 5,
                trials: 100,
            },
        );
        match admit_evidence(&w, &sc()).unwrap() {
            Admission::Rejected { code, .. } => assert_eq!(code, RejectionCode::ConfoundsParameters),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn complete_table_splits_into_conditional_counts() {
        let t = item(
            &["G1", "G2"],
            SamplingTag::CompleteSample,
            Payload::JointTable {
                variables: vec!["Y1".into(), "Y2".into()],
                counts: vec![5, 45, 45, 5],
            },
        );
        let Admission::Admitted { routed } = admit_evidence(&t, &sc()).unwrap() else {
            panic!("rejected");
        };
        let counts: Vec<_> = routed
            .iter()
            .map(|r| match r.update {
                PanelUpdate::BernoulliCounts { row, successes, trials } => {
                    (r.panel.as_str(), row, successes, trials)
                }
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(counts, vec![("G1", 0, 50, 100), ("G2", 0, 45, 50), ("G2", 1, 5, 50)]);
    }

    #[test]
    fn table_without_parent_is_not_ancestral() {
        let t = item(
            &["G2"],
            SamplingTag::CompleteSample,
            Payload::JointTable {
                variables: vec!["Y2".into()],
                counts: vec![50, 50],
            },
        );
        assert!(matches!(
            admit_evidence(&t, &sc()).unwrap(),
            Admission::Rejected { code: RejectionCode::NotAncestral, .. }
        ));
    }

    #[test]
    fn single_margin_is_routed_whole() {
        let m = item(
            &["G1"],
            SamplingTag::SingleMargin,
            Payload::BernoulliCounts {
                variable: "Y1".into(),
                row: 0,
                successes: 3,
                trials: 10,
            },
        );
        let Admission::Admitted { routed } = admit_evidence(&m, &sc()).unwrap() else {
            panic!("rejected");
        };
        assert_eq!(routed.len(), 1);
        assert_eq!(routed[0].panel.as_str(), "G1");
    }

    #[test]
    fn wrong_owner_and_unknown_panel() {
        let m = item(
            &["G2"],
            SamplingTag::SingleMargin,
            Payload::BernoulliCounts {
                variable: "Y1".into(),
                row: 0,
                successes: 3,
                trials: 10,
            },
        );
        assert!(matches!(
            admit_evidence(&m, &sc()).unwrap(),
            Admission::Rejected { code: RejectionCode::FootprintMismatch, .. }
        ));
        let mut bad = m.clone();
        bad.footprint = ["G9".into()].into();
        assert!(matches!(admit_evidence(&bad, &sc()), Err(IdssError::UnknownPanel(_))));
    }

    #[test]
    fn malformed_counts() {
        let m = item(
            &["G1"],
            SamplingTag::SingleMargin,
            Payload::BernoulliCounts {
                variable: "Y1".into(),
                row: 0,
                successes: 11,
                trials: 10,
            },
        );
        assert!(matches!(admit_evidence(&m, &sc()), Err(IdssError::Evidence { .. })));
    }
}
