//! Mechanical check that the declared common-knowledge conditions imply
//! panel independence and local updating.
//!
//! For each panel `i` the ground alphabet is `θ_1..θ_m, I_0, I_*, I_ii, I_+`
//! with `I_ii` a function of `I_*` and both `I_0` and `I_*` functions of
//! `I_+`. The panel's declared conditions become axioms and the closure is
//! searched for
//!
//! - `θ_i ⊥ θ_i⁻ | I_+`
//! - `θ_i ⊥ I_+ | I_0, I_ii`

use std::collections::{BTreeMap, BTreeSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ids::PanelId;
use crate::par::{map_indexed, Strategy};

use super::closure::{
    semigraphoid_closure, Alphabet, Closure, Dependencies, FunctionalDependency, Statement,
    SymbolSet, DEFAULT_DEPTH_BOUND,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// `I_+ ⊥ θ | I_0, I_*`
    Delegable,
    /// `I_ii ⊥ θ_i⁻ | I_0, θ_i`
    SeparatelyInformed,
    /// `I_* ⊥ θ_i | I_0, I_ii, θ_i⁻`
    Cutting,
    /// `θ_i ⊥ θ_i⁻ | I_0`
    CommonlySeparated,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::Delegable,
        Condition::SeparatelyInformed,
        Condition::Cutting,
        Condition::CommonlySeparated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Delegable => "delegable",
            Condition::SeparatelyInformed => "separately-informed",
            Condition::Cutting => "cutting",
            Condition::CommonlySeparated => "commonly-separated",
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Conditions each panel has put into the common-knowledge class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(transparent)]
pub struct SoundnessDeclaration {
    pub conditions: BTreeMap<PanelId, BTreeSet<Condition>>,
}

impl SoundnessDeclaration {
    /// Every panel declares all four conditions.
    pub fn complete(panels: &[PanelId]) -> Self {
        Self {
            conditions: panels
                .iter()
                .map(|p| (p.clone(), Condition::ALL.into_iter().collect()))
                .collect(),
        }
    }

    pub fn without(mut self, panel: &str, condition: Condition) -> Self {
        if let Some(set) = self.conditions.get_mut(panel) {
            set.remove(&condition);
        }
        self
    }

    pub fn declared(&self, panel: &str) -> BTreeSet<Condition> {
        self.conditions.get(panel).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub statement: String,
    pub derived: bool,
    /// Numbered proof lines when derived.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub proof: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelVerdict {
    pub panel: PanelId,
    pub derivable: bool,
    pub targets: Vec<TargetResult>,
    pub missing: Vec<Condition>,
    pub closure_size: usize,
    /// False when the depth bound stopped the search early.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub derivable: bool,
    pub depth_bound: usize,
    pub panels: Vec<PanelVerdict>,
    /// Undeclared conditions of panels whose targets failed.
    pub missing: Vec<(PanelId, Condition)>,
}

struct Symbols {
    theta: Vec<SymbolSet>,
    i0: SymbolSet,
    istar: SymbolSet,
    iii: SymbolSet,
    iplus: SymbolSet,
}

fn symbols(panels: &[PanelId], target: usize) -> Result<(Alphabet, Symbols)> {
    let mut names: Vec<String> = panels.iter().map(|p| format!("θ[{p}]")).collect();
    let own = format!("I[{}]", panels[target]);
    names.extend(["I0".to_owned(), "I*".to_owned(), own.clone(), "I+".to_owned()]);
    let alphabet = Alphabet::new(names)?;
    let theta = panels
        .iter()
        .map(|p| alphabet.symbol(&format!("θ[{p}]")))
        .collect::<Result<Vec<_>>>()?;
    let s = Symbols {
        theta,
        i0: alphabet.symbol("I0")?,
        istar: alphabet.symbol("I*")?,
        iii: alphabet.symbol(&own)?,
        iplus: alphabet.symbol("I+")?,
    };
    Ok((alphabet, s))
}

fn condition_statement(c: Condition, s: &Symbols, i: usize) -> Statement {
    let all: SymbolSet = s.theta.iter().fold(0, |a, b| a | b);
    let own = s.theta[i];
    let others = all & !own;
    match c {
        Condition::Delegable => Statement::new(s.iplus, all, s.i0 | s.istar),
        Condition::SeparatelyInformed => Statement::new(s.iii, others, s.i0 | own),
        Condition::Cutting => Statement::new(s.istar, own, s.i0 | s.iii | others),
        Condition::CommonlySeparated => Statement::new(own, others, s.i0),
    }
}

/// Closure for panel `i` under the given declared conditions.
pub fn panel_closure(
    panels: &[PanelId],
    i: usize,
    declared: &BTreeSet<Condition>,
    bound: usize,
) -> Result<(Closure, [Statement; 2])> {
    let (alphabet, s) = symbols(panels, i)?;
    let deps = Dependencies::new(vec![
        FunctionalDependency {
            dependent: s.iii,
            determinants: s.istar,
        },
        FunctionalDependency {
            dependent: s.i0,
            determinants: s.iplus,
        },
        FunctionalDependency {
            dependent: s.istar,
            determinants: s.iplus,
        },
    ]);
    let axioms: Vec<Statement> = declared.iter().map(|&c| condition_statement(c, &s, i)).collect();
    let own = s.theta[i];
    let others = s.theta.iter().fold(0, |a, b| a | b) & !own;
    let targets = [
        Statement::new(own, others, s.iplus),
        Statement::new(own, s.iplus, s.i0 | s.iii),
    ];
    Ok((semigraphoid_closure(&alphabet, &deps, &axioms, bound)?, targets))
}

fn verify_panel(panels: &[PanelId], i: usize, declared: &BTreeSet<Condition>, bound: usize) -> Result<PanelVerdict> {
    let (cl, targets) = panel_closure(panels, i, declared, bound)?;
    let results: Vec<TargetResult> = targets
        .iter()
        .map(|t| {
            let statement = cl.alphabet.render_statement(t);
            match cl.find(t.a, t.b, t.c) {
                Some(idx) => TargetResult {
                    statement,
                    derived: true,
                    proof: cl.proof_lines(idx),
                },
                None => TargetResult {
                    statement,
                    derived: false,
                    proof: vec![],
                },
            }
        })
        .collect();
    let derivable = results.iter().all(|r| r.derived);
    let missing = if derivable {
        vec![]
    } else {
        Condition::ALL.into_iter().filter(|c| !declared.contains(c)).collect()
    };
    Ok(PanelVerdict {
        panel: panels[i].clone(),
        derivable,
        targets: results,
        missing,
        closure_size: cl.len(),
        complete: cl.complete,
    })
}

/// Check every panel's targets. Panels are independent, so the work is
/// spread under `strategy`.
pub fn verify_soundness_with(
    decl: &SoundnessDeclaration,
    panels: &[PanelId],
    bound: usize,
    strategy: Strategy,
) -> Result<Verdict> {
    if panels.len() <= 1 {
        return Ok(Verdict {
            derivable: true,
            depth_bound: bound,
            panels: panels
                .iter()
                .map(|p| PanelVerdict {
                    panel: p.clone(),
                    derivable: true,
                    targets: vec![],
                    missing: vec![],
                    closure_size: 0,
                    complete: true,
                })
                .collect(),
            missing: vec![],
        });
    }
    let verdicts = map_indexed(strategy, panels.len(), |i| {
        verify_panel(panels, i, &decl.declared(panels[i].as_str()), bound)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let missing = verdicts
        .iter()
        .flat_map(|v| v.missing.iter().map(move |&c| (v.panel.clone(), c)))
        .collect();
    Ok(Verdict {
        derivable: verdicts.iter().all(|v| v.derivable),
        depth_bound: bound,
        panels: verdicts,
        missing,
    })
}

pub fn verify_soundness(decl: &SoundnessDeclaration, panels: &[PanelId]) -> Result<Verdict> {
    verify_soundness_with(decl, panels, DEFAULT_DEPTH_BOUND, Strategy::default())
}

/// Panels named `G1..Gm`.
pub fn numbered_panels(m: usize) -> Vec<PanelId> {
    (1..=m).map(|i| PanelId(format!("G{i}"))).collect()
}
