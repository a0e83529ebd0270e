//! Autonomous panels. Each panel owns one variable block and its parameter
//! block, absorbs only the evidence routed to it, and answers the engine's
//! requests for moment expansions.

pub mod bernoulli;
pub mod emulator;
pub mod mdm;
pub mod staged_tree;
pub mod static_moments;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::admissibility::PanelUpdate;
use crate::error::{IdssError, Result};
use crate::ids::{DecisionId, PanelId, VariableId};

pub use bernoulli::{BernoulliState, BetaRow};
pub use emulator::{EmulatorRegion, EmulatorState};
pub use mdm::{Evolution, MdmRegion, MdmState, Regressors};
pub use staged_tree::{Dirichlet, StagedTree, StagedTreeState, TreeEdge, TreeVertex};
pub use static_moments::StaticMomentsState;

/// Coefficients of a pending message term on one variable at one slot:
/// `lin . E[Y] + sum_ij quad_ij E[Y_i Y_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub lin: DVector<f64>,
    pub quad: DMatrix<f64>,
}

impl Term {
    pub fn zeros(r: usize) -> Self {
        Self {
            lin: DVector::zeros(r),
            quad: DMatrix::zeros(r, r),
        }
    }

    pub fn len(&self) -> usize {
        self.lin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lin.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.lin.iter().chain(self.quad.iter()).all(|&x| x == 0.0)
    }

    pub fn add(&mut self, other: &Term) -> Result<()> {
        if other.len() != self.len() {
            return Err(IdssError::shape("pending terms over different region counts"));
        }
        self.lin += &other.lin;
        self.quad += &other.quad;
        Ok(())
    }
}

/// A panel's answer to a pending term: a constant plus, when the variable
/// has a parent, a pending term on that parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub constant: f64,
    pub parent: Option<Term>,
}

/// Per-decision panel states. `state` applies to every decision without an
/// entry in `states`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct DecisionStates<S> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<S>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub states: BTreeMap<DecisionId, S>,
}

impl<S> Default for DecisionStates<S> {
    fn default() -> Self {
        Self {
            state: None,
            states: BTreeMap::new(),
        }
    }
}

impl<S: Clone> DecisionStates<S> {
    pub fn shared(state: S) -> Self {
        Self {
            state: Some(state),
            states: BTreeMap::new(),
        }
    }

    pub fn get(&self, decision: &str) -> Option<&S> {
        self.states.get(decision).or(self.state.as_ref())
    }

    fn all(&self) -> impl Iterator<Item = &S> {
        self.state.iter().chain(self.states.values())
    }

    /// States an update applies to. An empty decision list means every
    /// stored state; a decision that currently reads the shared state gets
    /// its own copy first.
    fn targets(&mut self, decisions: &[DecisionId], default: impl Fn() -> S) -> Vec<&mut S> {
        if decisions.is_empty() {
            if self.state.is_none() && self.states.is_empty() {
                self.state = Some(default());
            }
            return self.state.iter_mut().chain(self.states.values_mut()).collect();
        }
        for d in decisions {
            if !self.states.contains_key(d) {
                let base = self.state.clone().unwrap_or_else(&default);
                self.states.insert(d.clone(), base);
            }
        }
        self.states
            .iter_mut()
            .filter(|(d, _)| decisions.contains(d))
            .map(|(_, s)| s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PanelModel {
    Bernoulli {
        #[serde(flatten)]
        states: DecisionStates<BernoulliState>,
    },
    StagedTree {
        tree: StagedTree,
        #[serde(flatten)]
        states: DecisionStates<StagedTreeState>,
    },
    Mdm {
        regressors: Regressors,
        #[serde(flatten)]
        states: DecisionStates<MdmState>,
    },
    Emulator {
        #[serde(flatten)]
        states: DecisionStates<EmulatorState>,
    },
    StaticMoments {
        #[serde(flatten)]
        states: DecisionStates<StaticMomentsState>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Panel {
    pub id: PanelId,
    /// The variable this panel delivers.
    pub variable: VariableId,
    #[serde(flatten)]
    pub model: PanelModel,
}

/// A panel's beliefs under one decision, resolved and owned.
#[derive(Debug, Clone, PartialEq)]
pub enum PanelView {
    Bernoulli(BernoulliState),
    StagedTree(StagedTree, StagedTreeState),
    Mdm(Regressors, MdmState),
    Emulator(EmulatorState),
    StaticMoments(StaticMomentsState),
}

/// What a panel needs to know about its place in the structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub regions: usize,
    pub parent_regions: Option<usize>,
    /// Number of time slots the variable occupies.
    pub slots: u32,
}

fn bernoulli_default(has_parent: bool) -> BernoulliState {
    BernoulliState {
        rows: vec![BetaRow::uniform(); if has_parent { 2 } else { 1 }],
    }
}

impl Panel {
    pub fn kind(&self) -> &'static str {
        match self.model {
            PanelModel::Bernoulli { .. } => "bernoulli",
            PanelModel::StagedTree { .. } => "staged-tree",
            PanelModel::Mdm { .. } => "mdm",
            PanelModel::Emulator { .. } => "emulator",
            PanelModel::StaticMoments { .. } => "static-moments",
        }
    }

    fn missing(&self, decision: &str) -> IdssError {
        IdssError::Delivery {
            panel: self.id.clone(),
            variable: self.variable.clone(),
            reason: format!("no state declared for decision `{decision}`"),
        }
    }

    /// Beliefs under `decision`, or `None` when the panel declares none.
    /// Conjugate panels fall back to the uniform prior.
    pub fn view(&self, decision: &str, has_parent: bool) -> Result<Option<PanelView>> {
        Ok(match &self.model {
            PanelModel::Bernoulli { states } => Some(PanelView::Bernoulli(
                states
                    .get(decision)
                    .cloned()
                    .unwrap_or_else(|| bernoulli_default(has_parent)),
            )),
            PanelModel::StagedTree { tree, states } => Some(PanelView::StagedTree(
                tree.clone(),
                states.get(decision).cloned().unwrap_or_default(),
            )),
            PanelModel::Mdm { regressors, states } => states
                .get(decision)
                .map(|s| PanelView::Mdm(regressors.clone(), s.clone())),
            PanelModel::Emulator { states } => states.get(decision).cloned().map(PanelView::Emulator),
            PanelModel::StaticMoments { states } => {
                states.get(decision).cloned().map(PanelView::StaticMoments)
            }
        })
    }

    /// Like [`Panel::view`] but failing when no state exists.
    pub fn require_view(&self, decision: &str, has_parent: bool) -> Result<PanelView> {
        self.view(decision, has_parent)?
            .ok_or_else(|| self.missing(decision))
    }

    /// Beliefs after the panel's variable has been set to `value`.
    pub fn intervened_view(&self, value: u8, has_parent: bool) -> Result<PanelView> {
        match &self.model {
            PanelModel::Bernoulli { .. } if value <= 1 => Ok(PanelView::Bernoulli(
                bernoulli_default(has_parent).fixed(f64::from(value)),
            )),
            _ => Err(IdssError::Delivery {
                panel: self.id.clone(),
                variable: self.variable.clone(),
                reason: format!("cannot set a {} variable to {value}", self.kind()),
            }),
        }
    }

    pub fn validate(&self, placement: Placement) -> Result<()> {
        let wrap = |e: IdssError| IdssError::Delivery {
            panel: self.id.clone(),
            variable: self.variable.clone(),
            reason: e.to_string(),
        };
        let has_parent = placement.parent_regions.is_some();
        let check = |view: PanelView| view.validate(placement).map_err(wrap);
        match &self.model {
            PanelModel::Bernoulli { states } => {
                if states.state.is_none() && states.states.is_empty() {
                    check(PanelView::Bernoulli(bernoulli_default(has_parent)))?;
                }
                states.all().try_for_each(|s| check(PanelView::Bernoulli(s.clone())))
            }
            PanelModel::StagedTree { tree, states } => {
                tree.validate().map_err(wrap)?;
                check(PanelView::StagedTree(tree.clone(), StagedTreeState::default()))?;
                states
                    .all()
                    .try_for_each(|s| check(PanelView::StagedTree(tree.clone(), s.clone())))
            }
            PanelModel::Mdm { regressors, states } => states
                .all()
                .try_for_each(|s| check(PanelView::Mdm(regressors.clone(), s.clone()))),
            PanelModel::Emulator { states } => states
                .all()
                .try_for_each(|s| check(PanelView::Emulator(s.clone()))),
            PanelModel::StaticMoments { states } => states
                .all()
                .try_for_each(|s| check(PanelView::StaticMoments(s.clone()))),
        }
    }

    /// Decisions with an explicitly declared state.
    pub fn declared_decisions(&self) -> Vec<&DecisionId> {
        match &self.model {
            PanelModel::Bernoulli { states } => states.states.keys().collect(),
            PanelModel::StagedTree { states, .. } => states.states.keys().collect(),
            PanelModel::Mdm { states, .. } => states.states.keys().collect(),
            PanelModel::Emulator { states } => states.states.keys().collect(),
            PanelModel::StaticMoments { states } => states.states.keys().collect(),
        }
    }

    /// Absorb an update routed to this panel. Either every targeted state
    /// takes the update or none does.
    pub fn absorb(&mut self, update: &PanelUpdate, decisions: &[DecisionId], has_parent: bool) -> Result<()> {
        let mut next = self.model.clone();
        let kind = self.kind();
        let mismatch = || IdssError::invalid(format!("{} cannot absorb {}", kind, update.kind()));
        match (&mut next, update) {
            (
                PanelModel::Bernoulli { states },
                PanelUpdate::BernoulliCounts {
                    row,
                    successes,
                    trials,
                },
            ) => {
                for s in states.targets(decisions, || bernoulli_default(has_parent)) {
                    s.update(*row, *successes, *trials)?;
                }
            }
            (PanelModel::StagedTree { tree, states }, PanelUpdate::TreeCounts { counts }) => {
                for s in states.targets(decisions, StagedTreeState::default) {
                    tree.update(s, counts)?;
                }
            }
            (
                PanelModel::Mdm { states, .. },
                PanelUpdate::MdmObservation {
                    region,
                    y,
                    regressors,
                },
            ) => {
                if states.state.is_none() && states.states.is_empty() {
                    return Err(self.missing("any"));
                }
                let f = DVector::from_column_slice(regressors);
                for s in states.targets(decisions, empty_mdm_state) {
                    let n = s.regions.len();
                    s.regions
                        .get_mut(*region)
                        .ok_or_else(|| IdssError::invalid(format!("region {region} of {n}")))?
                        .filter_step(*y, &f)?;
                }
            }
            (PanelModel::StaticMoments { states }, PanelUpdate::MomentUpdate { time, moments }) => {
                if states.state.is_none() && states.states.is_empty() {
                    return Err(self.missing("any"));
                }
                for s in states.targets(decisions, || StaticMomentsState { moments: vec![] }) {
                    let i = (*time).max(1) as usize - 1;
                    if i < s.moments.len() {
                        s.moments[i] = moments.clone();
                    } else if i == s.moments.len() {
                        s.moments.push(moments.clone());
                    } else {
                        return Err(IdssError::invalid(format!("moment update for time {time} leaves a gap")));
                    }
                }
            }
            _ => return Err(mismatch()),
        }
        self.model = next;
        Ok(())
    }
}

fn empty_mdm_state() -> MdmState {
    MdmState { regions: vec![] }
}

impl PanelView {
    pub fn validate(&self, p: Placement) -> Result<()> {
        let has_parent = p.parent_regions.is_some();
        match self {
            PanelView::Bernoulli(s) => {
                if p.regions != 1 || p.parent_regions.is_some_and(|r| r != 1) {
                    return Err(IdssError::shape("Bernoulli variables and parents have one region"));
                }
                s.validate(has_parent)
            }
            PanelView::StagedTree(tree, s) => {
                if has_parent || p.regions != 1 {
                    return Err(IdssError::Structure(
                        "staged-tree variables are single-region roots".into(),
                    ));
                }
                tree.validate_state(s)?;
                s.stages.values().try_for_each(Dirichlet::validate)
            }
            PanelView::Mdm(reg, s) => s.validate(reg, p.parent_regions, p.regions),
            PanelView::Emulator(s) => s.validate(p.regions, p.parent_regions),
            PanelView::StaticMoments(s) => {
                if has_parent {
                    return Err(IdssError::Structure("static-moments variables take no parent".into()));
                }
                s.validate(p.regions, p.slots)
            }
        }
    }

    /// Substitute this variable's moments at slot `t` into `term`.
    pub fn expand(&self, t: u32, parent_regions: Option<usize>, term: &Term) -> Result<Expansion> {
        match self {
            PanelView::Bernoulli(s) => s.expand(term, parent_regions.is_some()),
            PanelView::StagedTree(tree, s) => tree.expand(s, term),
            PanelView::Mdm(reg, s) => s.expand(reg, t, parent_regions, term),
            PanelView::Emulator(s) => s.expand(parent_regions, term),
            PanelView::StaticMoments(s) => s.expand(t, term),
        }
    }
}
