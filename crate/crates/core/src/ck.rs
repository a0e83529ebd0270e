//! The common-knowledge bundle: decision space, utility family and the
//! structural consensus every panel has agreed to.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::causal::CausalDeclaration;
use crate::error::{IdssError, Result};
use crate::ids::{DecisionId, PanelId, VariableId};

/// Tolerance on the criterion-weight normalisation.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Decision {
    pub id: DecisionId,
    #[serde(default)]
    pub label: String,
    /// Set a variable of a causal structure to a fixed level. Absent for
    /// the observational baseline and for policies that are specified
    /// directly in each panel's per-decision state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<Intervention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Intervention {
    pub variable: VariableId,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DecisionSpace {
    pub decisions: Vec<Decision>,
    /// The routine comparator every other policy can be extrapolated from.
    pub baseline: DecisionId,
}

impl DecisionSpace {
    pub fn get(&self, id: &str) -> Option<&Decision> {
        self.decisions.iter().find(|d| d.id.as_str() == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.decisions.iter().position(|d| d.id.as_str() == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &DecisionId> {
        self.decisions.iter().map(|d| &d.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct VariableDecl {
    pub id: VariableId,
    pub owner: PanelId,
    #[serde(default = "one")]
    pub regions: usize,
    #[serde(default = "yes")]
    pub time_indexed: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// The agreed DAG over variables together with the panel-ownership
/// partition and the time horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StructuralConsensus {
    pub panels: Vec<PanelId>,
    pub variables: Vec<VariableDecl>,
    /// `(parent, child)` pairs.
    #[serde(default)]
    pub edges: Vec<(VariableId, VariableId)>,
    #[serde(default = "one_u32")]
    pub horizon: u32,
}

fn one_u32() -> u32 {
    1
}

impl StructuralConsensus {
    pub fn variable(&self, id: &str) -> Option<&VariableDecl> {
        self.variables.iter().find(|v| v.id.as_str() == id)
    }

    pub fn require_variable(&self, id: &VariableId) -> Result<&VariableDecl> {
        self.variable(id.as_str())
            .ok_or_else(|| IdssError::UnknownVariable(id.clone()))
    }

    pub fn owner(&self, id: &str) -> Option<&PanelId> {
        self.variable(id).map(|v| &v.owner)
    }

    pub fn parents<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a VariableId> + 'a {
        self.edges
            .iter()
            .filter(move |(_, c)| c.as_str() == id)
            .map(|(p, _)| p)
    }

    pub fn children<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a VariableId> + 'a {
        self.edges
            .iter()
            .filter(move |(p, _)| p.as_str() == id)
            .map(|(_, c)| c)
    }

    pub fn has_panel(&self, id: &str) -> bool {
        self.panels.iter().any(|p| p.as_str() == id)
    }

    pub fn owned_by<'a>(&'a self, panel: &'a str) -> impl Iterator<Item = &'a VariableDecl> + 'a {
        self.variables
            .iter()
            .filter(move |v| v.owner.as_str() == panel)
    }

    /// Time slot a variable occupies at horizon time `t`; variables that are
    /// not time indexed live in slot 1 only.
    pub fn slot(&self, decl: &VariableDecl, t: u32) -> u32 {
        if decl.time_indexed {
            t
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Marginal {
    /// `-gamma * y^2`, a disutility with `gamma > 0`.
    Quadratic { gamma: f64 },
    /// `1 - exp(-c y)`.
    Exponential { c: f64 },
    /// `a + b y`, optionally declared on a bounded range.
    Affine {
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range: Option<(f64, f64)>,
    },
}

impl Marginal {
    pub fn evaluate(&self, y: f64) -> f64 {
        match *self {
            Marginal::Quadratic { gamma } => -gamma * y * y,
            Marginal::Exponential { c } => 1.0 - (-c * y).exp(),
            Marginal::Affine { a, b, .. } => a + b * y,
        }
    }

    fn parameters(&self) -> Vec<f64> {
        match *self {
            Marginal::Quadratic { gamma } => vec![gamma],
            Marginal::Exponential { c } => vec![c],
            Marginal::Affine { a, b, range } => {
                let mut p = vec![a, b];
                if let Some((lo, hi)) = range {
                    p.extend([lo, hi]);
                }
                p
            }
        }
    }
}

/// The second factor of a product attribute `Y * X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Factor {
    pub variable: VariableId,
    #[serde(default)]
    pub region: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct UtilityTerm {
    pub variable: VariableId,
    #[serde(default = "one_u32")]
    pub time: u32,
    #[serde(default)]
    pub region: usize,
    pub weight: f64,
    /// Optional decision-specific criterion weights.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub weight_by_decision: BTreeMap<DecisionId, f64>,
    pub marginal: Marginal,
    /// Makes the attribute the product of `variable` and this factor. Only
    /// affine marginals of a variable times its parent, or times a variable
    /// it shares no ancestry with, are supported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub with: Option<Factor>,
}

impl UtilityTerm {
    pub fn label(&self) -> String {
        match &self.with {
            None => format!("{}@t{}r{}", self.variable, self.time, self.region),
            Some(f) => format!(
                "{}*{}@t{}r{}.{}",
                self.variable, f.variable, self.time, self.region, f.region
            ),
        }
    }
}

/// A linear combination of value-independent marginal utilities, one term
/// per (variable, time, region) attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct UtilitySpec {
    pub terms: Vec<UtilityTerm>,
}

impl UtilitySpec {
    /// Criterion weights in effect under `decision`.
    pub fn weights_for(&self, decision: &str) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| t.weight_by_decision.get(decision).copied().unwrap_or(t.weight))
            .collect()
    }

    /// Collapse per-attribute weights into one weight per owning panel.
    pub fn panel_weights(
        &self,
        decision: &str,
        sc: &StructuralConsensus,
    ) -> BTreeMap<PanelId, f64> {
        let mut out = BTreeMap::new();
        for (term, k) in self.terms.iter().zip(self.weights_for(decision)) {
            if let Some(owner) = sc.owner(term.variable.as_str()) {
                *out.entry(owner.clone()).or_insert(0.0) += k;
            }
        }
        out
    }

    /// Copy of the spec with the default weights replaced.
    pub fn with_weights(&self, weights: &[f64]) -> Result<UtilitySpec> {
        if weights.len() != self.terms.len() {
            return Err(IdssError::shape(format!(
                "{} weights for {} utility terms",
                weights.len(),
                self.terms.len()
            )));
        }
        let mut spec = self.clone();
        for (term, &k) in spec.terms.iter_mut().zip(weights) {
            term.weight = k;
            term.weight_by_decision.clear();
        }
        Ok(spec)
    }
}

/// Everything the panels have agreed in common.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkBundle {
    pub decisions: DecisionSpace,
    pub structure: StructuralConsensus,
    pub utility: UtilitySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub causal: Option<CausalDeclaration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subjects: Vec<String>,
}

impl Violation {
    pub(crate) fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            message: message.into(),
            observed: None,
            subjects: Vec::new(),
        }
    }

    fn observed(mut self, value: f64) -> Self {
        self.observed = Some(value);
        self
    }

    pub(crate) fn subjects<I, S>(mut self, subjects: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        self.subjects = subjects.into_iter().map(|s| s.to_string()).collect();
        self
    }
}

/// Every invariant violation of the bundle. An empty report means the
/// bundle is valid.
pub fn validate_ck(ck: &CkBundle) -> Vec<Violation> {
    let mut out = Vec::new();
    validate_decisions(ck, &mut out);
    validate_structure(&ck.structure, &mut out);
    validate_utility(ck, &mut out);
    out
}

fn validate_decisions(ck: &CkBundle, out: &mut Vec<Violation>) {
    let ds = &ck.decisions;
    if ds.decisions.is_empty() {
        out.push(Violation::new("empty-decisions", "the decision space is empty"));
    }
    let mut seen = BTreeSet::new();
    for d in &ds.decisions {
        if !seen.insert(d.id.as_str()) {
            out.push(
                Violation::new("duplicate-decision", format!("decision `{}` declared twice", d.id))
                    .subjects([&d.id]),
            );
        }
    }
    if !ds.decisions.is_empty() && ds.get(ds.baseline.as_str()).is_none() {
        out.push(
            Violation::new(
                "baseline-missing",
                format!("baseline `{}` is not a declared decision", ds.baseline),
            )
            .subjects([&ds.baseline]),
        );
    }
    for d in &ds.decisions {
        let Some(iv) = &d.intervention else { continue };
        if ck.structure.variable(iv.variable.as_str()).is_none() {
            out.push(
                Violation::new(
                    "unknown-variable",
                    format!("decision `{}` intervenes on unknown `{}`", d.id, iv.variable),
                )
                .subjects([&iv.variable]),
            );
        }
        let covered = ck
            .causal
            .as_ref()
            .is_some_and(|c| c.covers(iv.variable.as_str()));
        if !covered {
            out.push(
                Violation::new(
                    "intervention-undeclared",
                    format!(
                        "decision `{}` sets `{}` but no causal declaration covers it",
                        d.id, iv.variable
                    ),
                )
                .subjects([&d.id]),
            );
        }
    }
}

fn validate_structure(sc: &StructuralConsensus, out: &mut Vec<Violation>) {
    let mut panels = BTreeSet::new();
    for p in &sc.panels {
        if !panels.insert(p.as_str()) {
            out.push(
                Violation::new("duplicate-panel", format!("panel `{p}` declared twice")).subjects([p]),
            );
        }
    }
    let mut vars = BTreeSet::new();
    for v in &sc.variables {
        if !vars.insert(v.id.as_str()) {
            out.push(
                Violation::new("duplicate-variable", format!("variable `{}` declared twice", v.id))
                    .subjects([&v.id]),
            );
        }
        if !panels.contains(v.owner.as_str()) {
            out.push(
                Violation::new(
                    "unknown-owner",
                    format!("variable `{}` is owned by undeclared panel `{}`", v.id, v.owner),
                )
                .subjects([&v.owner]),
            );
        }
        if v.regions == 0 {
            out.push(
                Violation::new("regions", format!("variable `{}` has no regions", v.id))
                    .subjects([&v.id]),
            );
        }
    }
    if sc.horizon == 0 {
        out.push(Violation::new("horizon", "the time horizon must be at least 1"));
    }
    let mut edges_ok = true;
    for (p, c) in &sc.edges {
        for end in [p, c] {
            if !vars.contains(end.as_str()) {
                edges_ok = false;
                out.push(
                    Violation::new("unknown-variable", format!("edge endpoint `{end}` is undeclared"))
                        .subjects([end]),
                );
            }
        }
    }
    if edges_ok {
        if let Some(cycle) = find_cycle(sc) {
            out.push(
                Violation::new("cycle", format!("edges form a cycle through {}", cycle.join(", ")))
                    .subjects(cycle),
            );
        }
    }
}

/// The undirected component of `id` in the structure, as its set of
/// variables.
pub fn component<'a>(sc: &'a StructuralConsensus, id: &'a str) -> BTreeSet<&'a str> {
    let mut seen = BTreeSet::from([id]);
    let mut stack = vec![id];
    while let Some(v) = stack.pop() {
        for (p, c) in &sc.edges {
            for (a, b) in [(p.as_str(), c.as_str()), (c.as_str(), p.as_str())] {
                if a == v && seen.insert(b) {
                    stack.push(b);
                }
            }
        }
    }
    seen
}

fn validate_factor(sc: &StructuralConsensus, term: &UtilityTerm, f: &Factor, label: &str, out: &mut Vec<Violation>) {
    let Some(decl) = sc.variable(f.variable.as_str()) else {
        out.push(
            Violation::new("unknown-variable", format!("utility term `{label}` multiplies an undeclared variable"))
                .subjects([&f.variable]),
        );
        return;
    };
    if f.region >= decl.regions {
        out.push(
            Violation::new(
                "region-out-of-range",
                format!("utility term `{label}`: `{}` has {} regions", decl.id, decl.regions),
            )
            .subjects([label]),
        );
    }
    if !matches!(term.marginal, Marginal::Affine { .. }) {
        out.push(
            Violation::new("unsupported-interaction", format!("product term `{label}` needs an affine marginal"))
                .subjects([label]),
        );
    }
    let is_parent = sc.parents(term.variable.as_str()).any(|p| *p == f.variable);
    if !is_parent && component(sc, term.variable.as_str()).contains(f.variable.as_str()) {
        out.push(
            Violation::new(
                "unsupported-interaction",
                format!(
                    "product term `{label}`: `{}` must be the parent of `{}` or share no ancestry with it",
                    f.variable, term.variable
                ),
            )
            .subjects([label]),
        );
    }
}

fn validate_utility(ck: &CkBundle, out: &mut Vec<Violation>) {
    let sc = &ck.structure;
    let spec = &ck.utility;
    if spec.terms.is_empty() {
        out.push(Violation::new("empty-utility", "the utility has no terms"));
    }
    for term in &spec.terms {
        let label = term.label();
        match sc.variable(term.variable.as_str()) {
            None => out.push(
                Violation::new(
                    "unknown-variable",
                    format!("utility term `{label}` names an undeclared variable"),
                )
                .subjects([&term.variable]),
            ),
            Some(decl) => {
                let max_t = if decl.time_indexed { sc.horizon } else { 1 };
                if term.time == 0 || term.time > max_t {
                    out.push(
                        Violation::new(
                            "time-out-of-range",
                            format!("utility term `{label}` lies outside 1..={max_t}"),
                        )
                        .subjects([&label]),
                    );
                }
                if term.region >= decl.regions {
                    out.push(
                        Violation::new(
                            "region-out-of-range",
                            format!("utility term `{label}`: `{}` has {} regions", decl.id, decl.regions),
                        )
                        .subjects([&label]),
                    );
                }
            }
        }
        let weights = std::iter::once(term.weight).chain(term.weight_by_decision.values().copied());
        for k in weights {
            if !(k.is_finite() && k > 0.0) {
                out.push(
                    Violation::new(
                        "weight-nonpositive",
                        format!("utility term `{label}` has weight {k}"),
                    )
                    .observed(k)
                    .subjects([&label]),
                );
            }
        }
        for d in term.weight_by_decision.keys() {
            if ck.decisions.get(d.as_str()).is_none() {
                out.push(
                    Violation::new(
                        "unknown-decision",
                        format!("utility term `{label}` overrides weight for unknown `{d}`"),
                    )
                    .subjects([d]),
                );
            }
        }
        validate_marginal(&label, &term.marginal, out);
        if let Some(f) = &term.with {
            validate_factor(sc, term, f, &label, out);
        }
    }
    if spec.terms.is_empty() {
        return;
    }
    let default_sum: f64 = spec.terms.iter().map(|t| t.weight).sum();
    if (default_sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        out.push(
            Violation::new("weights-sum", format!("criterion weights sum to {default_sum}"))
                .observed(default_sum),
        );
    }
    for d in &ck.decisions.decisions {
        if spec.terms.iter().all(|t| t.weight_by_decision.is_empty()) {
            break;
        }
        let sum: f64 = spec.weights_for(d.id.as_str()).iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE && sum != default_sum {
            out.push(
                Violation::new(
                    "weights-sum",
                    format!("criterion weights under `{}` sum to {sum}", d.id),
                )
                .observed(sum)
                .subjects([&d.id]),
            );
        }
    }
}

fn validate_marginal(label: &str, marginal: &Marginal, out: &mut Vec<Violation>) {
    if marginal.parameters().iter().any(|p| !p.is_finite()) {
        out.push(
            Violation::new(
                "nonfinite-parameter",
                format!("utility term `{label}` has a non-finite marginal parameter"),
            )
            .subjects([label]),
        );
        return;
    }
    match *marginal {
        Marginal::Quadratic { gamma } if gamma <= 0.0 => out.push(
            Violation::new("quadratic-gamma", format!("utility term `{label}` has gamma {gamma}"))
                .observed(gamma)
                .subjects([label]),
        ),
        Marginal::Exponential { c } if c <= 0.0 => out.push(
            Violation::new("exponential-c", format!("utility term `{label}` has c {c}"))
                .observed(c)
                .subjects([label]),
        ),
        Marginal::Affine {
            a,
            b,
            range: Some((lo, hi)),
        } => {
            if lo > hi {
                out.push(
                    Violation::new("affine-range", format!("utility term `{label}` has an empty range"))
                        .subjects([label]),
                );
            } else {
                let sup = (a + b * lo).max(a + b * hi);
                if (sup - 1.0).abs() > 1e-9 {
                    out.push(
                        Violation::new(
                            "sup-normalization",
                            format!("utility term `{label}` attains supremum {sup}, not 1"),
                        )
                        .observed(sup)
                        .subjects([label]),
                    );
                }
            }
        }
        _ => {}
    }
}

/// One directed cycle of the edge relation, if any, as sorted variable ids.
fn find_cycle(sc: &StructuralConsensus) -> Option<Vec<String>> {
    let index: HashMap<&str, usize> = sc
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| (v.id.as_str(), i))
        .collect();
    let n = sc.variables.len();
    let mut adj = vec![Vec::new(); n];
    for (p, c) in &sc.edges {
        if let (Some(&a), Some(&b)) = (index.get(p.as_str()), index.get(c.as_str())) {
            adj[a].push(b);
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut stack: Vec<usize> = Vec::new();
    fn dfs(
        u: usize,
        adj: &[Vec<usize>],
        state: &mut [u8],
        stack: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        state[u] = 1;
        stack.push(u);
        for &v in &adj[u] {
            if state[v] == 1 {
                let pos = stack.iter().position(|&x| x == v).unwrap_or(0);
                return Some(stack[pos..].to_vec());
            }
            if state[v] == 0 {
                if let Some(c) = dfs(v, adj, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[u] = 2;
        None
    }
    for u in 0..n {
        if state[u] == 0 {
            if let Some(cycle) = dfs(u, &adj, &mut state, &mut stack) {
                let mut names: Vec<String> = cycle
                    .into_iter()
                    .map(|i| sc.variables[i].id.to_string())
                    .collect();
                names.sort();
                names.dedup();
                return Some(names);
            }
        }
    }
    None
}

/// A total order of the variables in which every variable follows all of its
/// parents. Ties are broken by declaration order, so the result is
/// deterministic.
pub fn ancestral_order(sc: &StructuralConsensus) -> Result<Vec<VariableId>> {
    let index: HashMap<&str, usize> = sc
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| (v.id.as_str(), i))
        .collect();
    let n = sc.variables.len();
    let mut indegree = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for (p, c) in &sc.edges {
        let a = *index
            .get(p.as_str())
            .ok_or_else(|| IdssError::UnknownVariable(p.clone()))?;
        let b = *index
            .get(c.as_str())
            .ok_or_else(|| IdssError::UnknownVariable(c.clone()))?;
        indegree[b] += 1;
        children[a].push(b);
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(sc.variables[i].id.clone());
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() != n {
        let stuck: Vec<String> = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| sc.variables[i].id.to_string())
            .collect();
        return Err(IdssError::Structure(format!(
            "cycle detected among {}",
            stuck.join(", ")
        )));
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(id: &str, owner: &str) -> VariableDecl {
        VariableDecl {
            id: id.into(),
            owner: owner.into(),
            regions: 1,
            time_indexed: true,
        }
    }

    fn sc(vars: &[&str], edges: &[(&str, &str)]) -> StructuralConsensus {
        StructuralConsensus {
            panels: vec!["P".into()],
            variables: vars.iter().map(|v| var(v, "P")).collect(),
            edges: edges.iter().map(|(a, b)| ((*a).into(), (*b).into())).collect(),
            horizon: 1,
        }
    }

    fn bundle(weights: &[f64], edges: &[(&str, &str)]) -> CkBundle {
        CkBundle {
            decisions: DecisionSpace {
                decisions: vec![Decision {
                    id: "d0".into(),
                    label: "observe".into(),
                    intervention: None,
                }],
                baseline: "d0".into(),
            },
            structure: sc(&["A", "B"], edges),
            utility: UtilitySpec {
                terms: weights
                    .iter()
                    .zip(["A", "B"])
                    .map(|(&k, v)| UtilityTerm {
                        variable: v.into(),
                        time: 1,
                        region: 0,
                        weight: k,
                        weight_by_decision: BTreeMap::new(),
                        marginal: Marginal::Quadratic { gamma: 1.0 },
                        with: None,
                    })
                    .collect(),
            },
            causal: None,
        }
    }

    #[test]
    fn symmetric_valid_bundle_has_no_violations() {
        assert!(validate_ck(&bundle(&[0.5, 0.5], &[("A", "B")])).is_empty());
    }

    #[test]
    fn overweight_is_reported_with_observed_sum() {
        let report = validate_ck(&bundle(&[0.6, 0.6], &[("A", "B")]));
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].code, "weights-sum");
        assert!((report[0].observed.unwrap() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn two_cycle_is_named() {
        let report = validate_ck(&bundle(&[0.5, 0.5], &[("A", "B"), ("B", "A")]));
        let cycle = report.iter().find(|v| v.code == "cycle").expect("cycle");
        assert_eq!(cycle.subjects, vec!["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn missing_baseline_and_bad_gamma() {
        let mut ck = bundle(&[0.5, 0.5], &[]);
        ck.decisions.baseline = "nope".into();
        ck.utility.terms[0].marginal = Marginal::Quadratic { gamma: -1.0 };
        let codes: Vec<_> = validate_ck(&ck).into_iter().map(|v| v.code).collect();
        assert!(codes.contains(&"baseline-missing".to_string()));
        assert!(codes.contains(&"quadratic-gamma".to_string()));
    }

    #[test]
    fn affine_sup_normalisation_on_declared_range() {
        let mut ck = bundle(&[0.5, 0.5], &[]);
        ck.utility.terms[0].marginal = Marginal::Affine {
            a: 0.0,
            b: 0.5,
            range: Some((0.0, 1.0)),
        };
        let codes: Vec<_> = validate_ck(&ck).into_iter().map(|v| v.code).collect();
        assert_eq!(codes, vec!["sup-normalization".to_string()]);
    }

    #[test]
    fn chain_order() {
        let s = sc(&["Y1", "Y2", "Y3", "Y4"], &[("Y1", "Y2"), ("Y2", "Y3"), ("Y3", "Y4")]);
        let order: Vec<_> = ancestral_order(&s).unwrap().into_iter().map(|v| v.0).collect();
        assert_eq!(order, ["Y1", "Y2", "Y3", "Y4"]);
    }

    #[test]
    fn unconstrained_order_is_declaration_order() {
        let s = sc(&["c", "a", "b"], &[]);
        let order: Vec<_> = ancestral_order(&s).unwrap().into_iter().map(|v| v.0).collect();
        assert_eq!(order, ["c", "a", "b"]);
    }

    #[test]
    fn declaration_order_breaks_ties_after_parents() {
        let s = sc(&["B", "C", "A"], &[("A", "B")]);
        let order: Vec<_> = ancestral_order(&s).unwrap().into_iter().map(|v| v.0).collect();
        assert_eq!(order, ["C", "A", "B"]);
    }

    #[test]
    fn cycle_is_a_structural_error() {
        let s = sc(&["A", "B"], &[("A", "B"), ("B", "A")]);
        assert!(matches!(ancestral_order(&s), Err(IdssError::Structure(_))));
    }

    #[test]
    fn panel_weight_collapse() {
        let mut ck = bundle(&[0.25, 0.75], &[]);
        ck.structure.panels.push("Q".into());
        ck.structure.variables[1].owner = "Q".into();
        let w = ck.utility.panel_weights("d0", &ck.structure);
        assert_eq!(w["P"], 0.25);
        assert_eq!(w["Q"], 0.75);
    }
}
