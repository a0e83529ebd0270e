//! Semi-graphoid closure of conditional-independence statements.
//!
//! Statements range over a finite per-run alphabet and are kept as bit
//! sets. Functional dependencies rewrite conditioning sets: conditioning on
//! `Z` is the same as conditioning on everything `Z` determines, and a
//! symbol determined by the conditioning set is independent of anything.
//! Every statement is stored in that canonical form, so the closure is
//! taken modulo those rewrites.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{IdssError, Result};

pub type SymbolSet = u32;

pub const DEFAULT_DEPTH_BOUND: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    names: Vec<String>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() > 32 {
            return Err(IdssError::invalid(format!("alphabet of {} symbols exceeds 32", names.len())));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(IdssError::invalid(format!("symbol `{n}` declared twice")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn symbol(&self, name: &str) -> Result<SymbolSet> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| 1 << i)
            .ok_or_else(|| IdssError::invalid(format!("symbol `{name}` is not in the alphabet")))
    }

    pub fn set(&self, names: &[&str]) -> Result<SymbolSet> {
        names.iter().try_fold(0, |acc, n| Ok(acc | self.symbol(n)?))
    }

    pub fn render(&self, set: SymbolSet) -> String {
        let parts: Vec<&str> = (0..self.names.len())
            .filter(|i| set & (1 << i) != 0)
            .map(|i| self.names[i].as_str())
            .collect();
        if parts.is_empty() {
            "∅".to_owned()
        } else {
            parts.join(", ")
        }
    }

    pub fn render_statement(&self, s: &Statement) -> String {
        if s.c == 0 {
            format!("{} ⊥ {}", self.render(s.a), self.render(s.b))
        } else {
            format!("{} ⊥ {} | {}", self.render(s.a), self.render(s.b), self.render(s.c))
        }
    }

    fn mask(&self) -> SymbolSet {
        if self.names.len() == 32 {
            u32::MAX
        } else {
            (1u32 << self.names.len()) - 1
        }
    }
}

/// `A ⊥ B | C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Statement {
    pub a: SymbolSet,
    pub b: SymbolSet,
    pub c: SymbolSet,
}

impl Statement {
    pub fn new(a: SymbolSet, b: SymbolSet, c: SymbolSet) -> Self {
        Self { a, b, c }
    }
}

/// `dependent` is a function of `determinants`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalDependency {
    pub dependent: SymbolSet,
    pub determinants: SymbolSet,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dependencies(Vec<FunctionalDependency>);

impl Dependencies {
    pub fn new(fds: Vec<FunctionalDependency>) -> Self {
        Self(fds)
    }

    pub fn as_slice(&self) -> &[FunctionalDependency] {
        &self.0
    }

    /// Everything determined by `set`.
    pub fn close(&self, mut set: SymbolSet) -> SymbolSet {
        loop {
            let before = set;
            for fd in &self.0 {
                if fd.determinants & !set == 0 {
                    set |= fd.dependent;
                }
            }
            if set == before {
                return set;
            }
        }
    }

    /// Canonical form, or `None` when the statement holds trivially.
    pub fn canonical(&self, a: SymbolSet, b: SymbolSet, c: SymbolSet) -> Option<Statement> {
        let c = self.close(c);
        let (a, b) = (a & !c, b & !c);
        (a != 0 && b != 0).then_some(Statement { a, b, c })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Rule {
    Axiom,
    Symmetry,
    /// `X ⊥ Y,W | Z  ⇒  X ⊥ Y | Z`, keeping `kept`.
    Decomposition { kept: SymbolSet },
    /// `X ⊥ Y,W | Z  ⇒  X ⊥ Y | Z,W`, moving `moved`.
    WeakUnion { moved: SymbolSet },
    /// `X ⊥ Y | Z  &  X ⊥ W | Z,Y  ⇒  X ⊥ Y,W | Z`.
    Contraction,
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::Axiom => "axiom",
            Rule::Symmetry => "symmetry",
            Rule::Decomposition { .. } => "decomposition",
            Rule::WeakUnion { .. } => "weak union",
            Rule::Contraction => "contraction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Derivation {
    pub statement: Statement,
    pub rule: Rule,
    /// Indices of earlier derivations.
    pub premises: Vec<usize>,
    pub depth: usize,
}

#[derive(Debug, Clone)]
pub struct Closure {
    pub alphabet: Alphabet,
    pub dependencies: Dependencies,
    pub derivations: Vec<Derivation>,
    /// False when the depth bound was hit before a fixpoint.
    pub complete: bool,
    pub depth_reached: usize,
    index: HashMap<Statement, usize>,
}

/// Apply a rule to its premises. `None` means the rule does not apply or
/// yields a trivial statement.
fn apply(deps: &Dependencies, rule: Rule, premises: &[Statement]) -> Option<Statement> {
    match (rule, premises) {
        (Rule::Symmetry, [s]) => deps.canonical(s.b, s.a, s.c),
        (Rule::Decomposition { kept }, [s]) => {
            (kept != 0 && kept & !s.b == 0 && kept != s.b).then(|| deps.canonical(s.a, kept, s.c))?
        }
        (Rule::WeakUnion { moved }, [s]) => (moved != 0 && moved & !s.b == 0 && moved != s.b)
            .then(|| deps.canonical(s.a, s.b & !moved, s.c | moved))?,
        (Rule::Contraction, [s1, s2]) => (s1.a == s2.a && s2.c == deps.close(s1.c | s1.b))
            .then(|| deps.canonical(s1.a, s1.b | s2.b, s1.c))?,
        _ => None,
    }
}

/// Nonempty proper subsets of `set`.
fn proper_subsets(set: SymbolSet) -> impl Iterator<Item = SymbolSet> {
    let mut sub = set;
    std::iter::from_fn(move || {
        sub = sub.wrapping_sub(1) & set;
        (sub != 0).then_some(sub)
    })
}

struct Builder {
    deps: Dependencies,
    derivations: Vec<Derivation>,
    index: HashMap<Statement, usize>,
    /// (A, C) → statements, looked up as second contraction premises.
    by_ac: HashMap<(SymbolSet, SymbolSet), Vec<usize>>,
    /// (A, cl(C ∪ B)) → statements, looked up as first contraction premises.
    by_acb: HashMap<(SymbolSet, SymbolSet), Vec<usize>>,
}

impl Builder {
    fn push(&mut self, statement: Statement, rule: Rule, premises: Vec<usize>, depth: usize) -> Option<usize> {
        if self.index.contains_key(&statement) {
            return None;
        }
        let i = self.derivations.len();
        self.index.insert(statement, i);
        self.by_ac.entry((statement.a, statement.c)).or_default().push(i);
        let acb = self.deps.close(statement.c | statement.b);
        self.by_acb.entry((statement.a, acb)).or_default().push(i);
        self.derivations.push(Derivation {
            statement,
            rule,
            premises,
            depth,
        });
        Some(i)
    }
}

/// Close `axioms` under symmetry, decomposition, weak union and contraction,
/// breadth first, for at most `bound` rounds.
pub fn semigraphoid_closure(
    alphabet: &Alphabet,
    dependencies: &Dependencies,
    axioms: &[Statement],
    bound: usize,
) -> Result<Closure> {
    let mask = alphabet.mask();
    for fd in dependencies.as_slice() {
        if fd.dependent.count_ones() != 1 || (fd.dependent | fd.determinants) & !mask != 0 {
            return Err(IdssError::invalid("a dependency must name one dependent symbol of the alphabet"));
        }
    }
    let mut b = Builder {
        deps: dependencies.clone(),
        derivations: Vec::new(),
        index: HashMap::new(),
        by_ac: HashMap::new(),
        by_acb: HashMap::new(),
    };
    let mut frontier = Vec::new();
    for s in axioms {
        if (s.a | s.b | s.c) & !mask != 0 {
            return Err(IdssError::invalid("statement uses symbols outside the alphabet"));
        }
        if s.a & s.b != 0 || s.a & s.c != 0 || s.b & s.c != 0 {
            return Err(IdssError::invalid(format!(
                "statement `{}` has overlapping sets",
                alphabet.render_statement(s)
            )));
        }
        if let Some(c) = b.deps.canonical(s.a, s.b, s.c) {
            frontier.extend(b.push(c, Rule::Axiom, vec![], 0));
        }
    }

    let mut depth = 0;
    let mut complete = frontier.is_empty();
    while !frontier.is_empty() {
        if depth == bound {
            break;
        }
        depth += 1;
        let mut next = Vec::new();
        for &i in &frontier {
            let s = b.derivations[i].statement;
            let mut emit = |b: &mut Builder, rule: Rule, premises: Vec<usize>| {
                let stmts: Vec<Statement> = premises.iter().map(|&p| b.derivations[p].statement).collect();
                if let Some(out) = apply(&b.deps, rule, &stmts) {
                    next.extend(b.push(out, rule, premises, depth));
                }
            };
            emit(&mut b, Rule::Symmetry, vec![i]);
            for sub in proper_subsets(s.b) {
                emit(&mut b, Rule::Decomposition { kept: sub }, vec![i]);
                emit(&mut b, Rule::WeakUnion { moved: sub }, vec![i]);
            }
            let key = (s.a, b.deps.close(s.c | s.b));
            let seconds = b.by_ac.get(&key).cloned().unwrap_or_default();
            for j in seconds {
                emit(&mut b, Rule::Contraction, vec![i, j]);
            }
            let firsts = b.by_acb.get(&(s.a, s.c)).cloned().unwrap_or_default();
            for j in firsts {
                emit(&mut b, Rule::Contraction, vec![j, i]);
            }
        }
        frontier = next;
        if frontier.is_empty() {
            complete = true;
        }
    }

    Ok(Closure {
        alphabet: alphabet.clone(),
        dependencies: b.deps,
        derivations: b.derivations,
        complete,
        depth_reached: depth,
        index: b.index,
    })
}

impl Closure {
    pub fn len(&self) -> usize {
        self.derivations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.derivations.is_empty()
    }

    pub fn statements(&self) -> impl Iterator<Item = &Statement> {
        self.derivations.iter().map(|d| &d.statement)
    }

    /// Index of the derivation of `A ⊥ B | C`, after canonicalization.
    pub fn find(&self, a: SymbolSet, b: SymbolSet, c: SymbolSet) -> Option<usize> {
        self.dependencies
            .canonical(a, b, c)
            .and_then(|s| self.index.get(&s).copied())
    }

    /// Whether `A ⊥ B | C` holds in the closure; trivial statements always do.
    pub fn derives(&self, a: SymbolSet, b: SymbolSet, c: SymbolSet) -> bool {
        match self.dependencies.canonical(a, b, c) {
            None => true,
            Some(s) => self.index.contains_key(&s),
        }
    }

    /// The derivation steps needed for entry `target`, in dependency order.
    pub fn trace(&self, target: usize) -> Vec<usize> {
        let mut seen = vec![false; self.derivations.len()];
        let mut queue = VecDeque::from([target]);
        while let Some(i) = queue.pop_front() {
            if std::mem::replace(&mut seen[i], true) {
                continue;
            }
            queue.extend(self.derivations[i].premises.iter().copied());
        }
        (0..self.derivations.len()).filter(|&i| seen[i]).collect()
    }

    /// Re-apply every rule on the trace of `target` and check each step
    /// reproduces its recorded statement.
    pub fn replay(&self, target: usize) -> Result<()> {
        for i in self.trace(target) {
            let d = &self.derivations[i];
            if d.rule == Rule::Axiom {
                continue;
            }
            if d.premises.iter().any(|&p| p >= i) {
                return Err(IdssError::invalid(format!("step {i} cites a later step")));
            }
            let premises: Vec<Statement> = d.premises.iter().map(|&p| self.derivations[p].statement).collect();
            if apply(&self.dependencies, d.rule, &premises) != Some(d.statement) {
                return Err(IdssError::invalid(format!("step {i} ({}) does not replay", d.rule.name())));
            }
        }
        Ok(())
    }

    /// A numbered, human-readable proof of entry `target`.
    pub fn proof_script(&self, target: usize) -> String {
        let steps = self.trace(target);
        let line_of: HashMap<usize, usize> = steps.iter().enumerate().map(|(n, &i)| (i, n + 1)).collect();
        let mut out = String::new();
        for (n, &i) in steps.iter().enumerate() {
            let d = &self.derivations[i];
            let cites: Vec<String> = d.premises.iter().map(|p| line_of[p].to_string()).collect();
            let how = if cites.is_empty() {
                d.rule.name().to_owned()
            } else {
                format!("{} of {}", d.rule.name(), cites.join(", "))
            };
            let _ = writeln!(out, "{:>3}. {:<56} [{how}]", n + 1, self.alphabet.render_statement(&d.statement));
        }
        out
    }

    pub fn proof_lines(&self, target: usize) -> Vec<String> {
        self.proof_script(target).lines().map(str::to_owned).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xyzw() -> (Alphabet, [SymbolSet; 4]) {
        let a = Alphabet::new(["X", "Y", "Z", "W"]).unwrap();
        let s = [a.symbol("X").unwrap(), a.symbol("Y").unwrap(), a.symbol("Z").unwrap(), a.symbol("W").unwrap()];
        (a, s)
    }

    #[test]
    fn perfect_composition_forward() {
        let (alpha, [x, y, z, w]) = xyzw();
        let cl = semigraphoid_closure(&alpha, &Dependencies::default(), &[Statement::new(x, y | z, w)], 12).unwrap();
        assert!(cl.complete);
        assert!(cl.derives(x, y, w | z));
        assert!(cl.derives(x, z, w));
        assert!(cl.derives(y | z, x, w));
        assert!(!cl.derives(x, w, y));
    }

    #[test]
    fn perfect_composition_backward() {
        let (alpha, [x, y, z, w]) = xyzw();
        let axioms = [Statement::new(x, y, w | z), Statement::new(x, z, w)];
        let cl = semigraphoid_closure(&alpha, &Dependencies::default(), &axioms, 12).unwrap();
        let i = cl.find(x, y | z, w).unwrap();
        cl.replay(i).unwrap();
        assert!(cl.proof_script(i).contains("contraction"));
    }

    #[test]
    fn empty_input_gives_empty_closure() {
        let (alpha, _) = xyzw();
        let cl = semigraphoid_closure(&alpha, &Dependencies::default(), &[], 12).unwrap();
        assert!(cl.is_empty() && cl.complete);
    }

    #[test]
    fn dependencies_rewrite_conditioning_sets() {
        let (alpha, [x, y, z, w]) = xyzw();
        let deps = Dependencies::new(vec![FunctionalDependency {
            dependent: w,
            determinants: z,
        }]);
        let cl = semigraphoid_closure(&alpha, &deps, &[Statement::new(x, y, z)], 12).unwrap();
        assert!(cl.derives(x, y, z | w));
        assert!(cl.derives(x, w, z));
    }

    #[test]
    fn closed_under_reclosure() {
        let (alpha, [x, y, z, w]) = xyzw();
        let cl = semigraphoid_closure(&alpha, &Dependencies::default(), &[Statement::new(x, y | z, w)], 12).unwrap();
        let all: Vec<Statement> = cl.statements().copied().collect();
        let again = semigraphoid_closure(&alpha, &Dependencies::default(), &all, 12).unwrap();
        assert_eq!(again.len(), cl.len());
    }

    #[test]
    fn bound_is_reported() {
        let (alpha, [x, y, z, w]) = xyzw();
        let cl = semigraphoid_closure(&alpha, &Dependencies::default(), &[Statement::new(x, y | z, w)], 0).unwrap();
        assert!(!cl.complete);
        assert_eq!(cl.len(), 1);
    }

    #[test]
    fn malformed_statements_are_refused() {
        let (alpha, [x, y, _, _]) = xyzw();
        assert!(semigraphoid_closure(&alpha, &Dependencies::default(), &[Statement::new(x, x | y, 0)], 12).is_err());
        assert!(semigraphoid_closure(&alpha, &Dependencies::default(), &[Statement::new(1 << 7, y, 0)], 12).is_err());
    }
}
