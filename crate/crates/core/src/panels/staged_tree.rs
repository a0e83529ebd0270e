//! Staged probability trees with Dirichlet beliefs on the edge
//! probabilities of each stage.

use std::collections::{BTreeMap, HashMap};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{IdssError, Result};

use super::{Expansion, Term};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum TreeEdge {
    Vertex { to: String },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TreeVertex {
    pub id: String,
    /// Vertices in the same stage share their edge probabilities. Defaults
    /// to the vertex's own id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    pub edges: Vec<TreeEdge>,
}

impl TreeVertex {
    pub fn stage(&self) -> &str {
        self.stage.as_deref().unwrap_or(&self.id)
    }
}

/// The tree topology. The first vertex is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StagedTree {
    pub vertices: Vec<TreeVertex>,
}

/// A root-to-leaf path as `(vertex index, edge index)` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub path: Vec<(usize, usize)>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct Dirichlet {
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub counts: Vec<u64>,
}

impl Dirichlet {
    pub fn uniform(k: usize) -> Self {
        Self {
            alpha: vec![1.0; k],
            counts: vec![0; k],
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(IdssError::invalid("Dirichlet hyperparameters must be positive"));
        }
        if !self.counts.is_empty() && self.counts.len() != self.alpha.len() {
            return Err(IdssError::shape("Dirichlet counts do not match its dimension"));
        }
        Ok(())
    }

    pub fn posterior(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .enumerate()
            .map(|(k, a)| a + self.counts.get(k).copied().unwrap_or(0) as f64)
            .collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let post = self.posterior();
        let total: f64 = post.iter().sum();
        post.into_iter().map(|a| a / total).collect()
    }

    pub fn absorb(&mut self, counts: &[u64]) -> Result<()> {
        if counts.len() != self.alpha.len() {
            return Err(IdssError::shape(format!(
                "{} counts for a stage with {} edges",
                counts.len(),
                self.alpha.len()
            )));
        }
        if self.counts.is_empty() {
            self.counts = vec![0; self.alpha.len()];
        }
        for (c, x) in self.counts.iter_mut().zip(counts) {
            *c += x;
        }
        Ok(())
    }
}

/// Dirichlet beliefs per stage. Stages missing from the map carry the
/// uniform prior.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StagedTreeState {
    #[serde(default)]
    pub stages: BTreeMap<String, Dirichlet>,
}

impl StagedTree {
    fn index(&self) -> HashMap<&str, usize> {
        self.vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id.as_str(), i))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() {
            return Err(IdssError::Structure("staged tree has no vertices".into()));
        }
        let index = self.index();
        if index.len() != self.vertices.len() {
            return Err(IdssError::Structure("duplicate vertex id in staged tree".into()));
        }
        let mut incoming = vec![0usize; self.vertices.len()];
        let mut stage_sizes: HashMap<&str, usize> = HashMap::new();
        for v in &self.vertices {
            if v.edges.is_empty() {
                return Err(IdssError::Structure(format!("vertex `{}` has no edges", v.id)));
            }
            let k = *stage_sizes.entry(v.stage()).or_insert(v.edges.len());
            if k != v.edges.len() {
                return Err(IdssError::Structure(format!(
                    "stage `{}` mixes vertices with different numbers of edges",
                    v.stage()
                )));
            }
            for e in &v.edges {
                match e {
                    TreeEdge::Vertex { to } => {
                        let j = *index.get(to.as_str()).ok_or_else(|| {
                            IdssError::Structure(format!("edge to unknown vertex `{to}`"))
                        })?;
                        incoming[j] += 1;
                    }
                    TreeEdge::Leaf { value } if !value.is_finite() => {
                        return Err(IdssError::invalid("leaf values must be finite"));
                    }
                    TreeEdge::Leaf { .. } => {}
                }
            }
        }
        if incoming[0] != 0 || incoming[1..].iter().any(|&n| n != 1) {
            return Err(IdssError::Structure(
                "staged tree must be rooted at its first vertex with one parent per vertex".into(),
            ));
        }
        // Reachability from the root rules out detached cycles.
        let leaves = self.leaves();
        let mut reached = vec![false; self.vertices.len()];
        for leaf in &leaves {
            for &(v, _) in &leaf.path {
                reached[v] = true;
            }
        }
        if reached.iter().any(|r| !r) {
            return Err(IdssError::Structure("staged tree has unreachable vertices".into()));
        }
        for leaf in &leaves {
            let mut seen = Vec::new();
            for &(v, _) in &leaf.path {
                let s = self.vertices[v].stage();
                if seen.contains(&s) {
                    return Err(IdssError::Structure(format!(
                        "stage `{s}` repeats along a root-to-leaf path"
                    )));
                }
                seen.push(s);
            }
        }
        Ok(())
    }

    /// Leaves in depth-first order.
    pub fn leaves(&self) -> Vec<Leaf> {
        let index = self.index();
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((v, path)) = stack.pop() {
            if path.len() > self.vertices.len() {
                continue;
            }
            for (k, e) in self.vertices[v].edges.iter().enumerate().rev() {
                let mut p: Vec<(usize, usize)> = path.clone();
                p.push((v, k));
                match e {
                    TreeEdge::Leaf { value } => out.push((p, *value)),
                    TreeEdge::Vertex { to } => {
                        if let Some(&j) = index.get(to.as_str()) {
                            stack.push((j, p));
                        }
                    }
                }
            }
        }
        // The stack visits right-most subtrees last; restore left-to-right.
        out.sort_by(|a, b| a.0.iter().map(|s| s.1).cmp(b.0.iter().map(|s| s.1)));
        out.into_iter()
            .map(|(path, value)| Leaf { path, value })
            .collect()
    }

    pub fn stage_dirichlet(&self, state: &StagedTreeState, vertex: usize) -> Dirichlet {
        let v = &self.vertices[vertex];
        state
            .stages
            .get(v.stage())
            .cloned()
            .unwrap_or_else(|| Dirichlet::uniform(v.edges.len()))
    }

    /// `E[P(leaf)]`, the product of posterior Dirichlet means along each path.
    pub fn leaf_probabilities(&self, state: &StagedTreeState) -> Vec<f64> {
        let means: Vec<Vec<f64>> = (0..self.vertices.len())
            .map(|v| self.stage_dirichlet(state, v).mean())
            .collect();
        self.leaves()
            .iter()
            .map(|leaf| leaf.path.iter().map(|&(v, k)| means[v][k]).product())
            .collect()
    }

    /// Per-vertex edge counts for a sample of leaf outcomes.
    pub fn counts_from_leaves(&self, outcomes: &[usize]) -> Result<BTreeMap<String, Vec<u64>>> {
        let leaves = self.leaves();
        let mut out: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for &o in outcomes {
            let leaf = leaves
                .get(o)
                .ok_or_else(|| IdssError::invalid(format!("leaf {o} of {}", leaves.len())))?;
            for &(v, k) in &leaf.path {
                let vx = &self.vertices[v];
                out.entry(vx.id.clone())
                    .or_insert_with(|| vec![0; vx.edges.len()])[k] += 1;
            }
        }
        Ok(out)
    }

    pub fn update(&self, state: &mut StagedTreeState, counts: &BTreeMap<String, Vec<u64>>) -> Result<()> {
        let index = self.index();
        // Validate everything first so a bad item leaves the state untouched.
        for (vid, c) in counts {
            let &v = index
                .get(vid.as_str())
                .ok_or_else(|| IdssError::invalid(format!("unknown tree vertex `{vid}`")))?;
            if c.len() != self.vertices[v].edges.len() {
                return Err(IdssError::shape(format!(
                    "vertex `{vid}` has {} edges but {} counts",
                    self.vertices[v].edges.len(),
                    c.len()
                )));
            }
        }
        for (vid, c) in counts {
            if c.iter().all(|&x| x == 0) {
                continue;
            }
            let v = index[vid.as_str()];
            let stage = self.vertices[v].stage().to_owned();
            let k = self.vertices[v].edges.len();
            state
                .stages
                .entry(stage)
                .or_insert_with(|| Dirichlet::uniform(k))
                .absorb(c)?;
        }
        Ok(())
    }

    pub fn validate_state(&self, state: &StagedTreeState) -> Result<()> {
        for (stage, d) in &state.stages {
            d.validate()?;
            let vertex = self
                .vertices
                .iter()
                .find(|v| v.stage() == stage)
                .ok_or_else(|| IdssError::invalid(format!("state for unknown stage `{stage}`")))?;
            if vertex.edges.len() != d.len() {
                return Err(IdssError::shape(format!(
                    "stage `{stage}` has {} edges but a {}-dimensional Dirichlet",
                    vertex.edges.len(),
                    d.len()
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn expand(&self, state: &StagedTreeState, term: &Term) -> Result<Expansion> {
        if term.len() != 1 {
            return Err(IdssError::shape("staged tree variables have a single region"));
        }
        let probs = self.leaf_probabilities(state);
        let (mut m1, mut m2) = (0.0, 0.0);
        for (p, leaf) in probs.iter().zip(self.leaves()) {
            m1 += p * leaf.value;
            m2 += p * leaf.value * leaf.value;
        }
        Ok(Expansion {
            constant: term.lin[0] * m1 + term.quad[(0, 0)] * m2,
            parent: None,
        })
    }
}
