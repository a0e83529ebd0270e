//! A loaded system: the common-knowledge bundle, the panels' current states
//! and the quarantine log, with content-addressed snapshots.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::admissibility::closure::DEFAULT_DEPTH_BOUND;
use crate::admissibility::soundness::{verify_soundness_with, SoundnessDeclaration, Verdict};
use crate::admissibility::{admit_evidence, Admission, EvidenceItem, QuarantineLog, QuarantineRecord, Routed};
use crate::ck::{CkBundle, StructuralConsensus};
use crate::config::{ConfigDocument, OracleSettings};
use crate::error::{IdssError, Result};
use crate::ids::{DecisionId, PanelId, VariableId};
use crate::oracle::{mc_expected_utility_with, GenerativeSpec, OracleEstimate};
use crate::panels::Panel;
use crate::par::Strategy;
use crate::propagation::{rank_policies, resolve, score_policy_with, PolicyScore};

/// SHA-256 of the canonical serialization of a set of panel states. Maps
/// are ordered and struct fields serialize in declaration order, so equal
/// states always hash equally.
pub fn snapshot_hash(panels: &BTreeMap<PanelId, Panel>) -> Result<String> {
    let bytes = serde_json::to_vec(panels)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn panel_hash(panel: &Panel) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(panel)?)))
}

/// Rescale nonnegative weights to sum to one.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(IdssError::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(IdssError::invalid("weights must not all be zero"));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Absorb routed evidence into `panels`. Either every routed part is taken
/// or none is.
pub fn apply_routed(
    panels: &mut BTreeMap<PanelId, Panel>,
    sc: &StructuralConsensus,
    routed: &[Routed],
    decisions: &[DecisionId],
) -> Result<()> {
    let mut staged: BTreeMap<PanelId, Panel> = BTreeMap::new();
    for r in routed {
        let panel = match staged.get_mut(&r.panel) {
            Some(p) => p,
            None => {
                let p = panels
                    .get(&r.panel)
                    .ok_or_else(|| IdssError::UnknownPanel(r.panel.clone()))?
                    .clone();
                staged.entry(r.panel.clone()).or_insert(p)
            }
        };
        absorb_into(panel, sc, r, decisions)?;
    }
    panels.extend(staged);
    Ok(())
}

/// Absorb one routed part into one panel.
pub fn absorb_into(panel: &mut Panel, sc: &StructuralConsensus, r: &Routed, decisions: &[DecisionId]) -> Result<()> {
    if panel.variable != r.variable {
        return Err(IdssError::Structure(format!(
            "`{}` is routed to `{}`, which delivers `{}`",
            r.variable, panel.id, panel.variable
        )));
    }
    let has_parent = sc.parents(r.variable.as_str()).next().is_some();
    panel.absorb(&r.update, decisions, has_parent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub item: String,
    pub admission: Admission,
    pub hash_before: String,
    pub hash_after: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub decision: DecisionId,
    pub time: u32,
    pub region: usize,
    pub mean: f64,
    pub variance: f64,
}

/// What a panel delivers: the mean and variance of its variable at every
/// slot and region under each decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSummaries {
    pub panel: PanelId,
    pub variable: VariableId,
    pub kind: String,
    pub summaries: Vec<MomentSummary>,
}

#[derive(Debug)]
pub struct Engine {
    pub ck: CkBundle,
    pub panels: BTreeMap<PanelId, Panel>,
    pub soundness: Option<SoundnessDeclaration>,
    pub oracle: OracleSettings,
    pub quarantine: QuarantineLog,
    pub depth_bound: usize,
}

impl Engine {
    pub fn from_config(doc: &ConfigDocument) -> Self {
        Self {
            ck: doc.ck(),
            panels: doc.panel_map(),
            soundness: doc.soundness.clone(),
            oracle: doc.oracle,
            quarantine: QuarantineLog::in_memory(),
            depth_bound: DEFAULT_DEPTH_BOUND,
        }
    }

    pub fn with_quarantine(mut self, log: QuarantineLog) -> Self {
        self.quarantine = log;
        self
    }

    pub fn hash(&self) -> Result<String> {
        snapshot_hash(&self.panels)
    }

    pub fn score(&self, decision: &str, weights: Option<&[f64]>) -> Result<PolicyScore> {
        score_policy_with(&self.ck, &self.panels, decision, weights)
    }

    /// Scores of `decisions` (all when `None`), best first.
    pub fn rank(&self, decisions: Option<&[DecisionId]>, strategy: Strategy) -> Result<Vec<PolicyScore>> {
        let mut all = rank_policies(&self.ck, &self.panels, strategy)?;
        if let Some(keep) = decisions {
            for d in keep {
                if self.ck.decisions.get(d.as_str()).is_none() {
                    return Err(IdssError::UnknownDecision(d.clone()));
                }
            }
            all.retain(|s| keep.contains(&s.decision));
        }
        Ok(all)
    }

    /// Run an item through the gate and absorb it if admitted; rejections
    /// are quarantined and leave the panels untouched.
    pub fn submit(&mut self, item: &EvidenceItem) -> Result<Submission> {
        let hash_before = self.hash()?;
        let admission = admit_evidence(item, &self.ck.structure)?;
        match &admission {
            Admission::Admitted { routed } => {
                apply_routed(&mut self.panels, &self.ck.structure, routed, &item.decisions)?;
            }
            Admission::Rejected { code, .. } => {
                self.quarantine.append(QuarantineRecord::now(&item.id, *code))?;
            }
        }
        Ok(Submission {
            item: item.id.clone(),
            admission,
            hash_after: self.hash()?,
            hash_before,
        })
    }

    /// Submit `items` in order. Rejections are logged, not errors.
    pub fn submit_all(&mut self, items: &[EvidenceItem]) -> Result<Vec<Submission>> {
        items.iter().map(|i| self.submit(i)).collect()
    }

    /// The loaded document with the current panel states and no queued
    /// evidence.
    pub fn export(&self) -> ConfigDocument {
        ConfigDocument {
            decisions: self.ck.decisions.clone(),
            structure: self.ck.structure.clone(),
            utility: self.ck.utility.clone(),
            causal: self.ck.causal.clone(),
            panels: self.panels.values().cloned().collect(),
            evidence: Vec::new(),
            soundness: self.soundness.clone(),
            oracle: self.oracle,
        }
    }

    pub fn soundness_declaration(&self) -> SoundnessDeclaration {
        self.soundness.clone().unwrap_or_default()
    }

    pub fn verify(&self) -> Result<Verdict> {
        verify_soundness_with(
            &self.soundness_declaration(),
            &self.ck.structure.panels,
            self.depth_bound,
            Strategy::default(),
        )
    }

    pub fn summaries(&self, panel: &str) -> Result<PanelSummaries> {
        summarize_panel(&self.ck, &self.panels, panel)
    }

    pub fn generative_spec(&self, decision: &str) -> Result<GenerativeSpec> {
        GenerativeSpec::new(&self.ck, &self.panels, decision)
    }

    pub fn monte_carlo(&self, decision: &str, n: usize, seed: u64, strategy: Strategy) -> Result<OracleEstimate> {
        mc_expected_utility_with(&self.generative_spec(decision)?, &self.ck.utility, n, seed, strategy)
    }
}

pub fn summarize_panel(ck: &CkBundle, panels: &BTreeMap<PanelId, Panel>, panel: &str) -> Result<PanelSummaries> {
    let p = panels
        .get(panel)
        .ok_or_else(|| IdssError::UnknownPanel(panel.into()))?;
    let mut summaries = Vec::new();
    for d in ck.decisions.ids() {
        let res = resolve(ck, panels, d.as_str())?;
        let var = res
            .var_index(p.variable.as_str())
            .ok_or_else(|| IdssError::UnknownVariable(p.variable.clone()))?;
        let moments = res.forward_moments()?;
        for (i, n) in res.nodes.iter().enumerate() {
            if n.var != var {
                continue;
            }
            for l in 0..res.regions[var] {
                summaries.push(MomentSummary {
                    decision: d.clone(),
                    time: n.slot,
                    region: l,
                    mean: moments[i].mean[l],
                    variance: moments[i].variance(l),
                });
            }
        }
    }
    Ok(PanelSummaries {
        panel: p.id.clone(),
        variable: p.variable.clone(),
        kind: p.kind().to_owned(),
        summaries,
    })
}
