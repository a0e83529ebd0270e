//! Shared service state. Each panel sits behind its own lock; the snapshot
//! hash sits behind an exclusive lock that every evidence write holds from
//! admission to rehash, so writes are linearizable and reads see whole
//! snapshots.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, RwLock, RwLockWriteGuard};

use idss_core::admissibility::soundness::{verify_soundness_with, SoundnessDeclaration, Verdict};
use idss_core::admissibility::{admit_evidence, Admission, EvidenceItem, QuarantineLog, QuarantineRecord};
use idss_core::ck::CkBundle;
use idss_core::config::{ConfigDocument, OracleSettings};
use idss_core::engine::{absorb_into, snapshot_hash, summarize_panel, PanelSummaries, Submission};
use idss_core::panels::Panel;
use idss_core::par::Strategy;
use idss_core::propagation::{score_policy_with, PolicyScore};
use idss_core::{DecisionId, PanelId, Result};

use crate::access_log::AccessLog;

/// `(snapshot hash, decision, weight bit patterns)`.
pub type CacheKey = (String, DecisionId, Vec<u64>);

pub struct Loaded {
    pub ck: CkBundle,
    pub soundness: Option<SoundnessDeclaration>,
    pub oracle: OracleSettings,
    pub depth_bound: usize,
    panels: BTreeMap<PanelId, RwLock<Panel>>,
    hash: Mutex<String>,
    quarantine: Mutex<QuarantineLog>,
    cache: Mutex<BTreeMap<CacheKey, PolicyScore>>,
}

fn poisoned<T>(e: std::sync::PoisonError<T>) -> T {
    e.into_inner()
}

impl Loaded {
    /// Load `doc` and submit its queued evidence in order.
    pub fn new(doc: &ConfigDocument) -> Result<(Self, Vec<Submission>)> {
        let panels = doc.panel_map();
        let hash = snapshot_hash(&panels)?;
        let loaded = Self {
            ck: doc.ck(),
            soundness: doc.soundness.clone(),
            oracle: doc.oracle,
            depth_bound: idss_core::admissibility::closure::DEFAULT_DEPTH_BOUND,
            panels: panels.into_iter().map(|(k, v)| (k, RwLock::new(v))).collect(),
            hash: Mutex::new(hash),
            quarantine: Mutex::new(QuarantineLog::in_memory()),
            cache: Mutex::new(BTreeMap::new()),
        };
        let queued = doc.evidence.iter().map(|e| loaded.submit(e)).collect::<Result<Vec<_>>>()?;
        Ok((loaded, queued))
    }

    pub fn hash(&self) -> String {
        self.hash.lock().unwrap_or_else(poisoned).clone()
    }

    /// A consistent copy of every panel and the hash it carries.
    pub fn view(&self) -> (String, BTreeMap<PanelId, Panel>) {
        let hash = self.hash.lock().unwrap_or_else(poisoned);
        let panels = self
            .panels
            .iter()
            .map(|(k, p)| (k.clone(), p.read().unwrap_or_else(poisoned).clone()))
            .collect();
        (hash.clone(), panels)
    }

    pub fn has_panel(&self, id: &str) -> bool {
        self.panels.contains_key(id)
    }

    /// Gate, absorb and rehash as one step.
    pub fn submit(&self, item: &EvidenceItem) -> Result<Submission> {
        let admission = admit_evidence(item, &self.ck.structure)?;
        let mut hash = self.hash.lock().unwrap_or_else(poisoned);
        let hash_before = hash.clone();
        match &admission {
            Admission::Admitted { routed } => {
                let touched: BTreeSet<&PanelId> = routed.iter().map(|r| &r.panel).collect();
                let mut guards: BTreeMap<&PanelId, RwLockWriteGuard<'_, Panel>> = BTreeMap::new();
                for id in touched {
                    let lock = self
                        .panels
                        .get(id)
                        .ok_or_else(|| idss_core::IdssError::UnknownPanel(id.clone()))?;
                    guards.insert(id, lock.write().unwrap_or_else(poisoned));
                }
                let mut staged: BTreeMap<&PanelId, Panel> =
                    guards.iter().map(|(k, g)| (*k, (**g).clone())).collect();
                for r in routed {
                    let p = staged.get_mut(&r.panel).expect("locked above");
                    absorb_into(p, &self.ck.structure, r, &item.decisions)?;
                }
                let mut all: BTreeMap<PanelId, Panel> = BTreeMap::new();
                for (id, lock) in &self.panels {
                    let p = match staged.remove(id) {
                        Some(p) => {
                            **guards.get_mut(id).expect("locked above") = p.clone();
                            p
                        }
                        None => lock.read().unwrap_or_else(poisoned).clone(),
                    };
                    all.insert(id.clone(), p);
                }
                *hash = snapshot_hash(&all)?;
            }
            Admission::Rejected { code, .. } => {
                self.quarantine
                    .lock()
                    .unwrap_or_else(poisoned)
                    .append(QuarantineRecord::now(&item.id, *code))?;
            }
        }
        Ok(Submission {
            item: item.id.clone(),
            admission,
            hash_before,
            hash_after: hash.clone(),
        })
    }

    pub fn quarantine(&self) -> Vec<QuarantineRecord> {
        self.quarantine.lock().unwrap_or_else(poisoned).records().to_vec()
    }

    /// Score `decision` under `weights`, normalised, or the configured
    /// weights. Returns the score and whether it came from the cache.
    pub fn score(&self, decision: &DecisionId, weights: &[f64]) -> Result<(String, PolicyScore, bool)> {
        let bits: Vec<u64> = weights.iter().map(|w| w.to_bits()).collect();
        let current = self.hash();
        let key = (current, decision.clone(), bits.clone());
        if let Some(hit) = self.cache.lock().unwrap_or_else(poisoned).get(&key) {
            return Ok((key.0, hit.clone(), true));
        }
        let (hash, panels) = self.view();
        let score = score_policy_with(&self.ck, &panels, decision.as_str(), Some(weights))?;
        self.cache
            .lock()
            .unwrap_or_else(poisoned)
            .insert((hash.clone(), decision.clone(), bits), score.clone());
        Ok((hash, score, false))
    }

    /// Cached scores for the current snapshot, by decision.
    pub fn cached(&self) -> (String, BTreeMap<DecisionId, Vec<(Vec<f64>, f64)>>) {
        let hash = self.hash();
        let mut out: BTreeMap<DecisionId, Vec<(Vec<f64>, f64)>> = BTreeMap::new();
        for ((h, d, w), s) in self.cache.lock().unwrap_or_else(poisoned).iter() {
            if *h == hash {
                let w = w.iter().map(|b| f64::from_bits(*b)).collect();
                out.entry(d.clone()).or_default().push((w, s.total));
            }
        }
        (hash, out)
    }

    pub fn verify(&self) -> Result<Verdict> {
        verify_soundness_with(
            &self.soundness.clone().unwrap_or_default(),
            &self.ck.structure.panels,
            self.depth_bound,
            Strategy::default(),
        )
    }

    pub fn summaries(&self, panel: &str) -> Result<(String, PanelSummaries)> {
        let (hash, panels) = self.view();
        Ok((hash, summarize_panel(&self.ck, &panels, panel)?))
    }

    /// The current state as a loadable document.
    pub fn export(&self) -> (String, ConfigDocument) {
        let (hash, panels) = self.view();
        let doc = ConfigDocument {
            decisions: self.ck.decisions.clone(),
            structure: self.ck.structure.clone(),
            utility: self.ck.utility.clone(),
            causal: self.ck.causal.clone(),
            panels: panels.into_values().collect(),
            evidence: Vec::new(),
            soundness: self.soundness.clone(),
            oracle: self.oracle,
        };
        (hash, doc)
    }
}

#[derive(Clone)]
pub struct AppState {
    loaded: Arc<RwLock<Option<Arc<Loaded>>>>,
    pub log: AccessLog,
}

impl AppState {
    pub fn empty(log: AccessLog) -> Self {
        Self {
            loaded: Arc::new(RwLock::new(None)),
            log,
        }
    }

    pub fn with_config(doc: &ConfigDocument, log: AccessLog) -> Result<(Self, Vec<Submission>)> {
        let state = Self::empty(log);
        let queued = state.install(doc)?;
        Ok((state, queued))
    }

    /// Replace the loaded configuration.
    pub fn install(&self, doc: &ConfigDocument) -> Result<Vec<Submission>> {
        let (loaded, queued) = Loaded::new(doc)?;
        *self.loaded.write().unwrap_or_else(poisoned) = Some(Arc::new(loaded));
        Ok(queued)
    }

    pub fn current(&self) -> Option<Arc<Loaded>> {
        self.loaded.read().unwrap_or_else(poisoned).clone()
    }
}
