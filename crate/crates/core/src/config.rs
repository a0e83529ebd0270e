//! The configuration document: common-knowledge bundle, panel declarations,
//! queued evidence and oracle settings in one JSON file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admissibility::soundness::SoundnessDeclaration;
use crate::admissibility::EvidenceItem;
use crate::causal::CausalDeclaration;
use crate::ck::{validate_ck, CkBundle, DecisionSpace, StructuralConsensus, UtilitySpec, Violation};
use crate::panels::{Panel, Placement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct OracleSettings {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    100_000
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: default_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ConfigDocument {
    pub decisions: DecisionSpace,
    pub structure: StructuralConsensus,
    pub utility: UtilitySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub causal: Option<CausalDeclaration>,
    pub panels: Vec<Panel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<EvidenceItem>,
    /// Conditions each panel puts into the common-knowledge class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soundness: Option<SoundnessDeclaration>,
    #[serde(default)]
    pub oracle: OracleSettings,
}

impl ConfigDocument {
    pub fn ck(&self) -> CkBundle {
        CkBundle {
            decisions: self.decisions.clone(),
            structure: self.structure.clone(),
            utility: self.utility.clone(),
            causal: self.causal.clone(),
        }
    }

    pub fn panel_map(&self) -> BTreeMap<crate::PanelId, Panel> {
        self.panels.iter().map(|p| (p.id.clone(), p.clone())).collect()
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("schema violation at line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },

    #[error("{}", integrity_summary(.0))]
    Integrity(Vec<Violation>),
}

fn integrity_summary(v: &[Violation]) -> String {
    let lines: Vec<String> = v.iter().map(|x| format!("[{}] {}", x.code, x.message)).collect();
    format!("{} integrity violation(s): {}", v.len(), lines.join("; "))
}

pub fn parse_config(text: &str) -> Result<ConfigDocument, ConfigError> {
    let doc: ConfigDocument = serde_json::from_str(text).map_err(|e| {
        let (line, column, message) = (e.line(), e.column(), e.to_string());
        if e.is_data() {
            ConfigError::Schema { line, column, message }
        } else {
            ConfigError::Parse { line, column, message }
        }
    })?;
    let violations = check_integrity(&doc);
    if violations.is_empty() {
        Ok(doc)
    } else {
        Err(ConfigError::Integrity(violations))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigDocument, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// Referential integrity beyond the bundle's own invariants.
pub fn check_integrity(doc: &ConfigDocument) -> Vec<Violation> {
    let ck = doc.ck();
    let mut out = validate_ck(&ck);
    let sc = &doc.structure;

    let mut seen = BTreeSet::new();
    for p in &doc.panels {
        if !seen.insert(p.id.as_str()) {
            out.push(Violation::new("duplicate-panel", format!("panel `{}` declared twice", p.id)).subjects([&p.id]));
        }
        if !sc.has_panel(p.id.as_str()) {
            out.push(
                Violation::new("unknown-panel", format!("panel model `{}` is not a declared panel", p.id))
                    .subjects([&p.id]),
            );
            continue;
        }
        match sc.variable(p.variable.as_str()) {
            None => out.push(
                Violation::new(
                    "unknown-variable",
                    format!("panel `{}` delivers undeclared variable `{}`", p.id, p.variable),
                )
                .subjects([&p.variable]),
            ),
            Some(decl) if decl.owner != p.id => out.push(
                Violation::new(
                    "owner-mismatch",
                    format!("`{}` is owned by `{}` but delivered by `{}`", p.variable, decl.owner, p.id),
                )
                .subjects([&p.id]),
            ),
            Some(decl) => {
                let parents: Vec<_> = sc.parents(decl.id.as_str()).collect();
                let parent_regions = parents
                    .first()
                    .and_then(|q| sc.variable(q.as_str()))
                    .map(|q| q.regions);
                let placement = Placement {
                    regions: decl.regions,
                    parent_regions,
                    slots: if decl.time_indexed { sc.horizon } else { 1 },
                };
                if parents.len() <= 1 {
                    if let Err(e) = p.validate(placement) {
                        out.push(Violation::new("panel-state", e.to_string()).subjects([&p.id]));
                    }
                }
                for d in p.declared_decisions() {
                    if doc.decisions.get(d.as_str()).is_none() {
                        out.push(
                            Violation::new(
                                "unknown-decision",
                                format!("panel `{}` declares a state for undeclared decision `{d}`", p.id),
                            )
                            .subjects([d]),
                        );
                    }
                }
            }
        }
    }
    for v in &sc.variables {
        if !doc.panels.iter().any(|p| p.variable == v.id) {
            out.push(
                Violation::new("undelivered-variable", format!("no panel model delivers `{}`", v.id))
                    .subjects([&v.id]),
            );
        }
    }

    let mut ids = BTreeSet::new();
    for e in &doc.evidence {
        if !ids.insert(e.id.as_str()) {
            out.push(Violation::new("duplicate-evidence", format!("evidence `{}` queued twice", e.id)));
        }
        for p in &e.footprint {
            if !sc.has_panel(p.as_str()) {
                out.push(
                    Violation::new(
                        "unknown-panel",
                        format!("evidence `{}` names undeclared panel `{p}` in its footprint", e.id),
                    )
                    .subjects([p]),
                );
            }
        }
        for d in &e.decisions {
            if doc.decisions.get(d.as_str()).is_none() {
                out.push(
                    Violation::new("unknown-decision", format!("evidence `{}` targets undeclared decision `{d}`", e.id))
                        .subjects([d]),
                );
            }
        }
    }

    if let Some(s) = &doc.soundness {
        for p in s.conditions.keys() {
            if !sc.has_panel(p.as_str()) {
                out.push(
                    Violation::new("unknown-panel", format!("soundness declaration names undeclared panel `{p}`"))
                        .subjects([p]),
                );
            }
        }
    }
    if let Some(c) = &doc.causal {
        for v in &c.interventionable {
            if sc.variable(v.as_str()).is_none() {
                out.push(
                    Violation::new("unknown-variable", format!("interventionable variable `{v}` is not declared"))
                        .subjects([v]),
                );
            }
        }
    }
    if doc.oracle.samples < crate::oracle::MIN_SAMPLES {
        out.push(Violation::new(
            "oracle-samples",
            format!("oracle runs need at least {} samples", crate::oracle::MIN_SAMPLES),
        ));
    }
    out
}

/// JSON Schema of the configuration document.
pub fn config_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(ConfigDocument)).expect("schemas serialize")
}
