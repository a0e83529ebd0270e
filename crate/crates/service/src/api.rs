//! Request handlers.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use idss_core::admissibility::soundness::Verdict;
use idss_core::admissibility::{Admission, EvidenceItem};
use idss_core::config::{parse_config, ConfigDocument, ConfigError};
use idss_core::engine::{normalize_weights, snapshot_hash, MomentSummary};
use idss_core::{DecisionId, IdssError};

use crate::state::{AppState, Loaded};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    details: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: None,
        }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid-request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(d) = self.details {
            body["details"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        let details = match &e {
            ConfigError::Parse { line, column, .. } | ConfigError::Schema { line, column, .. } => {
                json!({ "line": line, "column": column })
            }
            ConfigError::Integrity(v) => json!({ "violations": v }),
            ConfigError::Io { path, .. } => json!({ "path": path }),
        };
        ApiError::unprocessable(e.to_string()).with_details(details)
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn loaded(state: &AppState) -> ApiResult<Arc<Loaded>> {
    state
        .current()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no-config", "no configuration is loaded"))
}

/// Parse a JSON body; any failure is a 422 with the position.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| {
        ApiError::unprocessable(e.to_string()).with_details(json!({ "line": e.line(), "column": e.column() }))
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

#[derive(Serialize)]
pub struct CachedScore {
    pub weights: Vec<f64>,
    pub total: f64,
}

#[derive(Serialize)]
pub struct PolicyEntry {
    pub id: DecisionId,
    pub label: String,
    pub baseline: bool,
    pub cached_scores: Vec<CachedScore>,
}

pub async fn policies(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let l = loaded(&state)?;
    let (hash, mut cached) = l.cached();
    let policies: Vec<PolicyEntry> = l
        .ck
        .decisions
        .decisions
        .iter()
        .map(|d| PolicyEntry {
            id: d.id.clone(),
            label: d.label.clone(),
            baseline: d.id == l.ck.decisions.baseline,
            cached_scores: cached
                .remove(&d.id)
                .unwrap_or_default()
                .into_iter()
                .map(|(weights, total)| CachedScore { weights, total })
                .collect(),
        })
        .collect();
    Ok(Json(json!({ "hash": hash, "policies": policies })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub decision: DecisionId,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct AttributeScore {
    pub attribute: String,
    pub weight: f64,
    pub value: f64,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ScoreResponse {
    pub decision: DecisionId,
    pub hash: String,
    /// Effective weights, renormalised when overridden.
    pub weights: Vec<f64>,
    pub overridden: bool,
    pub total: f64,
    pub breakdown: Vec<AttributeScore>,
    pub cached: bool,
}

pub async fn score(State(state): State<AppState>, bytes: Bytes) -> ApiResult<Json<ScoreResponse>> {
    let l = loaded(&state)?;
    let req: ScoreRequest = body(&bytes)?;
    if l.ck.decisions.get(req.decision.as_str()).is_none() {
        return Err(ApiError::not_found(format!("unknown decision `{}`", req.decision)));
    }
    let terms = l.ck.utility.terms.len();
    let (weights, overridden) = match req.weights {
        None => (l.ck.utility.weights_for(req.decision.as_str()), false),
        Some(w) => {
            if w.len() != terms {
                return Err(ApiError::unprocessable(format!(
                    "{} weights for {terms} utility attributes",
                    w.len()
                )));
            }
            (normalize_weights(&w).map_err(|e| ApiError::unprocessable(e.to_string()))?, true)
        }
    };
    blocking(move || {
        let (hash, s, cached) = l.score(&req.decision, &weights).map_err(ApiError::internal)?;
        let breakdown = s
            .breakdown
            .iter()
            .zip(&weights)
            .map(|(t, w)| AttributeScore {
                attribute: t.attribute.clone(),
                weight: *w,
                value: t.value,
            })
            .collect();
        Ok(Json(ScoreResponse {
            decision: s.decision,
            hash,
            weights,
            overridden,
            total: s.total,
            breakdown,
            cached,
        }))
    })
    .await
}

pub async fn evidence(State(state): State<AppState>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let l = loaded(&state)?;
    let item: EvidenceItem = body(&bytes)?;
    let s = blocking(move || {
        l.submit(&item).map_err(|e| match e {
            IdssError::Evidence { .. }
            | IdssError::UnknownPanel(_)
            | IdssError::UnknownVariable(_)
            | IdssError::UnknownDecision(_)
            | IdssError::InvalidArgument(_)
            | IdssError::Shape(_)
            | IdssError::Structure(_) => ApiError::unprocessable(e.to_string()),
            other => ApiError::internal(other),
        })
    })
    .await?;
    let out = match &s.admission {
        Admission::Admitted { routed } => {
            let mut panels: Vec<&str> = routed.iter().map(|r| r.panel.as_str()).collect();
            panels.dedup();
            json!({ "item": s.item, "admitted": true, "routed_to": panels, "hash": s.hash_after,
                    "previous_hash": s.hash_before })
        }
        Admission::Rejected { code, narrative } => json!({
            "item": s.item, "admitted": false, "reason": code.as_str(), "narrative": narrative,
            "hash": s.hash_after, "previous_hash": s.hash_before
        }),
    };
    Ok(Json(out))
}

/// Soundness verdict with a readable trace.
pub fn verdict_json(v: &Verdict) -> Value {
    let missing: Vec<Value> = v
        .missing
        .iter()
        .map(|(p, c)| json!({ "panel": p, "condition": c.name() }))
        .collect();
    let status = if v.derivable { "derivable" } else { "not derivable" };
    let mut trace = Vec::new();
    for p in &v.panels {
        for t in &p.targets {
            if t.derived {
                trace.push(format!("{}: {} derived", p.panel, t.statement));
                trace.extend(t.proof.iter().map(|l| format!("  {l}")));
            } else {
                trace.push(format!("{}: {} not derivable", p.panel, t.statement));
            }
        }
    }
    for (p, c) in &v.missing {
        trace.push(format!("{p} does not declare `{}`", c.name()));
    }
    json!({ "verdict": status, "derivable": v.derivable, "depth_bound": v.depth_bound,
            "missing": missing, "panels": v.panels, "trace": trace })
}

pub async fn soundness(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let l = loaded(&state)?;
    let hash = l.hash();
    let v = blocking(move || l.verify().map_err(ApiError::internal)).await?;
    let mut out = verdict_json(&v);
    out["hash"] = json!(hash);
    Ok(Json(out))
}

#[derive(Serialize)]
struct DecisionSummaries<'a> {
    decision: &'a DecisionId,
    moments: Vec<&'a MomentSummary>,
}

pub async fn panel(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let l = loaded(&state)?;
    if !l.has_panel(&id) {
        return Err(ApiError::not_found(format!("unknown panel `{id}`")));
    }
    let (hash, s) = l.summaries(&id).map_err(ApiError::internal)?;
    let decisions: Vec<DecisionSummaries> = l
        .ck
        .decisions
        .ids()
        .map(|d| DecisionSummaries {
            decision: d,
            moments: s.summaries.iter().filter(|m| &m.decision == d).collect(),
        })
        .collect();
    Ok(Json(json!({ "panel": s.panel, "variable": s.variable, "kind": s.kind, "hash": hash,
                    "decisions": decisions })))
}

fn install(state: &AppState, doc: &ConfigDocument) -> ApiResult<Value> {
    let queued = state.install(doc).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let l = loaded(state)?;
    let ledger: Vec<Value> = queued
        .iter()
        .map(|s| match &s.admission {
            Admission::Admitted { .. } => json!({ "item": s.item, "admitted": true }),
            Admission::Rejected { code, .. } => json!({ "item": s.item, "admitted": false, "reason": code.as_str() }),
        })
        .collect();
    Ok(json!({ "hash": l.hash(), "decisions": l.ck.decisions.ids().collect::<Vec<_>>(), "evidence": ledger }))
}

pub async fn config(State(state): State<AppState>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let text = std::str::from_utf8(&bytes).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let doc = parse_config(text)?;
    Ok(Json(install(&state, &doc)?))
}

#[derive(Serialize, Deserialize)]
pub struct SnapshotBody {
    pub hash: String,
    pub document: ConfigDocument,
}

pub async fn export(State(state): State<AppState>) -> ApiResult<Json<SnapshotBody>> {
    let (hash, document) = loaded(&state)?.export();
    Ok(Json(SnapshotBody { hash, document }))
}

pub async fn import(State(state): State<AppState>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let snap: SnapshotBody = body(&bytes)?;
    let violations = idss_core::config::check_integrity(&snap.document);
    if !violations.is_empty() {
        return Err(ConfigError::Integrity(violations).into());
    }
    if !snap.document.evidence.is_empty() {
        return Err(ApiError::unprocessable("a snapshot carries no queued evidence"));
    }
    let actual = snapshot_hash(&snap.document.panel_map()).map_err(ApiError::internal)?;
    if actual != snap.hash {
        return Err(ApiError::unprocessable(format!(
            "snapshot hash {} does not match its panels ({actual})",
            snap.hash
        )));
    }
    Ok(Json(install(&state, &snap.document)?))
}
