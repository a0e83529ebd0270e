//! Batch front end: load a configuration, admit its queued evidence, then
//! rank the decisions or audit the soundness argument.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use idss_core::admissibility::soundness::Verdict;
use idss_core::admissibility::Admission;
use idss_core::config::{parse_config, ConfigDocument, ConfigError};
use idss_core::engine::{panel_hash, Engine, Submission};
use idss_core::par::Strategy;
use idss_core::propagation::PolicyScore;
use idss_core::{DecisionId, IdssError, PanelId};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Config {
        path: String,
        #[source]
        source: ConfigError,
    },

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => 1,
            CliError::Runtime(_) => 2,
        }
    }

    /// Line-per-problem diagnostics, prefixed `path:line:column` where a
    /// position is known.
    pub fn diagnostics(&self) -> Vec<String> {
        match self {
            CliError::Config { path, source } => match source {
                ConfigError::Parse { line, column, message } => {
                    vec![format!("{path}:{line}:{column}: parse error: {message}")]
                }
                ConfigError::Schema { line, column, message } => {
                    vec![format!("{path}:{line}:{column}: schema error: {message}")]
                }
                ConfigError::Integrity(v) => v
                    .iter()
                    .map(|x| {
                        let subjects = if x.subjects.is_empty() {
                            String::new()
                        } else {
                            format!(" ({})", x.subjects.join(", "))
                        };
                        format!("{path}: integrity violation [{}] {}{subjects}", x.code, x.message)
                    })
                    .collect(),
                ConfigError::Io { .. } => vec![format!("{path}: {source}")],
            },
            other => vec![other.to_string()],
        }
    }
}

impl From<IdssError> for CliError {
    fn from(e: IdssError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Read and check a configuration. An empty decision space is loadable so
/// that scoring can report it.
pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigDocument, CliError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Config {
        path: shown.clone(),
        source: ConfigError::Io {
            path: shown.clone(),
            source,
        },
    })?;
    match parse_config(&text) {
        Ok(doc) => Ok(doc),
        Err(ConfigError::Integrity(v)) if v.iter().all(|x| x.code == "empty-decisions") => {
            Ok(serde_json::from_str(&text).expect("parsed above"))
        }
        Err(source) => Err(CliError::Config { path: shown, source }),
    }
}

/// `x` to twelve significant digits, positional where reasonable.
pub fn format_real(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    let s = if (-6..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    };
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_owned()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Table,
    Csv,
}

#[derive(Debug, Clone, Default)]
pub struct ScoreOptions {
    /// Decisions to report; all when empty.
    pub decisions: Vec<DecisionId>,
    /// Seed of the Monte Carlo cross-check in the table; the configured
    /// seed when absent.
    pub seed: Option<u64>,
    pub strategy: Strategy,
}

#[derive(Debug, Clone)]
pub struct OracleColumn {
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone)]
pub struct ScoreReport {
    pub hash: String,
    pub ledger: Vec<Submission>,
    pub attributes: Vec<String>,
    pub scores: Vec<PolicyScore>,
    pub oracle: Vec<OracleColumn>,
    pub seed: u64,
    pub samples: usize,
}

fn admit_queued(doc: &ConfigDocument) -> Result<(Engine, Vec<Submission>), CliError> {
    let mut engine = Engine::from_config(doc);
    let ledger = engine.submit_all(&doc.evidence)?;
    Ok((engine, ledger))
}

/// Admit queued evidence, freeze the snapshot and rank.
pub fn run_score(doc: &ConfigDocument, opts: &ScoreOptions) -> Result<ScoreReport, CliError> {
    for d in &opts.decisions {
        if doc.decisions.get(d.as_str()).is_none() {
            return Err(CliError::Usage(format!("unknown decision `{d}`")));
        }
    }
    let (engine, ledger) = admit_queued(doc)?;
    let keep = (!opts.decisions.is_empty()).then_some(opts.decisions.as_slice());
    let scores = engine.rank(keep, opts.strategy)?;
    let seed = opts.seed.unwrap_or(doc.oracle.seed);
    let samples = doc.oracle.samples;
    let oracle = scores
        .iter()
        .map(|s| {
            engine
                .monte_carlo(s.decision.as_str(), samples, seed, opts.strategy)
                .map(|e| OracleColumn { mean: e.mean, se: e.se })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScoreReport {
        hash: engine.hash()?,
        ledger,
        attributes: doc.utility.terms.iter().map(|t| t.label()).collect(),
        scores,
        oracle,
        seed,
        samples,
    })
}

/// One row per decision: decision, total, then each attribute.
pub fn render_csv(r: &ScoreReport) -> String {
    let mut out = String::from("decision,total");
    for a in &r.attributes {
        out.push(',');
        out.push_str(&csv_field(a));
    }
    out.push('\n');
    for s in &r.scores {
        out.push_str(&csv_field(s.decision.as_str()));
        out.push(',');
        out.push_str(&format_real(s.total));
        for t in &s.breakdown {
            out.push(',');
            out.push_str(&format_real(t.value));
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn aligned(rows: &[Vec<String>], numeric_from: usize) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c >= numeric_from {
                    format!("{s:>w$}", w = widths[c])
                } else {
                    format!("{s:<w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn render_table(r: &ScoreReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "snapshot {}", r.hash);
    let mut header = vec!["rank".to_owned(), "decision".into(), "total".into(), "oracle".into(), "se".into()];
    header.extend(r.attributes.iter().cloned());
    let mut rows = vec![header];
    for (i, (s, o)) in r.scores.iter().zip(&r.oracle).enumerate() {
        let mut row = vec![
            (i + 1).to_string(),
            s.decision.to_string(),
            format_real(s.total),
            format_real(o.mean),
            format_real(o.se),
        ];
        row.extend(s.breakdown.iter().map(|t| format_real(t.value)));
        rows.push(row);
    }
    out.push_str(&aligned(&rows, 2));
    let _ = writeln!(out, "oracle: {} draws, seed {}", r.samples, r.seed);
    out
}

pub fn render(r: &ScoreReport, format: Format) -> String {
    match format {
        Format::Table => render_table(r),
        Format::Csv => render_csv(r),
    }
}

/// Rejected queued items, one line each.
pub fn rejection_lines(ledger: &[Submission]) -> Vec<String> {
    ledger
        .iter()
        .filter_map(|s| match &s.admission {
            Admission::Rejected { code, narrative } => Some(format!("rejected {}: {code}: {narrative}", s.item)),
            Admission::Admitted { .. } => None,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub verdict: Verdict,
    pub ledger: Vec<Submission>,
    pub panel_hashes: Vec<(PanelId, String, String)>,
}

pub fn run_verify(doc: &ConfigDocument) -> Result<VerifyReport, CliError> {
    let before = Engine::from_config(doc);
    let (after, ledger) = admit_queued(doc)?;
    let panel_hashes = before
        .panels
        .iter()
        .map(|(id, p)| Ok((id.clone(), panel_hash(p)?, panel_hash(&after.panels[id])?)))
        .collect::<Result<Vec<_>, IdssError>>()?;
    Ok(VerifyReport {
        verdict: after.verify()?,
        ledger,
        panel_hashes,
    })
}

pub fn render_verify(r: &VerifyReport) -> String {
    let v = &r.verdict;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "verdict: {} (depth bound {})",
        if v.derivable { "derivable" } else { "not derivable" },
        v.depth_bound
    );
    for p in &v.panels {
        for t in &p.targets {
            let _ = writeln!(
                out,
                "{}: {} {}",
                p.panel,
                t.statement,
                if t.derived { "derived" } else { "not derivable" }
            );
            for line in &t.proof {
                let _ = writeln!(out, "    {line}");
            }
        }
    }
    for (p, c) in &v.missing {
        let _ = writeln!(out, "missing: {p} does not declare `{}`", c.name());
    }
    let _ = writeln!(out, "evidence:");
    if r.ledger.is_empty() {
        let _ = writeln!(out, "  (none queued)");
    }
    for s in &r.ledger {
        match &s.admission {
            Admission::Admitted { routed } => {
                let panels: Vec<&str> = routed.iter().map(|x| x.panel.as_str()).collect();
                let _ = writeln!(out, "  admit  {} -> {}", s.item, panels.join(", "));
            }
            Admission::Rejected { code, narrative } => {
                let _ = writeln!(out, "  reject {} [{code}] {narrative}", s.item);
            }
        }
    }
    let _ = writeln!(out, "panels:");
    let rows: Vec<Vec<String>> = std::iter::once(vec!["panel".into(), "before".into(), "after".into()])
        .chain(
            r.panel_hashes
                .iter()
                .map(|(id, b, a)| vec![id.to_string(), b[..16].to_owned(), a[..16].to_owned()]),
        )
        .collect();
    for line in aligned(&rows, usize::MAX).lines() {
        let _ = writeln!(out, "  {line}");
    }
    out
}

/// Write `text` to `path`, or stdout when absent.
pub fn emit(text: &str, path: Option<&PathBuf>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}
