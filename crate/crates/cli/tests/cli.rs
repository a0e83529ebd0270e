use std::path::PathBuf;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use idss_cli::{
    format_real, load_config, render_csv, render_table, render_verify, run_score, run_verify, CliError, ScoreOptions,
};
use idss_core::admissibility::Admission;
use idss_core::chain::{closed_form_chain_score, ChainParameters};
use idss_core::config::ConfigError;
use idss_core::par::Strategy;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn idss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idss")).args(args).output().unwrap()
}

fn total(name: &str) -> f64 {
    run_score(&load_config(fixture(name)).unwrap(), &ScoreOptions::default()).unwrap().scores[0].total
}

#[test]
fn loads_the_binary_example() {
    let doc = load_config(fixture("binary-two-panel.json")).unwrap();
    assert_eq!(doc.decisions.decisions.len(), 1);
    assert_eq!(doc.panels.len(), 2);
}

#[test]
fn empty_file_is_a_positioned_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    std::fs::write(&path, "").unwrap();
    let err = load_config(&path).unwrap_err();
    assert!(matches!(err, CliError::Config { source: ConfigError::Parse { line: 1, column: 0, .. }, .. }));
    assert_eq!(err.exit_code(), 1);
    assert!(err.diagnostics()[0].contains("empty.json:1:0: parse error"));
}

#[test]
fn schema_errors_point_at_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = std::fs::read_to_string(fixture("binary-two-panel.json"))
        .unwrap()
        .replacen("\"alpha\": 2.0", "\"alpha\": \"two\"", 1);
    let line = text.lines().position(|l| l.contains("\"two\"")).unwrap() + 1;
    std::fs::write(&path, text).unwrap();
    let err = load_config(&path).unwrap_err();
    let CliError::Config { source: ConfigError::Schema { line: got, .. }, .. } = &err else { panic!("{err}") };
    assert_eq!(*got, line);
    assert!(err.diagnostics()[0].contains(&format!("bad.json:{line}:")));
}

#[test]
fn undeclared_footprint_panel_is_named() {
    let err = load_config(fixture("undeclared-footprint.json")).unwrap_err();
    let CliError::Config { source: ConfigError::Integrity(v), .. } = &err else { panic!("{err}") };
    assert!(v.iter().any(|x| x.code == "unknown-panel" && x.subjects == ["G9"]));
    assert!(err.diagnostics().iter().any(|l| l.contains("G9")));
}

#[test]
fn linear_and_product_utilities() {
    // 0.5 (0.5 - 0.6 mu1) + 0.5 (0.5 - 0.4 mu2) with mu1 = 0.2, mu2 = 0.3.
    let (a, b11, b12) = (0.5, -0.3, -0.2);
    assert!((total("binary-linear.json") - (a + b11 * 0.2 + b12 * 0.3)).abs() < 1e-15);
    // 0.1 + 2 mu1 mu2.
    assert!((total("binary-exposure.json") - (0.1 + 2.0 * 0.2 * 0.3)).abs() < 1e-15);
}

#[test]
fn chain_total_is_the_closed_form() {
    let p = ChainParameters::random(&mut Xoshiro256PlusPlus::seed_from_u64(2024), 2, 2);
    let want = closed_form_chain_score(&p).unwrap();
    let got = total("chain.json");
    assert!((got - want).abs() <= 1e-9 * want.abs(), "{got} vs {want}");
}

#[test]
fn exposure_counts_are_rejected_once() {
    let doc = load_config(fixture("exposure-w-data.json")).unwrap();
    let report = run_score(&doc, &ScoreOptions::default()).unwrap();
    let rejected: Vec<_> = report
        .ledger
        .iter()
        .filter_map(|s| match &s.admission {
            Admission::Rejected { code, .. } => Some((s.item.as_str(), code.as_str())),
            _ => None,
        })
        .collect();
    assert_eq!(rejected, [("exposure-w", "confounds-parameters")]);
    assert_eq!(report.scores[0].total, 0.25);

    let out = idss(&["score", fixture("exposure-w-data.json").to_str().unwrap()]);
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().filter(|l| l.starts_with("rejected exposure-w: confounds-parameters")).count(), 1);
}

#[test]
fn verify_reports_verdict_ledger_and_hashes() {
    let r = run_verify(&load_config(fixture("exposure-w-data.json")).unwrap()).unwrap();
    assert!(r.verdict.derivable);
    let text = render_verify(&r);
    assert!(text.starts_with("verdict: derivable"));
    assert!(text.contains("admit  survey-y1 -> G1"));
    assert!(text.contains("reject exposure-w [confounds-parameters]"));
    for (_, before, after) in &r.panel_hashes {
        assert_ne!(before, after);
    }
    let out = idss(&["verify", fixture("binary-two-panel.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("(none queued)"));
}

#[test]
fn missing_cutting_is_not_derivable() {
    let r = run_verify(&load_config(fixture("ablated-soundness.json")).unwrap()).unwrap();
    assert!(!r.verdict.derivable);
    let text = render_verify(&r);
    assert!(text.starts_with("verdict: not derivable"));
    assert!(text.contains("missing: G1 does not declare `cutting`"));
    let out = idss(&["verify", fixture("ablated-soundness.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("not derivable: G1 lacks cutting"));
}

#[test]
fn twelve_significant_digits() {
    assert_eq!(format_real(0.38), "0.380000000000");
    assert_eq!(format_real(-0.0), "0");
    assert_eq!(format_real(0.0), "0");
    assert_eq!(format_real(1234.5), "1234.50000000");
    assert_eq!(format_real(-2.0 / 3.0), "-0.666666666667");
    assert_eq!(format_real(9.999999999999995), "10.0000000000");
    assert_eq!(format_real(1.5e-9), "1.50000000000e-9");
    assert_eq!(format_real(2.5e13), "2.50000000000e13");
}

#[test]
fn csv_layout() {
    let doc = load_config(fixture("food-security.json")).unwrap();
    let report = run_score(&doc, &ScoreOptions::default()).unwrap();
    let csv = render_csv(&report);
    assert!(!csv.contains('\r'));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(&header[..2], ["decision", "total"]);
    assert_eq!(header.len(), 2 + doc.utility.terms.len());
    for (line, s) in lines[1..].iter().zip(&report.scores) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), header.len());
        assert_eq!(cells[0], s.decision.as_str());
        assert_eq!(cells[1], format_real(s.total));
    }
    let table = render_table(&report);
    // Numeric columns are right-aligned, so every row ends at the same column.
    let widths: Vec<usize> = table.lines().skip(1).take(4).map(|l| l.chars().count()).collect();
    assert!(widths.windows(2).all(|w| w[0] == w[1]), "{table}");
}

#[test]
fn decision_filter_and_strategies() {
    let doc = load_config(fixture("food-security.json")).unwrap();
    let all = run_score(&doc, &ScoreOptions::default()).unwrap();
    let seq = run_score(&doc, &ScoreOptions { strategy: Strategy::Sequential, ..Default::default() }).unwrap();
    assert_eq!(render_table(&all), render_table(&seq));
    let one = run_score(&doc, &ScoreOptions { decisions: vec!["subsidy".into()], ..Default::default() }).unwrap();
    assert_eq!(one.scores.len(), 1);
    assert_eq!(one.scores[0], all.scores.iter().find(|s| s.decision.as_str() == "subsidy").unwrap().clone());
    let bad = run_score(&doc, &ScoreOptions { decisions: vec!["nope".into()], ..Default::default() });
    assert_eq!(bad.unwrap_err().exit_code(), 1);
}

#[test]
fn seed_moves_only_the_oracle_column() {
    let doc = load_config(fixture("binary-two-panel.json")).unwrap();
    let a = run_score(&doc, &ScoreOptions { seed: Some(1), ..Default::default() }).unwrap();
    let b = run_score(&doc, &ScoreOptions { seed: Some(2), ..Default::default() }).unwrap();
    assert_eq!(a.scores, b.scores);
    assert_ne!(a.oracle[0].mean, b.oracle[0].mean);
    assert_eq!(render_csv(&a), render_csv(&b));
}

#[test]
fn repeated_batch_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("food-security.json");
    let mut outputs = Vec::new();
    for i in 0..2 {
        let csv = dir.path().join(format!("run{i}.csv"));
        let out = idss(&["score", config.to_str().unwrap(), "--seed", "9", "--out", csv.to_str().unwrap()]);
        assert!(out.status.success());
        outputs.push((out.stdout, std::fs::read(&csv).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let csv = idss(&["score", config.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(csv.stdout, outputs[0].1);
}

#[test]
fn zero_decisions_give_an_empty_table_and_fail() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("none.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("binary-two-panel.json")).unwrap()).unwrap();
    doc["decisions"]["decisions"] = serde_json::json!([]);
    std::fs::write(&path, doc.to_string()).unwrap();
    let out = idss(&["score", path.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "decision,total,Y2@t1r0\n");
    assert!(String::from_utf8(out.stderr).unwrap().contains("no decisions to score"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(idss(&["score"]).status.code(), Some(1));
    assert_eq!(idss(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(idss(&["score", "/nonexistent/config.json"]).status.code(), Some(1));
    assert_eq!(idss(&["score", fixture("chain.json").to_str().unwrap(), "--format", "xml"]).status.code(), Some(1));
}

#[test]
fn schema_subcommand_prints_the_published_schema() {
    let out = idss(&["schema"]);
    assert!(out.status.success());
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let published: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schema/config.schema.json"))
            .unwrap(),
    )
    .unwrap();
    assert_eq!(printed, published);
}
