use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use idss_cli::{
    emit, load_config, rejection_lines, render, render_csv, render_verify, run_score, run_verify, CliError, Format,
    ScoreOptions,
};
use idss_core::DecisionId;
use idss_service::{AccessLog, AppState};

#[derive(Parser)]
#[command(name = "idss", version, about = "Score policies over a network of panel models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Admit queued evidence and rank the decisions.
    Score {
        config: PathBuf,
        /// Report only this decision; repeatable.
        #[arg(long = "decision", value_name = "ID")]
        decisions: Vec<String>,
        /// Seed of the Monte Carlo cross-check.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the CSV here.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// What to print on stdout.
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
    /// Report the soundness verdict and the evidence ledger.
    Verify { config: PathBuf },
    /// Serve the HTTP interface.
    Serve {
        /// Configuration to load at start.
        config: Option<PathBuf>,
        #[arg(long, env = "IDSS_BIND", default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, env = "IDSS_PORT", default_value_t = 8080)]
        port: u16,
        /// Access log file; stderr when absent.
        #[arg(long, env = "IDSS_ACCESS_LOG", value_name = "PATH")]
        access_log: Option<PathBuf>,
    },
    /// Print the configuration JSON Schema.
    Schema,
}

fn score(
    config: PathBuf,
    decisions: Vec<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: FormatArg,
) -> Result<(), CliError> {
    let doc = load_config(&config)?;
    let opts = ScoreOptions {
        decisions: decisions.into_iter().map(DecisionId).collect(),
        seed,
        ..Default::default()
    };
    let report = run_score(&doc, &opts)?;
    for line in rejection_lines(&report.ledger) {
        eprintln!("{line}");
    }
    let format = match format {
        FormatArg::Table => Format::Table,
        FormatArg::Csv => Format::Csv,
    };
    emit(&render(&report, format), None)?;
    if let Some(path) = &out {
        emit(&render_csv(&report), Some(path))?;
    }
    if report.scores.is_empty() {
        return Err(CliError::Runtime("no decisions to score".into()));
    }
    Ok(())
}

fn verify(config: PathBuf) -> Result<(), CliError> {
    let doc = load_config(&config)?;
    let report = run_verify(&doc)?;
    emit(&render_verify(&report), None)?;
    if !report.verdict.derivable {
        let missing: Vec<String> =
            report.verdict.missing.iter().map(|(p, c)| format!("{p} lacks {}", c.name())).collect();
        return Err(CliError::Runtime(format!("not derivable: {}", missing.join(", "))));
    }
    Ok(())
}

fn serve(config: Option<PathBuf>, bind: IpAddr, port: u16, access_log: Option<PathBuf>) -> Result<(), CliError> {
    let log = match access_log {
        None => AccessLog::stderr(),
        Some(p) => {
            let f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            AccessLog::new(f)
        }
    };
    let state = match config {
        None => AppState::empty(log),
        Some(path) => {
            let doc = load_config(&path)?;
            let (state, queued) = AppState::with_config(&doc, log)?;
            for line in rejection_lines(&queued) {
                eprintln!("{line}");
            }
            state
        }
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(idss_service::serve(SocketAddr::new(bind, port), state))
        .map_err(|e| CliError::Runtime(format!("{bind}:{port}: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Score { config, decisions, seed, out, format } => score(config, decisions, seed, out, format),
        Command::Verify { config } => verify(config),
        Command::Serve { config, bind, port, access_log } => serve(config, bind, port, access_log),
        Command::Schema => {
            let schema = serde_json::to_string_pretty(&idss_core::config::config_schema()).expect("schema serializes");
            emit(&format!("{schema}\n"), None)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            for line in e.diagnostics() {
                eprintln!("idss: {line}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
