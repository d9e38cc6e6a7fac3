use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use fpfl_core::config::parse_config;
use fpfl_core::experiment::{write_csv_summary, write_json_lines};
use fpfl_core::{emit_report, run, sweep, Error, ReportFormat, RunReport};

const EXIT_INVALID: u8 = 1;
const EXIT_ABORTED: u8 = 2;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// Fair and private federated training experiments.
///
/// Settings come from an optional TOML file, then from the flags below,
/// then from `--set key=value` overrides (e.g. `--set phase1.epochs=50`).
#[derive(Debug, Parser)]
#[command(name = "fpfl", version)]
struct Cli {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["b1", "b2", "fpfl"])]
    mode: Option<String>,
    #[arg(long, value_parser = ["demp", "eo"])]
    fairness: Option<String>,
    /// Target ε; the noise multiplier is calibrated to meet it.
    #[arg(long, conflicts_with = "sigma")]
    epsilon: Option<f64>,
    /// Noise multiplier, used as given.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV file, or `synthetic`.
    #[arg(long, value_name = "PATH")]
    dataset: Option<String>,
    #[arg(long, value_name = "PATH")]
    schema: Option<PathBuf>,
    /// Comma-separated ε targets; runs FPFL once per value.
    #[arg(long, value_name = "LIST", value_delimiter = ',', conflicts_with_all = ["epsilon", "sigma"])]
    sweep_epsilon: Option<Vec<f64>>,
    /// Output directory; reports go to stdout when omitted.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Cli {
    fn overrides(&self) -> Result<Vec<(String, String)>, Error> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("mode", self.mode.as_ref().map(|m| format!("{m:?}")));
        push("fairness", self.fairness.as_ref().map(|f| format!("{f:?}")));
        push("phase2.epsilon", self.epsilon.map(|v| format!("{v:?}")));
        push("phase2.sigma", self.sigma.map(|v| format!("{v:?}")));
        push("phase2.delta", self.delta.map(|v| format!("{v:?}")));
        push("agents", self.agents.map(|v| v.to_string()));
        push("phase2.rounds", self.rounds.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("dataset", self.dataset.as_ref().map(|d| format!("{d:?}")));
        push("schema", self.schema.as_ref().map(|s| format!("{:?}", s.display().to_string())));
        if self.sweep_epsilon.is_some() {
            push("mode", Some("\"fpfl\"".into()));
            // Placeholder so validation passes; each sweep entry overwrites it.
            push("phase2.epsilon", Some("1.0".into()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn execute(cli: &Cli) -> Result<Vec<RunReport>, Error> {
    let cfg = parse_config(cli.config.as_deref(), &cli.overrides()?)?;
    match &cli.sweep_epsilon {
        Some(list) => sweep(&cfg, list),
        None => Ok(vec![run(&cfg)?]),
    }
}

fn emit(cli: &Cli, reports: &[RunReport]) -> Result<(), Error> {
    let format = match cli.format {
        Format::Json => ReportFormat::JsonLines,
        Format::Csv => ReportFormat::CsvSummary,
    };
    match &cli.out {
        Some(dir) => {
            let path = emit_report(reports, format, dir)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            let stdout = std::io::stdout().lock();
            match format {
                ReportFormat::JsonLines => write_json_lines(reports, stdout),
                ReportFormat::CsvSummary => write_csv_summary(reports, stdout),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let reports = match execute(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    if let Err(e) = emit(&cli, &reports) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_ABORTED);
    }
    let aborted: Vec<&str> = reports.iter().filter_map(|r| r.abort_reason.as_deref()).collect();
    if aborted.is_empty() {
        ExitCode::SUCCESS
    } else {
        for reason in aborted {
            eprintln!("run aborted: {reason}");
        }
        ExitCode::from(EXIT_ABORTED)
    }
}
