//! Config → data → protocol → report.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::accountant::calibrate_sigma;
use crate::config::{Mode, RunConfig};
use crate::data::{load_csv, shard_with_duplication, split_train_test, synthetic_adult, Schema, TabularDataset};
use crate::federation::{
    run_baseline, run_fpfl, AgentPrivacy, Baseline, FairTrajectory, FederatedData, FederatedOutcome,
    FederationSetup, MetricsReport, RoundMetrics,
};
use crate::seed::{stream, Phase, Purpose, GLOBAL_AGENT};
use crate::{Error, Result};

/// Header of the CSV summary.
pub const CSV_HEADER: &str = "mode,fairness,epsilon,accuracy,demp,eo,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub rows: usize,
    pub dropped_rows: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub features: usize,
    pub agents: usize,
    pub shard_size: usize,
    pub duplicated_rows: usize,
    pub stratified: bool,
}

/// Everything one run produced. Re-running `config` reproduces it exactly
/// (except `wall_clock_secs`, which is only present when requested).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub partial: bool,
    pub abort_reason: Option<String>,
    pub warnings: Vec<String>,
    pub data: Option<DataSummary>,
    /// Noise multiplier actually used (FPFL only).
    pub sigma: Option<f64>,
    pub sigma_calibrated: bool,
    pub rounds: Vec<RoundMetrics>,
    pub final_metrics: Option<MetricsReport>,
    pub privacy: Vec<AgentPrivacy>,
    pub trajectories: Vec<FairTrajectory>,
    pub stopped_early: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_secs: Option<f64>,
}

impl RunReport {
    fn empty(config: RunConfig) -> Self {
        Self {
            config,
            partial: false,
            abort_reason: None,
            warnings: Vec::new(),
            data: None,
            sigma: None,
            sigma_calibrated: false,
            rounds: Vec::new(),
            final_metrics: None,
            privacy: Vec::new(),
            trajectories: Vec::new(),
            stopped_early: false,
            wall_clock_secs: None,
        }
    }

    /// Largest per-agent ε; `None` if unbounded or not applicable.
    pub fn epsilon(&self) -> Option<f64> {
        if self.privacy.is_empty() {
            return None;
        }
        self.privacy
            .iter()
            .map(|p| p.epsilon)
            .try_fold(0.0f64, |acc, e| e.map(|e| acc.max(e)))
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One CSV summary row matching [`CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let m = self.final_metrics.as_ref();
        format!(
            "{},{},{},{},{},{},{}",
            self.config.mode,
            self.config.fairness,
            self.epsilon().map_or_else(|| "inf".to_string(), |e| e.to_string()),
            opt(m.map(|m| m.accuracy)),
            opt(m.and_then(|m| m.demp)),
            opt(m.and_then(|m| m.eo)),
            self.config.seed
        )
    }
}

/// Loads the configured dataset (CSV + schema, or the generator).
/// Returns the dataset and the count of rows dropped for missing values.
pub fn load_dataset(cfg: &RunConfig) -> Result<(TabularDataset, usize)> {
    if cfg.is_synthetic() {
        let mut rng = stream(cfg.seed, GLOBAL_AGENT, Phase::Data, Purpose::Synthetic);
        return Ok((synthetic_adult(&cfg.synthetic, &mut rng)?, 0));
    }
    let schema_path = cfg
        .schema
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("a CSV dataset needs a schema".into()))?;
    let schema = Schema::from_file(schema_path)?;
    let loaded = load_csv(Path::new(&cfg.dataset), &schema)?;
    Ok((loaded.dataset, loaded.dropped_rows))
}

/// Split, shard and summarize. `n_target` below the training size is raised
/// to it (with a warning) rather than rejected.
pub fn prepare_data(cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<(FederatedData, DataSummary)> {
    let (ds, dropped) = load_dataset(cfg)?;
    let split = split_train_test(&ds, cfg.test_fraction, &mut stream(cfg.seed, GLOBAL_AGENT, Phase::Data, Purpose::Split))?;
    warnings.extend(split.warnings.iter().cloned());
    let agents = cfg.agents();
    let mut target = cfg.n_target;
    if target < split.train.len() {
        warnings.push(format!(
            "n_target {target} is below the {} training rows; using the training size",
            split.train.len()
        ));
        target = split.train.len();
    }
    let plan = shard_with_duplication(
        &split.train,
        agents,
        target,
        &mut stream(cfg.seed, GLOBAL_AGENT, Phase::Data, Purpose::Shard),
    )?;
    let summary = DataSummary {
        rows: ds.len(),
        dropped_rows: dropped,
        train_rows: split.train.len(),
        test_rows: split.test.len(),
        features: ds.n_features,
        agents,
        shard_size: plan.shard_size(),
        duplicated_rows: plan.duplicated.len(),
        stratified: split.stratified,
    };
    Ok((
        FederatedData {
            train: split.train,
            test: split.test,
            plan,
        },
        summary,
    ))
}

/// Noisy steps each agent takes over the whole run.
pub fn planned_steps(cfg: &RunConfig, shard_size: usize) -> (f64, u64) {
    let q = (cfg.phase2.batch_size as f64 / shard_size as f64).min(1.0);
    let per_epoch = (1.0 / q).ceil() as u64;
    (q, per_epoch * (cfg.phase2.local_epochs * cfg.phase2.rounds) as u64)
}

/// Runs one configured experiment. Validation errors come back as `Err`;
/// anything that fails after validation yields a partial report.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let cfg = cfg.clone().resolve()?;
    let start = Instant::now();
    let mut report = RunReport::empty(cfg.clone());
    if let Err(e) = run_into(&cfg, &mut report) {
        report.partial = true;
        report.abort_reason.get_or_insert_with(|| e.to_string());
    }
    if cfg.wall_clock {
        report.wall_clock_secs = Some(start.elapsed().as_secs_f64());
    }
    Ok(report)
}

fn run_into(cfg: &RunConfig, report: &mut RunReport) -> Result<()> {
    let (data, summary) = prepare_data(cfg, &mut report.warnings)?;
    let shard_size = summary.shard_size;
    report.data = Some(summary);

    let delta = cfg.delta();
    let sigma = match cfg.mode {
        Mode::Fpfl => {
            let (q, steps) = planned_steps(cfg, shard_size);
            match (cfg.phase2.sigma, cfg.phase2.epsilon) {
                (Some(s), _) => s,
                (None, Some(eps)) => {
                    report.sigma_calibrated = true;
                    calibrate_sigma(q, steps, delta, eps)?
                }
                (None, None) => unreachable!("validated"),
            }
        }
        Mode::B1 | Mode::B2 => 0.0,
    };
    if cfg.mode == Mode::Fpfl {
        report.sigma = Some(sigma);
    }

    let setup = FederationSetup {
        hidden: cfg.hidden.clone(),
        seed: cfg.seed,
        fairness: cfg.fairness,
        phase1: cfg.phase1.clone(),
        phase2: cfg.phase2.clone(),
        sigma,
        delta,
    };
    let outcome = match cfg.mode {
        Mode::Fpfl => run_fpfl(&setup, &data),
        Mode::B1 => run_baseline(&setup, &data, Baseline::B1),
        Mode::B2 => run_baseline(&setup, &data, Baseline::B2),
    };
    absorb(report, outcome)
}

fn absorb(report: &mut RunReport, o: FederatedOutcome) -> Result<()> {
    report.rounds = o.rounds;
    report.final_metrics = o.final_metrics;
    report.privacy = o.privacy;
    report.trajectories = o.trajectories;
    report.stopped_early = o.stopped_early;
    match o.abort {
        Some(msg) => Err(Error::Aborted(msg)),
        None => Ok(()),
    }
}

/// One run per ε target, with everything else from `base`.
pub fn sweep(base: &RunConfig, epsilons: &[f64]) -> Result<Vec<RunReport>> {
    epsilons
        .iter()
        .map(|&eps| {
            let mut cfg = base.clone();
            cfg.mode = Mode::Fpfl;
            cfg.phase2.epsilon = Some(eps);
            cfg.phase2.sigma = None;
            run(&cfg)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    JsonLines,
    CsvSummary,
}

/// Sorts by ε ascending; unbounded runs last, ties keep their order.
fn by_epsilon(reports: &[RunReport]) -> Vec<&RunReport> {
    let mut sorted: Vec<&RunReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        let key = |r: &RunReport| r.epsilon().unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b))
    });
    sorted
}

pub fn write_json_lines<W: Write>(reports: &[RunReport], mut w: W) -> Result<()> {
    for r in by_epsilon(reports) {
        writeln!(w, "{}", r.to_json_line()?)?;
    }
    Ok(())
}

pub fn write_csv_summary<W: Write>(reports: &[RunReport], mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in by_epsilon(reports) {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Writes `reports.jsonl` or `summary.csv` into `dir` and returns the path.
pub fn emit_report(reports: &[RunReport], format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let name = match format {
        ReportFormat::JsonLines => "reports.jsonl",
        ReportFormat::CsvSummary => "summary.csv",
    };
    let path = dir.join(name);
    let file = std::fs::File::create(&path)?;
    match format {
        ReportFormat::JsonLines => write_json_lines(reports, file)?,
        ReportFormat::CsvSummary => write_csv_summary(reports, file)?,
    }
    Ok(path)
}
