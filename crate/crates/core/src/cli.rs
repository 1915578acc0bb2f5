//! `qrs-sim` command line: single runs and the two experiment sweeps.
//!
//! Output layout: `<out>/<experiment>/<scheme>/...` with shared tables and the scheme
//! comparison directly under `<out>/<experiment>/`.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{self, write_migrations_csv, EngineError, RunOutput, Scheme};
use crate::metrics::{
    compare, time_series_rows, write_series_csv, Improvement, MetricsError, MetricsReport,
    SeriesRow,
};
use crate::scenario::{Scenario, ScenarioError};
use crate::telemetry::write_telemetry_csv;

#[derive(Debug, Parser)]
#[command(name = "qrs-sim", version, about = "QoS-aware SDN routing simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario.
    Run(CommonArgs),
    /// Sweep the number of flows and compare schemes.
    Test1 {
        #[command(flatten)]
        common: CommonArgs,
        /// Largest flow count of the sweep (default: every flow in the scenario).
        #[arg(long)]
        max_flows: Option<usize>,
    },
    /// Bucketed time series of a fixed number of flows under both schemes.
    Test2 {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 2)]
        flows: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Qrs,
    Llmp,
    Both,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file (default: the bundled congested scenario).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Scheme(s) to simulate; `run` defaults to the scenario's scheme, the sweeps to both.
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override the scenario seed (also redraws random host pairs).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write only the plot tables.
    #[arg(long)]
    pub plot_data: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl CliError {
    /// 2 for bad input, 1 for failures while running or writing.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) | CliError::Usage(_) => 2,
            CliError::Engine(
                EngineError::InvalidConfig(_) | EngineError::PinnedPath(_) | EngineError::Flow(_),
            ) => 2,
            _ => 1,
        }
    }
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| output_error(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| output_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| output_error(path, e))?;
    io::Write::write_all(&mut w, b"\n").map_err(|e| output_error(path, e))
}

fn write_table(path: &Path, x_label: &str, rows: &[SeriesRow]) -> Result<(), CliError> {
    write_series_csv(x_label, rows, create(path)?).map_err(|e| output_error(path, e))
}

fn load(args: &CommonArgs) -> Result<Scenario<f64>, CliError> {
    let mut scenario = match &args.scenario {
        Some(path) => Scenario::load(path)?,
        None => Scenario::bundled_default(),
    };
    if let Some(seed) = args.seed {
        scenario.set_seed(seed)?;
    }
    Ok(scenario)
}

fn schemes(arg: Option<SchemeArg>, default: &[Scheme]) -> Vec<Scheme> {
    match arg {
        Some(SchemeArg::Qrs) => vec![Scheme::Qrs],
        Some(SchemeArg::Llmp) => vec![Scheme::Llmp],
        Some(SchemeArg::Both) => vec![Scheme::Qrs, Scheme::Llmp],
        None => default.to_vec(),
    }
}

fn simulate(
    scenario: &Scenario<f64>,
    scheme: Scheme,
    flows: usize,
) -> Result<RunOutput<f64>, CliError> {
    let mut config = scenario.config.clone();
    config.scheme = scheme;
    log::info!("{}: {scheme} with {flows} flow(s)", scenario.name);
    Ok(engine::run(
        &scenario.topology,
        &scenario.workload_with_flows(flows),
        &config,
    )?)
}

/// Runs every `(flow count, scheme)` job in parallel, returning results in job order.
fn simulate_all(
    scenario: &Scenario<f64>,
    jobs: &[(usize, Scheme)],
) -> Result<Vec<RunOutput<f64>>, CliError> {
    jobs.par_iter()
        .map(|(n, s)| simulate(scenario, *s, *n))
        .collect()
}

fn write_run_files(
    scenario: &Scenario<f64>,
    dir: &Path,
    out: &RunOutput<f64>,
) -> Result<(), CliError> {
    write_json(&dir.join("report.json"), &out.report)?;
    let path = dir.join("migrations.csv");
    write_migrations_csv(&scenario.topology, out.routes.migrations(), create(&path)?)
        .map_err(|e| output_error(&path, e))?;
    let path = dir.join("telemetry.csv");
    write_telemetry_csv(&out.telemetry, create(&path)?).map_err(|e| output_error(&path, e))?;

    let path = dir.join("routes.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["flow_id", "path"])
        .map_err(|e| output_error(&path, e))?;
    for (flow, p) in out.routes.routes() {
        w.write_record([flow.to_string(), scenario.topology.path_label(p)])
            .map_err(|e| output_error(&path, e))?;
    }
    w.flush().map_err(|e| output_error(&path, e))
}

/// Headline numbers of one run.
#[derive(Debug, Clone, Serialize)]
struct Headline {
    avg_throughput_bps: f64,
    network_throughput_bps: f64,
    avg_e2e_delay_s: f64,
    avg_jitter_s: f64,
    migrations: usize,
    failed_flows: usize,
}

impl From<&MetricsReport<f64>> for Headline {
    fn from(r: &MetricsReport<f64>) -> Self {
        Headline {
            avg_throughput_bps: r.avg_throughput,
            network_throughput_bps: r.network_throughput,
            avg_e2e_delay_s: r.avg_e2e_delay,
            avg_jitter_s: r.avg_jitter,
            migrations: r.migrations,
            failed_flows: r.failed_flows,
        }
    }
}

/// QRS measured against LLMP at one sweep point.
#[derive(Debug, Clone, Serialize)]
struct ComparisonSummary {
    flow_count: usize,
    qrs: Headline,
    llmp: Headline,
    improvement_pct: Improvement<f64>,
}

fn summarize(
    flows: usize,
    qrs: &MetricsReport<f64>,
    llmp: &MetricsReport<f64>,
) -> Result<ComparisonSummary, CliError> {
    let c = compare(qrs, llmp)?;
    Ok(ComparisonSummary {
        flow_count: flows,
        qrs: qrs.into(),
        llmp: llmp.into(),
        improvement_pct: c.improvement_pct,
    })
}

fn pick<'a>(
    results: &'a [RunOutput<f64>],
    jobs: &[(usize, Scheme)],
    n: usize,
    s: Scheme,
) -> Option<&'a RunOutput<f64>> {
    jobs.iter().position(|j| *j == (n, s)).map(|i| &results[i])
}

pub fn cmd_run(args: &CommonArgs) -> Result<(), CliError> {
    let scenario = load(args)?;
    let schemes = schemes(args.scheme, &[scenario.config.scheme]);
    let n = scenario.flows().len();
    let jobs: Vec<_> = schemes.iter().map(|s| (n, *s)).collect();
    let results = simulate_all(&scenario, &jobs)?;
    let base = args.out.join("run");
    for (s, out) in schemes.iter().zip(&results) {
        let dir = base.join(s.to_string());
        write_table(
            &dir.join("series.csv"),
            "time_s",
            &time_series_rows(&out.report),
        )?;
        if !args.plot_data {
            write_run_files(&scenario, &dir, out)?;
        }
    }
    if let (Some(q), Some(l)) = (
        pick(&results, &jobs, n, Scheme::Qrs),
        pick(&results, &jobs, n, Scheme::Llmp),
    ) {
        if !args.plot_data {
            write_json(
                &base.join("comparison.json"),
                &summarize(n, &q.report, &l.report)?,
            )?;
        }
    }
    Ok(())
}

fn sweep_rows(
    metric_filter: &[&'static str],
    report: &MetricsReport<f64>,
    n: usize,
) -> Vec<SeriesRow> {
    [
        ("avg_jitter_s", report.avg_jitter),
        ("avg_e2e_delay_s", report.avg_e2e_delay),
        ("avg_throughput_bps", report.avg_throughput),
        ("network_throughput_bps", report.network_throughput),
    ]
    .into_iter()
    .filter(|(m, _)| metric_filter.contains(m))
    .map(|(metric, value)| SeriesRow {
        x: n as f64,
        metric,
        scheme: report.scheme.clone(),
        value,
    })
    .collect()
}

pub fn cmd_test1(args: &CommonArgs, max_flows: Option<usize>) -> Result<(), CliError> {
    let scenario = load(args)?;
    let available = scenario.flows().len();
    let max = max_flows.unwrap_or(available);
    if max == 0 || max > available {
        return Err(CliError::Usage(format!(
            "--max-flows must be within [1, {available}], got {max}"
        )));
    }
    let schemes = schemes(args.scheme, &[Scheme::Qrs, Scheme::Llmp]);
    let jobs: Vec<(usize, Scheme)> = (1..=max)
        .flat_map(|n| schemes.iter().map(move |s| (n, *s)))
        .collect();
    let results = simulate_all(&scenario, &jobs)?;
    let base = args.out.join("test1");

    for (file, metrics) in [
        ("jitter_vs_flows.csv", &["avg_jitter_s"][..]),
        ("delay_vs_flows.csv", &["avg_e2e_delay_s"][..]),
        (
            "throughput_vs_flows.csv",
            &["avg_throughput_bps", "network_throughput_bps"][..],
        ),
    ] {
        let rows: Vec<SeriesRow> = jobs
            .iter()
            .zip(&results)
            .flat_map(|((n, _), out)| sweep_rows(metrics, &out.report, *n))
            .collect();
        write_table(&base.join(file), "flow_count", &rows)?;
    }
    if args.plot_data {
        return Ok(());
    }
    for ((n, s), out) in jobs.iter().zip(&results) {
        write_run_files(
            &scenario,
            &base.join(s.to_string()).join(format!("flows_{n}")),
            out,
        )?;
    }
    if schemes.len() == 2 {
        let summary = (1..=max)
            .map(|n| {
                let q = pick(&results, &jobs, n, Scheme::Qrs).unwrap();
                let l = pick(&results, &jobs, n, Scheme::Llmp).unwrap();
                summarize(n, &q.report, &l.report)
            })
            .collect::<Result<Vec<_>, _>>()?;
        write_json(&base.join("comparison.json"), &summary)?;
    }
    Ok(())
}

pub fn cmd_test2(args: &CommonArgs, flows: usize) -> Result<(), CliError> {
    let scenario = load(args)?;
    let available = scenario.flows().len();
    if flows == 0 || flows > available {
        return Err(CliError::Usage(format!(
            "--flows must be within [1, {available}], got {flows}"
        )));
    }
    let schemes = schemes(args.scheme, &[Scheme::Qrs, Scheme::Llmp]);
    let jobs: Vec<(usize, Scheme)> = schemes.iter().map(|s| (flows, *s)).collect();
    let results = simulate_all(&scenario, &jobs)?;
    let base = args.out.join("test2");

    let rows: Vec<SeriesRow> = results
        .iter()
        .flat_map(|o| time_series_rows(&o.report))
        .collect();
    for (file, metric) in [
        ("jitter_vs_time.csv", "avg_jitter_s"),
        ("delay_vs_time.csv", "avg_e2e_delay_s"),
    ] {
        let table: Vec<SeriesRow> = rows
            .iter()
            .filter(|r| r.metric == metric)
            .cloned()
            .collect();
        write_table(&base.join(file), "time_s", &table)?;
    }
    if args.plot_data {
        return Ok(());
    }
    let throughput: Vec<SeriesRow> = rows
        .iter()
        .filter(|r| r.metric.ends_with("throughput_bps"))
        .cloned()
        .collect();
    write_table(&base.join("throughput_vs_time.csv"), "time_s", &throughput)?;
    for (s, out) in schemes.iter().zip(&results) {
        write_run_files(&scenario, &base.join(s.to_string()), out)?;
    }
    if let (Some(q), Some(l)) = (
        pick(&results, &jobs, flows, Scheme::Qrs),
        pick(&results, &jobs, flows, Scheme::Llmp),
    ) {
        write_json(
            &base.join("comparison.json"),
            &summarize(flows, &q.report, &l.report)?,
        )?;
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Test1 { common, max_flows } => cmd_test1(common, *max_flows),
        Command::Test2 { common, flows } => cmd_test2(common, *flows),
    }
}

/// Parses `args` and executes them; returns the process exit code. Diagnostics go to
/// stderr as a single `error: ...` line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let rendered = e.to_string();
            let line = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", line.trim());
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}
