//! `wincrt`: win statistics for cluster-randomized trials.
//!
//! Structured output (`--out`, `--json`) is JSON throughout; text reports
//! round to 3 decimals.

mod planner;

use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use wincrt_client::ClientError;
use wincrt_core::api::CalibrationRequest;
use wincrt_core::design::{DesignInputs, DesignResult, Estimand, Sided, TestKind};
use wincrt_core::generative::GenerativeSpec;
use wincrt_core::io::{
    design_inputs_from_json, parse_long_format, recast_estimand, AnalysisReport, LongFormatOptions,
};
use wincrt_core::sim::{run_grid, summary_table, ScenarioGrid};
use wincrt_core::{estimate, Alternative};

use planner::Planner;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] wincrt_core::Error),
    #[error(transparent)]
    Remote(#[from] ClientError),
    #[error("cannot read `{path}`: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write output: {0}")]
    Write(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

#[derive(Parser)]
#[command(name = "wincrt", version, about = "Win statistics for cluster-randomized trials")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Wald test variant.
    #[arg(long, global = true)]
    test: Option<TestKind>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// two.sided, less or greater.
    #[arg(long, global = true)]
    alternative: Option<Alternative>,
    /// wd, logwr, logwo or all.
    #[arg(long, global = true)]
    estimand: Option<EstimandChoice>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel computation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write structured (JSON) output to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print structured output instead of the text report.
    #[arg(long, global = true)]
    json: bool,
    /// Base URL of a planning service; design and calibrate run there.
    #[arg(long, global = true, env = "WINCRT_REMOTE")]
    remote: Option<String>,
}

#[derive(Clone, Copy)]
enum EstimandChoice {
    One(Estimand),
    All,
}

impl std::str::FromStr for EstimandChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            Ok(EstimandChoice::All)
        } else {
            s.parse().map(EstimandChoice::One)
        }
    }
}

impl EstimandChoice {
    fn list(self) -> Vec<Estimand> {
        match self {
            EstimandChoice::One(e) => vec![e],
            EstimandChoice::All => Estimand::ALL.to_vec(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate win statistics from a long-format trial file.
    Analyze(AnalyzeArgs),
    /// Power at a given M and the required number of clusters.
    Design(DesignArgs),
    /// Run a Monte Carlo scenario grid.
    Simulate(SimulateArgs),
    /// Derive design inputs from a generative model.
    Calibrate(CalibrateArgs),
    /// Start the planning service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Delimited file, one row per (subject, tier).
    file: PathBuf,
    #[arg(long, default_value = "id")]
    id_col: String,
    #[arg(long, default_value = "trt")]
    trt_col: String,
    #[arg(long, default_value = "cluster")]
    cluster_col: String,
    #[arg(long, default_value = "outcome")]
    outcome_col: String,
    #[arg(long, default_value = "tier")]
    tier_col: String,
    /// Field delimiter; inferred from the extension when absent.
    #[arg(long)]
    delimiter: Option<char>,
}

#[derive(Args)]
struct DesignArgs {
    /// Design inputs document (or calibration output); `-` reads stdin.
    file: PathBuf,
    /// Evaluate power at this number of clusters.
    #[arg(long)]
    m: Option<u64>,
    /// Target power for the required-M search.
    #[arg(long)]
    power: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario grid document.
    file: PathBuf,
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Generative model, bare or as `{"spec": ..., "options": ...}`; `-` reads stdin.
    file: PathBuf,
    #[arg(long)]
    pair_draws: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    /// Seconds to wait for a remote job.
    #[arg(long, default_value_t = 3600)]
    timeout: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "WINCRT_BIND", default_value = "127.0.0.1:8080")]
    bind: String,
    /// Seconds a finished calibration job stays retrievable.
    #[arg(long, default_value_t = 3600)]
    job_ttl: u64,
    /// Origin allowed by CORS; any origin when absent.
    #[arg(long)]
    cors_origin: Option<String>,
    #[arg(long, default_value_t = 1_000_000)]
    max_pair_draws: usize,
}

fn read_input(path: &Path) -> Result<String, CliError> {
    let mut s = String::new();
    let r = if path.as_os_str() == "-" {
        std::io::stdin().read_to_string(&mut s).map(|_| ())
    } else {
        std::fs::read_to_string(path).map(|t| s = t)
    };
    r.map_err(|source| CliError::Read { path: path.display().to_string(), source })?;
    Ok(s)
}

/// Writes `value` to `--out` and, with `--json`, to stdout; otherwise prints `text`.
fn emit<T: Serialize>(common: &Common, value: &T, text: &str) -> Result<(), CliError> {
    if let Some(path) = &common.out {
        wincrt_core::io::write_json(value, path)?;
    }
    if common.json {
        println!("{}", serde_json::to_string_pretty(value).map_err(wincrt_core::Error::from)?);
    } else {
        print!("{text}");
    }
    Ok(())
}

fn local_only(common: &Common, what: &str) -> Result<(), CliError> {
    match common.remote {
        Some(_) => Err(CliError::Usage(format!("{what} runs locally only; drop --remote"))),
        None => Ok(()),
    }
}

fn analyze(common: &Common, a: &AnalyzeArgs) -> Result<(), CliError> {
    local_only(common, "analyze")?;
    let mut opts = LongFormatOptions::for_path(&a.file);
    opts.id = a.id_col.clone();
    opts.trt = a.trt_col.clone();
    opts.cluster = a.cluster_col.clone();
    opts.outcome = a.outcome_col.clone();
    opts.tier = a.tier_col.clone();
    if let Some(d) = a.delimiter {
        opts.delimiter = u8::try_from(d).map_err(|_| CliError::Usage("delimiter must be ASCII".into()))?;
    }
    let data = parse_long_format(&a.file, &opts)?;
    let est = estimate(&data, common.alpha.unwrap_or(0.05), common.alternative.unwrap_or_default())?;
    let estimands = common.estimand.unwrap_or(EstimandChoice::All).list();
    let report = AnalysisReport::new(&est, common.test.unwrap_or_default(), &estimands);
    emit(common, &report, &report.to_text())
}

fn design_text(results: &[DesignResult], inputs: &[DesignInputs]) -> String {
    let d = &inputs[0];
    let sided = match d.sided {
        Sided::Two => "two-sided",
        Sided::One => "one-sided",
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Design ({}-test, {sided}, alpha={}, target power={})",
        d.test.to_string().to_uppercase(),
        d.alpha,
        d.target_power
    );
    let _ = writeln!(s, "{:>8} {:>8} {:>6} {:>6} {:>7} {:>8} {:>7}", "Estimand", "Delta", "M", "Power", "Req. M", "SE", "VIF");
    for (r, d) in results.iter().zip(inputs) {
        let req = r.required_m.map(|m| m.to_string()).unwrap_or_else(|| "NA".into());
        let _ = writeln!(
            s,
            "{:>8} {:>8.3} {:>6} {:>6.3} {:>7} {:>8.3} {:>7.3}",
            r.estimand.to_string(),
            d.delta,
            r.m,
            r.power,
            req,
            r.se,
            r.vif
        );
    }
    s
}

fn design(common: &Common, a: &DesignArgs, planner: &Planner) -> Result<(), CliError> {
    let mut base = design_inputs_from_json(&read_input(&a.file)?)?;
    if let Some(t) = common.test {
        base.test = t;
    }
    if let Some(x) = common.alpha {
        base.alpha = x;
    }
    if let Some(p) = a.power {
        base.target_power = p;
    }
    if let Some(alt) = common.alternative {
        base.sided = match alt {
            Alternative::TwoSided => Sided::Two,
            _ => Sided::One,
        };
    }
    let m = a.m.or(base.m);
    let targets = match common.estimand {
        Some(c) => c.list(),
        None => vec![base.estimand],
    };
    let mut inputs = Vec::new();
    let mut results = Vec::new();
    for e in targets {
        let d = recast_estimand(&base, e)?;
        let r = match m {
            Some(m) => {
                let mut r = planner.power(&d, m)?;
                r.required_m = planner.samplesize(&d).ok().and_then(|s| s.required_m);
                r
            }
            None => planner.samplesize(&d)?,
        };
        inputs.push(d);
        results.push(r);
    }
    emit(common, &results, &design_text(&results, &inputs))
}

fn simulate(common: &Common, a: &SimulateArgs) -> Result<(), CliError> {
    local_only(common, "simulate")?;
    let mut grid: ScenarioGrid =
        serde_json::from_str(&read_input(&a.file)?).map_err(wincrt_core::Error::from)?;
    if let Some(s) = common.seed {
        grid.seed = s;
    }
    if let Some(r) = a.replicates {
        grid.replicates = r;
    }
    if let Some(x) = common.alpha {
        grid.alpha = x;
    }
    if let Some(t) = common.test {
        grid.tests = vec![t];
    }
    if let Some(c) = common.estimand {
        grid.estimands = c.list();
    }
    let results = run_grid(&grid)?;
    emit(common, &results, &summary_table(&results))
}

fn calibration_request(text: &str) -> Result<CalibrationRequest, CliError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(wincrt_core::Error::from)?;
    let req = if v.get("spec").is_some() {
        serde_json::from_value(v)
    } else {
        serde_json::from_value::<GenerativeSpec>(v).map(|spec| CalibrationRequest { spec, options: Default::default() })
    };
    Ok(req.map_err(wincrt_core::Error::from)?)
}

fn calibrate(common: &Common, a: &CalibrateArgs) -> Result<(), CliError> {
    let mut req = calibration_request(&read_input(&a.file)?)?;
    if let Some(s) = common.seed {
        req.options.seed = s;
    }
    if let Some(b) = a.pair_draws {
        req.options.pair_draws = b;
    }
    if let Some(p) = a.pool_size {
        req.options.pool_size = p;
    }
    let planner = Planner::new(common.remote.as_deref(), Duration::from_secs(a.timeout))?;
    let est = planner.calibrate(&req)?;
    let mut text = String::new();
    let _ = writeln!(text, "Design inputs ({} model, seed {}, {} pair draws)", est.model, est.seed, est.pair_draws);
    for (name, s) in [
        ("delta (WD)", &est.delta_wd),
        ("delta (logWR)", &est.delta_logwr),
        ("delta (logWO)", &est.delta_logwo),
        ("pi_tie", &est.pi_tie),
        ("rho*", &est.rho_star),
        ("p_W", &est.p_w),
        ("p_T", &est.p_t),
        ("p_WW", &est.p_ww),
        ("p_WT", &est.p_wt),
        ("p_TT", &est.p_tt),
    ] {
        let _ = writeln!(text, "{name:>14} {:>8.3} (MC SE {:.3})", s.value, s.se);
    }
    for w in &est.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    emit(common, &est, &text)
}

fn serve(common: &Common, a: &ServeArgs) -> Result<(), CliError> {
    local_only(common, "serve")?;
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let config = wincrt_service::ServiceConfig {
        job_ttl: Duration::from_secs(a.job_ttl),
        max_pair_draws: a.max_pair_draws,
        cors_origin: a.cors_origin.clone(),
        ..Default::default()
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind).await?;
        wincrt_service::serve(listener, config).await
    })?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = &cli.common;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set up {n} threads: {e}")))?;
    }
    match &cli.command {
        Command::Analyze(a) => analyze(common, a),
        Command::Design(a) => design(common, a, &Planner::new(common.remote.as_deref(), Duration::from_secs(60))?),
        Command::Simulate(a) => simulate(common, a),
        Command::Calibrate(a) => calibrate(common, a),
        Command::Serve(a) => serve(common, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
