//! Command-line runner.
//!
//! Every subcommand buffers its output, so files come out byte-identical for
//! identical flags, seed and scenario. With `--out DIR` the results go to
//! files in `DIR` next to a `run_manifest.json`; without it the main table is
//! printed as CSV.
//!
//! Exit codes: 0 success, 2 usage error, 3 invalid scenario or input file,
//! 4 advisor failure, 5 internal error.

pub mod end_to_end;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

pub use end_to_end::{emit_end_to_end, EndToEnd, EndToEndError, StepLatency};

use crate::advisor::{keyword_mock_advisor, Advisor, RemoteAdvisor, RemoteSettings, ScriptedAdvisor};
use crate::codec::{evaluate_grid, parse_grid_spec, sweep_points};
use crate::fedsim::{run_fl, trial_loop, FedError, FlConfig};
use crate::offload::{latency_sweep_mix, parse_rate_range, SchemeKind};
use crate::planner::{bundled_dataset, evaluate_planner, load_dataset, plan, PlanError, TaskPlan};
use crate::registry::{load_scenario, Scenario, TaskKind};

pub const MANIFEST_FILE: &str = "run_manifest.json";

pub const LATENCY_HEADER: [&str; 9] = [
    "rate_bps", "scheme", "planning_s", "upload_s", "client_s", "edge_s", "cloud_s", "download_s", "total_s",
];
pub const CODEC_HEADER: [&str; 5] = ["beta", "kept_dims", "n_bins", "rate_bits", "task_loss"];
pub const FL_HEADER: [&str; 3] = ["round", "accuracy", "wallclock_s"];

/// Outcome of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario_id: String,
    pub seed: u64,
    pub command: String,
    /// Header of the main table.
    pub header: Vec<String>,
    /// Records of the main table.
    pub rows: Vec<Vec<String>>,
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    /// Files written under `--out`, manifest last.
    pub files: Vec<PathBuf>,
}

#[derive(Parser, Debug)]
#[command(name = "edgeplan", version, about = "Cloud-edge-client orchestration simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plan one request.
    Plan(PlanArgs),
    /// Score a planner on a labelled request dataset.
    EvalPlanner(EvalArgs),
    /// Latency of execution schemes across uplink rates.
    InferLatency(LatencyArgs),
    /// Rate and task loss of codec configurations across Lagrange multipliers.
    CodecSweep(CodecArgs),
    /// One federated training run.
    FlRun(FlRunArgs),
    /// Advisor-driven federated training trials.
    FlAuto(FlAutoArgs),
    /// Plan a request and report its end-to-end latency.
    Demo(DemoArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file; the bundled default scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PlannerBackend {
    Mock,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TrainerBackend {
    Scripted,
    Remote,
}

#[derive(Args, Debug)]
struct RemoteArgs {
    /// Chat-completion base URL; overrides `[advisor.remote]`.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    remote_model: Option<String>,
    #[arg(long)]
    timeout_s: Option<f64>,
    #[arg(long)]
    max_retries: Option<u32>,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    request: String,
    #[arg(long, value_enum, default_value_t = PlannerBackend::Mock)]
    advisor: PlannerBackend,
    #[command(flatten)]
    remote: RemoteArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// JSON Lines dataset; the bundled 60-request set when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PlannerBackend::Mock)]
    advisor: PlannerBackend,
    /// Require the full step sequence to match.
    #[arg(long)]
    strict: bool,
    #[command(flatten)]
    remote: RemoteArgs,
}

#[derive(Args, Debug)]
struct LatencyArgs {
    #[command(flatten)]
    common: Common,
    /// Model id; the first image classifier when omitted.
    #[arg(long)]
    model: Option<String>,
    /// Weighted request mix, e.g. `vit=0.1,blip_caption=0.4,blip_vqa=0.5`.
    #[arg(long, conflicts_with = "model")]
    mix: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "client_only,edge_only_lossless,edge_only_lossy,co_inference,cloud_only")]
    schemes: Vec<String>,
    /// `start:stop:step` or a comma-separated list, bytes per second.
    #[arg(long, default_value = "100k:500k:50k")]
    rates: String,
}

#[derive(Args, Debug)]
struct CodecArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated values, or `log:LO:HI:N` for N log-spaced values.
    #[arg(long, default_value = "log:1e-5:1e-1:20")]
    betas: String,
    /// `k=..;bins=..;clip=lo:hi`; missing parts use the default grid.
    #[arg(long, default_value = "")]
    grid_spec: String,
}

#[derive(Args, Debug)]
struct FlRunArgs {
    #[command(flatten)]
    common: Common,
    /// `key=value` pairs, comma separated.
    #[arg(long, default_value = "")]
    config_overrides: String,
}

#[derive(Args, Debug)]
struct FlAutoArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = TrainerBackend::Scripted)]
    advisor: TrainerBackend,
    #[arg(long, default_value_t = 5)]
    max_trials: usize,
    #[arg(long, default_value_t = 0.99)]
    target_acc: f64,
    /// Applied to the scenario's training configuration before trial 1.
    #[arg(long, default_value = "")]
    config_overrides: String,
    #[command(flatten)]
    remote: RemoteArgs,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "Replace the riding boy in this picture with a reading girl.")]
    request: String,
    #[arg(long, value_enum, default_value_t = PlannerBackend::Mock)]
    advisor: PlannerBackend,
    #[command(flatten)]
    remote: RemoteArgs,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Scenario(String),
    Advisor(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Scenario(_) => 3,
            Failure::Advisor(_) => 4,
            Failure::Internal(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Scenario(m) | Failure::Advisor(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        Failure::Advisor(e.to_string())
    }
}

impl From<FedError> for Failure {
    fn from(e: FedError) -> Self {
        match e {
            FedError::Advisor(_) => Failure::Advisor(e.to_string()),
            FedError::UnknownArch(_) | FedError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            FedError::ArchMismatch | FedError::InvalidWeights => Failure::Internal(e.to_string()),
        }
    }
}

/// What a subcommand produced, before anything touches the disk.
#[derive(Default)]
struct Output {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    files: Vec<(String, Vec<u8>)>,
    stdout: String,
    /// Set when the command produced partial results and still failed.
    failure: Option<Failure>,
}

impl Output {
    fn table(header: &[&str], rows: Vec<Vec<String>>) -> Self {
        Output {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows,
            ..Output::default()
        }
    }

    fn main_csv(&self) -> Vec<u8> {
        csv_bytes(&self.header, &self.rows)
    }
}

fn csv_bytes<H: AsRef<str>>(header: &[H], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.iter().map(AsRef::as_ref)).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

fn num(v: f64) -> String {
    v.to_string()
}

/// Runs the tool on `argv` (program name first) without printing anything.
pub fn run<I, T>(argv: I) -> RunReport
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let mut report = RunReport {
        scenario_id: String::new(),
        seed: 0,
        command: argv.get(1).cloned().unwrap_or_default(),
        header: Vec::new(),
        rows: Vec::new(),
        exit_code: 0,
        stdout: String::new(),
        stderr: String::new(),
        files: Vec::new(),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                report.stdout = text;
            } else {
                report.stderr = text;
                report.exit_code = 2;
            }
            return report;
        }
    };
    let common = match &cli.command {
        Command::Plan(a) => &a.common,
        Command::EvalPlanner(a) => &a.common,
        Command::InferLatency(a) => &a.common,
        Command::CodecSweep(a) => &a.common,
        Command::FlRun(a) => &a.common,
        Command::FlAuto(a) => &a.common,
        Command::Demo(a) => &a.common,
    };
    report.seed = common.seed;
    let scenario = match &common.scenario {
        Some(path) => load_scenario(path),
        None => Ok(Scenario::bundled()),
    };
    let scenario = match scenario {
        Ok(s) => s,
        Err(e) => {
            report.stderr = format!("error: {e}\n");
            report.exit_code = 3;
            return report;
        }
    };
    report.scenario_id = scenario.name.clone();

    let outcome = match &cli.command {
        Command::Plan(a) => cmd_plan(a, &scenario),
        Command::EvalPlanner(a) => cmd_eval(a, &scenario),
        Command::InferLatency(a) => cmd_latency(a, &scenario),
        Command::CodecSweep(a) => cmd_codec(a, &scenario),
        Command::FlRun(a) => cmd_fl_run(a, &scenario),
        Command::FlAuto(a) => cmd_fl_auto(a, &scenario),
        Command::Demo(a) => cmd_demo(a, &scenario),
    };
    let mut output = match outcome {
        Ok(o) => o,
        Err(f) => {
            report.stderr = format!("error: {}\n", f.message());
            report.exit_code = f.code();
            return report;
        }
    };

    match &common.out {
        Some(dir) => {
            let manifest = run_manifest(&argv, common.seed, &scenario, &output.files);
            output.files.push((MANIFEST_FILE.to_string(), manifest));
            if let Err(e) = std::fs::create_dir_all(dir) {
                report.stderr = format!("error: cannot create {}: {e}\n", dir.display());
                report.exit_code = 5;
                return report;
            }
            for (name, bytes) in &output.files {
                let path = dir.join(name);
                if let Err(e) = std::fs::write(&path, bytes) {
                    report.stderr = format!("error: cannot write {}: {e}\n", path.display());
                    report.exit_code = 5;
                    return report;
                }
                report.files.push(path);
            }
            report.stdout = output.stdout.clone();
        }
        None => {
            report.stdout = output.stdout.clone();
            report.stdout.push_str(&String::from_utf8(output.main_csv()).expect("CSV is UTF-8"));
        }
    }
    if let Some(f) = &output.failure {
        report.stderr = format!("error: {}\n", f.message());
        report.exit_code = f.code();
    }
    report.header = output.header;
    report.rows = output.rows;
    report
}

/// Command, arguments (without the output directory), seed, scenario hash,
/// tool version and the SHA-256 of every file written.
fn run_manifest(argv: &[String], seed: u64, scenario: &Scenario, files: &[(String, Vec<u8>)]) -> Vec<u8> {
    let mut args = Vec::new();
    let mut rest = argv.iter().skip(2);
    while let Some(a) = rest.next() {
        if a == "--out" {
            rest.next();
        } else if !a.starts_with("--out=") {
            args.push(a.clone());
        }
    }
    let hashes: BTreeMap<&str, String> = files
        .iter()
        .map(|(name, bytes)| (name.as_str(), hex::encode(Sha256::digest(bytes))))
        .collect();
    json_bytes(&serde_json::json!({
        "command": argv.get(1),
        "args": args,
        "seed": seed,
        "scenario": scenario.name,
        "scenario_sha256": scenario.content_hash(),
        "version": env!("CARGO_PKG_VERSION"),
        "files": hashes,
    }))
}

fn remote_advisor(args: &RemoteArgs, scenario: &Scenario) -> Result<RemoteAdvisor, Failure> {
    let mut settings = match (&args.endpoint, &scenario.advisor.remote) {
        (Some(endpoint), base) => {
            let model = base.as_ref().map_or("gpt-3.5-turbo", |b| b.model.as_str());
            let mut s = base.clone().unwrap_or_else(|| RemoteSettings::new(endpoint.clone(), model));
            s.endpoint = endpoint.clone();
            s
        }
        (None, Some(base)) => base.clone(),
        (None, None) => {
            return Err(Failure::Usage(
                "the remote advisor needs --endpoint or an [advisor.remote] section".into(),
            ))
        }
    };
    if let Some(m) = &args.remote_model {
        settings.model = m.clone();
    }
    if let Some(t) = args.timeout_s {
        settings.timeout_s = t;
    }
    if let Some(r) = args.max_retries {
        settings.max_retries = r;
    }
    RemoteAdvisor::new(settings).map_err(|e| Failure::Usage(e.to_string()))
}

fn planner_advisor(
    backend: PlannerBackend,
    remote: &RemoteArgs,
    scenario: &Scenario,
) -> Result<Box<dyn Advisor>, Failure> {
    match backend {
        PlannerBackend::Mock => {
            if scenario.advisor.rules.is_empty() {
                return Err(Failure::Scenario("scenario has no [[advisor.rules]] for the mock advisor".into()));
            }
            Ok(Box::new(keyword_mock_advisor(scenario.advisor.rules.clone())))
        }
        PlannerBackend::Remote => Ok(Box::new(remote_advisor(remote, scenario)?)),
    }
}

fn cmd_plan(args: &PlanArgs, scenario: &Scenario) -> Result<Output, Failure> {
    let advisor = planner_advisor(args.advisor, &args.remote, scenario)?;
    let plan = plan(&args.request, scenario, advisor.as_ref())?;
    let rows = plan
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| vec![(i + 1).to_string(), s.task_kind.to_string(), s.model_id.clone(), s.input_source.to_string()])
        .collect();
    let mut out = Output::table(&["step", "task_kind", "model_id", "input_source"], rows);
    out.files.push((
        "plan.json".into(),
        json_bytes(&serde_json::json!({ "request": args.request, "plan": plan })),
    ));
    out.files.push(("plan.csv".into(), out.main_csv()));
    out.stdout = plan_text(&args.request, &plan);
    Ok(out)
}

fn plan_text(request: &str, plan: &TaskPlan) -> String {
    let mut text = format!("request: {request}\nplan ({}):\n", plan.combine);
    for (i, s) in plan.steps.iter().enumerate() {
        let _ = writeln!(text, "  {}. {} with {} from {}", i + 1, s.task_kind, s.model_id, s.input_source);
    }
    text
}

fn cmd_eval(args: &EvalArgs, scenario: &Scenario) -> Result<Output, Failure> {
    let dataset = match &args.dataset {
        Some(path) => load_dataset(path).map_err(|e| Failure::Scenario(e.to_string()))?,
        None => bundled_dataset(),
    };
    let advisor = planner_advisor(args.advisor, &args.remote, scenario)?;
    let eval = evaluate_planner(&dataset, scenario, advisor.as_ref(), args.strict)
        .map_err(|e| Failure::Scenario(e.to_string()))?;
    let rows: Vec<Vec<String>> = dataset
        .iter()
        .zip(&eval.predictions)
        .enumerate()
        .map(|(i, (item, p))| {
            vec![
                (i + 1).to_string(),
                item.request.clone(),
                item.label.to_string(),
                p.as_ref().map(TaskKind::to_string).unwrap_or_default(),
            ]
        })
        .collect();
    let m = eval.metrics;
    let mut out = Output::table(&["index", "request", "gold", "predicted"], rows);
    out.files.push(("predictions.csv".into(), out.main_csv()));
    // Wall time varies between runs, so it is reported on stdout only.
    out.files.push((
        "metrics.json".into(),
        json_bytes(&serde_json::json!({
            "requests": dataset.len(),
            "strict": args.strict,
            "accuracy": m.accuracy,
            "macro_f1": m.macro_f1,
        })),
    ));
    out.stdout = format!(
        "accuracy {:.4}\nmacro_f1 {:.4}\nmean_latency_s {:.6}\n",
        m.accuracy, m.macro_f1, m.mean_latency
    );
    Ok(out)
}

fn parse_mix<'a>(spec: &str, scenario: &'a Scenario) -> Result<Vec<(&'a crate::registry::ModelManifest, f64)>, Failure> {
    let mut mix = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (id, w) = part
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("mix entries are id=weight, got {part:?}")))?;
        let manifest = scenario
            .model(id.trim())
            .ok_or_else(|| Failure::Usage(format!("unknown model {:?}", id.trim())))?;
        let w: f64 = w
            .trim()
            .parse()
            .ok()
            .filter(|w: &f64| *w >= 0.0 && w.is_finite())
            .ok_or_else(|| Failure::Usage(format!("bad mix weight {w:?}")))?;
        mix.push((manifest, w));
    }
    if mix.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
        return Err(Failure::Usage("mix weights must have a positive sum".into()));
    }
    Ok(mix)
}

fn cmd_latency(args: &LatencyArgs, scenario: &Scenario) -> Result<Output, Failure> {
    let mix = match (&args.mix, &args.model) {
        (Some(spec), _) => parse_mix(spec, scenario)?,
        (None, Some(id)) => {
            let m = scenario
                .model(id)
                .ok_or_else(|| Failure::Usage(format!("unknown model {id:?}")))?;
            vec![(m, 1.0)]
        }
        (None, None) => {
            let m = crate::registry::candidates_for(&TaskKind::ImageClassification, scenario)
                .first()
                .copied()
                .or_else(|| scenario.models.first())
                .ok_or_else(|| Failure::Scenario("scenario has no models".into()))?;
            vec![(m, 1.0)]
        }
    };
    let schemes: Vec<SchemeKind> = args
        .schemes
        .iter()
        .map(|s| s.parse().map_err(Failure::Usage))
        .collect::<Result<_, _>>()?;
    let rates = parse_rate_range(&args.rates).map_err(Failure::Usage)?;
    if rates.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Failure::Usage("rates must be positive".into()));
    }
    let rows = latency_sweep_mix(&mix, scenario, &schemes, &rates).map_err(|e| Failure::Scenario(e.to_string()))?;
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![num(r.rate), r.scheme.to_string()];
            row.extend(r.latency.parts().iter().map(|&p| num(p)));
            row.push(num(r.latency.total));
            row
        })
        .collect();
    let mut out = Output::table(&LATENCY_HEADER, rows);
    out.files.push(("latency.csv".into(), out.main_csv()));
    Ok(out)
}

fn parse_betas(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = |m: String| Failure::Usage(m);
    let betas: Vec<f64> = if let Some(rest) = spec.trim().strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let [lo, hi, n] = parts.as_slice() else {
            return Err(bad(format!("expected log:LO:HI:N, got {spec:?}")));
        };
        let lo: f64 = lo.parse().map_err(|_| bad(format!("bad beta {lo:?}")))?;
        let hi: f64 = hi.parse().map_err(|_| bad(format!("bad beta {hi:?}")))?;
        let n: usize = n.parse().map_err(|_| bad(format!("bad count {n:?}")))?;
        if !(lo > 0.0 && hi > lo) || n < 2 {
            return Err(bad("log range needs 0 < LO < HI and N >= 2".into()));
        }
        let (a, b) = (lo.log10(), hi.log10());
        (0..n)
            .map(|i| match i {
                0 => lo,
                i if i == n - 1 => hi,
                i => 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64),
            })
            .collect()
    } else {
        spec.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad(format!("bad beta {v:?}"))))
            .collect::<Result<_, _>>()?
    };
    if betas.is_empty() || betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(bad("betas must be finite and >= 0".into()));
    }
    Ok(betas)
}

fn cmd_codec(args: &CodecArgs, scenario: &Scenario) -> Result<Output, Failure> {
    let betas = parse_betas(&args.betas)?;
    let grid = parse_grid_spec(&args.grid_spec).map_err(|e| Failure::Usage(e.to_string()))?;
    let task = scenario.codec.clone().unwrap_or_default();
    if let Some(c) = grid.iter().find(|c| c.kept_dims > task.dim) {
        return Err(Failure::Usage(format!("kept_dims {} exceeds the task dimension {}", c.kept_dims, task.dim)));
    }
    let points = evaluate_grid(&task, &grid);
    let sweep = sweep_points(&points, &betas);
    let rows = sweep
        .iter()
        .map(|p| {
            vec![
                num(p.beta),
                p.config.kept_dims.to_string(),
                p.config.n_bins.to_string(),
                num(p.rate_bits),
                num(p.task_loss),
            ]
        })
        .collect();
    let grid_rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.config.kept_dims.to_string(),
                p.config.n_bins.to_string(),
                num(p.config.clip_lo),
                num(p.config.clip_hi),
                num(p.rate_bits),
                num(p.task_loss),
            ]
        })
        .collect();
    let mut out = Output::table(&CODEC_HEADER, rows);
    out.files.push(("codec_sweep.csv".into(), out.main_csv()));
    out.files.push((
        "codec_grid.csv".into(),
        csv_bytes(&["kept_dims", "n_bins", "clip_lo", "clip_hi", "rate_bits", "task_loss"], &grid_rows),
    ));
    let mut text = format!("{} configurations, {} betas\n", points.len(), betas.len());
    for p in &sweep {
        let _ = writeln!(
            text,
            "beta {:.3e}: keep {} dims, {} bins, {:.3} bits, loss {:.4}",
            p.beta, p.config.kept_dims, p.config.n_bins, p.rate_bits, p.task_loss
        );
    }
    out.stdout = text;
    Ok(out)
}

fn fl_inputs(overrides: &str, scenario: &Scenario) -> Result<(FlConfig, crate::fedsim::FederatedData), Failure> {
    let cfg = scenario.fl.clone().unwrap_or_default().with_overrides(overrides)?;
    let data = scenario.fl_data.clone().unwrap_or_default().generate();
    Ok((cfg, data))
}

fn curve_rows(curve: &[crate::fedsim::CurvePoint]) -> Vec<Vec<String>> {
    curve
        .iter()
        .map(|p| vec![p.round.to_string(), num(p.accuracy), num(p.wallclock_s)])
        .collect()
}

fn cmd_fl_run(args: &FlRunArgs, scenario: &Scenario) -> Result<Output, Failure> {
    let (cfg, data) = fl_inputs(&args.config_overrides, scenario)?;
    let curve = run_fl(&cfg, &data, scenario, args.common.seed)?;
    let mut out = Output::table(&FL_HEADER, curve_rows(&curve));
    out.files.push(("fl_curve.csv".into(), out.main_csv()));
    out.files.push(("fl_config.json".into(), json_bytes(&cfg)));
    if let Some(last) = curve.last() {
        out.stdout = format!(
            "final accuracy {:.4} after {} rounds, modelled wall-clock {:.1} s\n",
            last.accuracy, last.round, last.wallclock_s
        );
    }
    Ok(out)
}

fn cmd_fl_auto(args: &FlAutoArgs, scenario: &Scenario) -> Result<Output, Failure> {
    if args.max_trials == 0 {
        return Err(Failure::Usage("--max-trials must be >= 1".into()));
    }
    let (template, data) = fl_inputs(&args.config_overrides, scenario)?;
    let advisor: Box<dyn Advisor> = match args.advisor {
        TrainerBackend::Scripted => {
            if scenario.advisor.fl_script.is_empty() {
                return Err(Failure::Scenario("scenario has no [advisor] fl_script".into()));
            }
            Box::new(ScriptedAdvisor::new(scenario.advisor.fl_script.clone()))
        }
        TrainerBackend::Remote => Box::new(remote_advisor(&args.remote, scenario)?),
    };
    let outcome = trial_loop(
        advisor.as_ref(),
        &template,
        &data,
        scenario,
        args.max_trials,
        args.target_acc,
        args.common.seed,
    );
    let header = [
        "trial",
        "model_arch",
        "lr",
        "optimizer",
        "lr_schedule",
        "augmentation",
        "final_accuracy",
        "wallclock_s",
    ];
    let rows = outcome
        .records
        .iter()
        .map(|r| {
            let c = &r.config;
            vec![
                r.trial_index.to_string(),
                c.model_arch.clone(),
                num(c.lr),
                c.optimizer.to_string(),
                c.lr_schedule.to_string(),
                c.augmentation.to_string(),
                num(r.final_accuracy()),
                num(r.accuracy_curve.last().map_or(0.0, |p| p.wallclock_s)),
            ]
        })
        .collect();
    let mut out = Output::table(&header, rows);
    for r in &outcome.records {
        out.files.push((
            format!("trial_{}.csv", r.trial_index),
            csv_bytes(&FL_HEADER, &curve_rows(&r.accuracy_curve)),
        ));
    }
    out.files.push(("trials_summary.csv".into(), out.main_csv()));
    out.files.push(("trials.json".into(), json_bytes(&outcome.records)));
    let mut text = String::new();
    for r in &outcome.records {
        let _ = writeln!(text, "trial {}: final accuracy {:.4}", r.trial_index, r.final_accuracy());
    }
    out.stdout = text;
    out.failure = outcome.aborted.map(Failure::from);
    Ok(out)
}

fn cmd_demo(args: &DemoArgs, scenario: &Scenario) -> Result<Output, Failure> {
    let advisor = planner_advisor(args.advisor, &args.remote, scenario)?;
    let plan = plan(&args.request, scenario, advisor.as_ref())?;
    let report = emit_end_to_end(&plan, scenario).map_err(|e| Failure::Internal(e.to_string()))?;
    let rows: Vec<Vec<String>> = report
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let l = &s.latency;
            vec![
                (i + 1).to_string(),
                s.task_kind.to_string(),
                s.model_id.clone(),
                s.scheme.to_string(),
                s.partition.split.to_string(),
                num(l.upload),
                num(l.client_compute),
                num(l.edge_compute),
                num(l.cloud_compute),
                num(l.download),
                num(l.total),
            ]
        })
        .collect();
    let header = [
        "step", "task_kind", "model_id", "scheme", "best_split", "upload_s", "client_s", "edge_s", "cloud_s",
        "download_s", "total_s",
    ];
    let mut text = plan_text(&args.request, &plan);
    for (i, s) in report.steps.iter().enumerate() {
        let p = &s.partition;
        let _ = writeln!(
            text,
            "step {}: best split {} of {} layers ({:.4} s); chosen {} at {:.4} s",
            i + 1,
            p.split,
            scenario.model(&s.model_id).map_or(0, |m| m.num_layers()),
            p.latency.total,
            s.scheme,
            s.latency.total + report.planning_s,
        );
        let l = &s.latency;
        let _ = writeln!(
            text,
            "  upload {:.4} s, client {:.4} s, edge {:.4} s, cloud {:.4} s, download {:.4} s",
            l.upload, l.client_compute, l.edge_compute, l.cloud_compute, l.download
        );
    }
    let _ = writeln!(
        text,
        "planning {:.4} s, fusion {:.4} s, end-to-end {:.4} s",
        report.planning_s, report.fusion_s, report.total_s
    );
    let mut out = Output::table(&header, rows);
    out.stdout = text;
    out.files.push(("demo.csv".into(), out.main_csv()));
    out.files.push((
        "demo.json".into(),
        json_bytes(&serde_json::json!({ "request": args.request, "plan": plan, "latency": report })),
    ));
    Ok(out)
}
