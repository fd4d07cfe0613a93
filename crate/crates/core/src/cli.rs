//! Command-line interface.
//!
//! Exit codes: 0 success, 2 usage error, 3 intent needs clarification,
//! 10 and up a failure category (see [`ExitCategory`]).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::curation::DEFAULT_WINDOW_LEN;
use crate::intent::{IntentBackend, RemoteBackend, RemoteBackendConfig, RuleBackend};
use crate::mlengine::DEFAULT_LATENCY_SAMPLES;
use crate::orchestrator::{
    evaluate_deployment, evaluation_table, load_deployment, load_manifest, load_training_report, provision, run_dir,
    timing_report, total_ms, Phase, PhaseError, ProvisionConfig, ProvisionOutcome, TraceSource, DEFAULT_MAX_ATTEMPTS,
};
use crate::ricsim::{run_closed_loop, RicHarness, RunConfig, RunMetrics};
use crate::telemetry::{default_scenario, generate_trace, read_trace, write_trace, CellConfig, TraceReplay, UeProfile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CLARIFY: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCategory {
    Config,
    Intent,
    Data,
    Training,
    Synthesis,
    Registration,
    Run,
}

impl ExitCategory {
    pub fn code(self) -> i32 {
        match self {
            ExitCategory::Config => 10,
            ExitCategory::Intent => 11,
            ExitCategory::Data => 12,
            ExitCategory::Training => 13,
            ExitCategory::Synthesis => 14,
            ExitCategory::Registration => 15,
            ExitCategory::Run => 16,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExitCategory::Config => "config",
            ExitCategory::Intent => "intent",
            ExitCategory::Data => "data",
            ExitCategory::Training => "training",
            ExitCategory::Synthesis => "synthesis",
            ExitCategory::Registration => "registration",
            ExitCategory::Run => "run",
        }
    }

    fn of_phase(p: Phase) -> Self {
        match p {
            Phase::IntentParse => ExitCategory::Intent,
            Phase::DataCuration => ExitCategory::Data,
            Phase::Training => ExitCategory::Training,
            Phase::Synthesis => ExitCategory::Synthesis,
            Phase::Registration => ExitCategory::Registration,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: ExitCategory,
    pub message: String,
}

impl CliError {
    fn new(category: ExitCategory, message: impl ToString) -> Self {
        CliError { category, message: message.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Rule,
    Remote,
}

#[derive(Debug, Parser)]
#[command(name = "ricforge", version, about = "Intent-driven provisioning of congestion-prediction xApps for a simulated Near-RT RIC")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Seed for the simulator, fold assignment, and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with scenario, backend, and training settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Intent backend. The remote endpoint URL can be overridden with RICFORGE_INTENT_URL.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Use a stored trace (CSV with JSON sidecar) instead of live simulation.
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the scenario and write trace.csv to the output directory.
    Simulate,
    /// Run the full pipeline for an intent and register the resulting xApp.
    Provision {
        /// Operator intent, e.g. "predict congestion and reserve 20% PRBs for edge users".
        intent: String,
    },
    /// Run a provisioned xApp in the closed loop.
    Run {
        #[arg(long = "run")]
        run_id: String,
    },
    /// Compare a provisioned xApp with its monitor-only twin and the threshold baseline.
    Evaluate {
        #[arg(long = "run")]
        run_id: String,
    },
    /// Print the validation report and timings; write CSV plot data.
    Report {
        #[arg(long = "run")]
        run_id: String,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub cell: Option<CellConfig>,
    pub ues: Option<Vec<UeProfile>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub window_len: usize,
    pub max_attempts: usize,
    pub latency_samples: usize,
    pub parallel: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            window_len: DEFAULT_WINDOW_LEN,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            latency_samples: DEFAULT_LATENCY_SAMPLES,
            parallel: true,
        }
    }
}

/// Contents of `--config`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub scenario: ScenarioConfig,
    pub remote: RemoteBackendConfig,
    pub training: TrainingConfig,
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_OUT: &str = "out";

/// Flags and config file merged; flags win.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub seed: u64,
    pub out: PathBuf,
    pub backend: BackendKind,
    pub cell: CellConfig,
    pub ues: Vec<UeProfile>,
    pub remote: RemoteBackendConfig,
    pub training: TrainingConfig,
    pub replay: Option<PathBuf>,
}

pub fn resolve(opts: &GlobalOpts) -> Result<Resolved, CliError> {
    let cfg: CliConfig = match &opts.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::new(ExitCategory::Config, format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::new(ExitCategory::Config, format!("{}: {e}", p.display())))?
        }
        None => CliConfig::default(),
    };
    let seed = opts.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let (default_cell, default_ues) = default_scenario(seed);
    let mut cell = cfg.scenario.cell.unwrap_or(default_cell);
    cell.seed = seed;
    Ok(Resolved {
        seed,
        out: opts.out.clone().or(cfg.out_dir).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        backend: opts.backend.or(cfg.backend).unwrap_or(BackendKind::Rule),
        cell,
        ues: cfg.scenario.ues.unwrap_or(default_ues),
        remote: cfg.remote.with_env_override(),
        training: cfg.training,
        replay: opts.replay.clone(),
    })
}

/// Parse `args` (including the program name) and execute. Returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category.as_str(), e.message);
            e.category.code()
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let r = resolve(&cli.global)?;
    match &cli.command {
        Command::Simulate => simulate(&r),
        Command::Provision { intent } => provision_cmd(&r, intent),
        Command::Run { run_id } => run_cmd(&r, run_id),
        Command::Evaluate { run_id } => evaluate_cmd(&r, run_id),
        Command::Report { run_id } => report_cmd(&r, run_id),
    }
}

fn data_err(e: impl ToString) -> CliError {
    CliError::new(ExitCategory::Data, e)
}

fn run_err(e: impl ToString) -> CliError {
    CliError::new(ExitCategory::Run, e)
}

fn create_dir(p: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(p).map_err(|e| CliError::new(ExitCategory::Config, format!("{}: {e}", p.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| run_err(format!("{}: {e}", path.display())))
}

fn simulate(r: &Resolved) -> Result<i32, CliError> {
    create_dir(&r.out)?;
    let trace = generate_trace(&r.cell, &r.ues).map_err(data_err)?;
    let path = r.out.join("trace.csv");
    write_trace(&trace, &path).map_err(data_err)?;
    let congested = trace.util.iter().filter(|&&u| u > 0.8).count();
    println!("wrote {} ({} intervals, {} UEs, seed {})", path.display(), trace.util.len(), trace.ues.len(), r.seed);
    println!("intervals above 80% utilization: {congested}");
    Ok(EXIT_OK)
}

fn provision_cmd(r: &Resolved, intent: &str) -> Result<i32, CliError> {
    let mut backend: Box<dyn IntentBackend> = match r.backend {
        BackendKind::Rule => Box::new(RuleBackend),
        BackendKind::Remote => Box::new(RemoteBackend::new(r.remote.clone())),
    };
    let source = match &r.replay {
        Some(p) => TraceSource::File(p.clone()),
        None => TraceSource::Simulate { cell: r.cell.clone(), ues: r.ues.clone() },
    };
    let mut config = ProvisionConfig::new(&r.out, r.seed);
    config.window_len = r.training.window_len;
    config.max_attempts = r.training.max_attempts;
    config.latency_samples = r.training.latency_samples;
    config.parallel = r.training.parallel;
    let harness = RicHarness::new();
    let outcome = provision(intent, backend.as_mut(), &source, &config, &harness)
        .map_err(|e| CliError::new(ExitCategory::of_phase(e.phase), e))?;
    match outcome {
        ProvisionOutcome::Clarification(req) => {
            println!("{req}");
            println!("nothing was provisioned; restate the intent with one of the interpretations above");
            Ok(EXIT_CLARIFY)
        }
        ProvisionOutcome::Provisioned(res) => {
            let rep = &res.training.report;
            println!("run {}", res.run_id);
            println!("  directory   {}", res.run_dir.display());
            println!("  xapp        {}", res.descriptor.xapp_id);
            println!("  model       {} ({} bytes, sha256 {})", res.training.winner, rep.size_bytes, &res.artifact_sha256[..16]);
            println!("  holdout     accuracy {:.4}  f1_macro {:.4}", rep.accuracy, rep.f1_macro);
            if let Some(l) = rep.latency_us_p99 {
                println!("  latency     p99 {l:.2} us (budget {} ms)", res.spec.latency_budget_ms);
            }
            println!("  retries     {}", res.retrain_attempts);
            print!("{}", timing_report(&res.timings));
            println!("{:<16} {:>12.3}", "wall", res.manifest.total_wall_ms);
            Ok(EXIT_OK)
        }
    }
}

fn locate(r: &Resolved, run_id: &str) -> Result<PathBuf, CliError> {
    let dir = run_dir(&r.out, run_id);
    if !dir.is_dir() {
        return Err(CliError::new(ExitCategory::Config, format!("no run {run_id} under {}", r.out.join("runs").display())));
    }
    Ok(dir)
}

fn phase_err(e: PhaseError) -> CliError {
    let cat = match &e {
        PhaseError::Synthesis(_) => ExitCategory::Registration,
        PhaseError::Telemetry(_) | PhaseError::Curation(_) => ExitCategory::Data,
        _ => ExitCategory::Run,
    };
    CliError::new(cat, e)
}

fn write_metrics(m: &RunMetrics, dir: &Path, stem: &str) -> Result<(), CliError> {
    m.write(&dir.join(format!("{stem}.csv")), &dir.join(format!("{stem}_summary.json"))).map_err(run_err)
}

fn run_cmd(r: &Resolved, run_id: &str) -> Result<i32, CliError> {
    let dir = locate(r, run_id)?;
    let manifest = load_manifest(&dir).map_err(phase_err)?;
    let harness = RicHarness::new();
    let handle = load_deployment(&dir, &harness).map_err(phase_err)?;
    let trace_path = r.replay.clone().unwrap_or_else(|| dir.join(&manifest.files.trace));
    let trace = read_trace(&trace_path).map_err(data_err)?;
    let m = run_closed_loop(&mut TraceReplay::new(&trace), &handle, &RunConfig::new(manifest.spec.label_rule)).map_err(run_err)?;
    write_metrics(&m, &dir, "closed_loop")?;
    let s = &m.summary;
    println!("closed loop {} over {} intervals", s.xapp_id, s.intervals);
    println!("  accuracy vs horizon labels {:.4}  f1_macro {:.4}", s.accuracy_vs_horizon, s.f1_macro);
    println!("  actions issued {}  intervals with reservation {}", s.actions_issued, s.action_intervals);
    println!("  inference p99 {:.2} us  budget violations {}", s.inference_p99_us, s.budget_violations);
    if let Some(q) = &s.quarantined {
        println!("  quarantined: {q}");
    }
    Ok(EXIT_OK)
}

fn evaluate_cmd(r: &Resolved, run_id: &str) -> Result<i32, CliError> {
    let dir = locate(r, run_id)?;
    let e = evaluate_deployment(&dir, r.replay.as_deref()).map_err(phase_err)?;
    let eval_dir = dir.join("eval");
    create_dir(&eval_dir)?;
    write_metrics(&e.ml, &eval_dir, "ml")?;
    write_metrics(&e.monitor_only, &eval_dir, "monitor_only")?;
    write_metrics(&e.baseline, &eval_dir, "baseline")?;
    let table = evaluation_table(&e);
    write_file(&eval_dir.join("table.txt"), &table)?;
    print!("{table}");
    Ok(EXIT_OK)
}

fn report_cmd(r: &Resolved, run_id: &str) -> Result<i32, CliError> {
    let dir = locate(r, run_id)?;
    let manifest = load_manifest(&dir).map_err(phase_err)?;
    let training = load_training_report(&dir).map_err(phase_err)?;
    let rep = &training.report;
    println!("run {}  (backend {}, seed {})", manifest.run_id, manifest.backend, manifest.seed);
    println!("winner {}", training.winner);
    println!("  holdout accuracy {:.4}  f1_macro {:.4}", rep.accuracy, rep.f1_macro);
    println!("  cv      accuracy {:.4}  f1_macro {:.4}", rep.cv_accuracy, rep.cv_f1_macro);
    let c = rep.confusion;
    println!("  confusion tn {} fp {} fn {} tp {}", c.tn, c.fp, c.fn_, c.tp);
    if let Some(l) = rep.latency_us_p99 {
        println!("  p99 latency {l:.2} us, size {} bytes", rep.size_bytes);
    }
    println!();
    println!("{:<48} {:>8} {:>8} {:>10} {:>8}", "candidate", "cv_f1", "hold_acc", "p99_us", "bytes");
    let mut cand_csv = String::from("label,algorithm,cv_accuracy,cv_f1_macro,holdout_accuracy,holdout_f1_macro,latency_us_p99,size_bytes\n");
    for cand in &training.candidates {
        println!(
            "{:<48} {:>8.4} {:>8.4} {:>10.2} {:>8}",
            cand.label, cand.cv_f1_macro, cand.holdout_accuracy, cand.measured_latency_us_p99, cand.artifact_size_bytes
        );
        let _ = writeln!(
            cand_csv,
            "\"{}\",{},{},{},{},{},{},{}",
            cand.label,
            cand.algorithm.as_str(),
            cand.cv_accuracy,
            cand.cv_f1_macro,
            cand.holdout_accuracy,
            cand.holdout_f1_macro,
            cand.measured_latency_us_p99,
            cand.artifact_size_bytes
        );
    }
    println!();
    print!("{}", timing_report(&manifest.timings));

    let plots = dir.join("plots");
    create_dir(&plots)?;
    write_file(&plots.join("candidates.csv"), &cand_csv)?;
    let mut timing_csv = String::from("phase,wall_ms,cold\n");
    for t in &manifest.timings {
        let _ = writeln!(timing_csv, "{},{},{}", t.phase.as_str(), t.wall_ms, t.cold);
    }
    let _ = writeln!(timing_csv, "total,{},", total_ms(&manifest.timings));
    let _ = writeln!(timing_csv, "wall,{},", manifest.total_wall_ms);
    write_file(&plots.join("timings.csv"), &timing_csv)?;
    let trace = read_trace(&dir.join(&manifest.files.trace)).map_err(data_err)?;
    let thr = manifest.spec.label_rule.threshold_fraction;
    let mut timeline = String::from("t,util,congested\n");
    for (t, u) in trace.util.iter().enumerate() {
        let _ = writeln!(timeline, "{t},{u},{}", u8::from(*u > thr));
    }
    write_file(&plots.join("utilization.csv"), &timeline)?;
    println!("plot data written to {}", plots.display());
    Ok(EXIT_OK)
}
