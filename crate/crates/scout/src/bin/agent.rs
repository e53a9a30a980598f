//! Command-line front end: single-episode runs, benchmark sweeps, grounding
//! evaluation, and training-sample export.
//!
//! Exit codes: 0 when everything succeeded, 1 when the commands ran but some
//! task-level item failed (an unvalidated answer, benchmark failures, missed
//! grounding examples, skipped traces), 2 for configuration problems, 3 for
//! fatal runtime errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{ArgAction, Args, Parser, Subcommand};

use scout::bench::{self, BenchmarkConfig, JudgeConfig};
use scout::config::{load_config, AppConfig, Mode};
use scout::domain::Task;
use scout::env::{EnvError, Environment, SimEnv};
use scout::fbc::{export_fbc, ExportOptions, TraceStore};
use scout::gateway::{Gateway, MockBackend};
use scout::localizer::{
    evaluate_grounding, CenterOracle, Localizer, LocalizerConfig, ModelLocator,
};
use scout::orchestrator::{run_episode, ModuleSet, RunConfig};
use scout::util;

#[derive(Parser)]
#[command(name = "agent", version, about = "Screenshot-driven web agent")]
struct Cli {
    /// TOML config file; omitted means built-in sim-mode defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task and print the answer and its cost.
    Run(RunArgs),
    /// Run a task corpus and write an accuracy/cost report.
    Bench(BenchArgs),
    /// Score a locator on a click-grounding dataset.
    Ground(GroundArgs),
    /// Export successful traces as chat-format training samples.
    ExportFbc(ExportFbcArgs),
}

#[derive(Args)]
struct RunArgs {
    /// What the agent should accomplish.
    #[arg(long)]
    task: String,

    /// Where the episode starts.
    #[arg(long)]
    url: String,

    #[command(flatten)]
    overrides: BudgetOverrides,

    #[command(flatten)]
    sim: SimArgs,

    /// Skip writing the episode trace.
    #[arg(long)]
    no_save: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Task corpus, one JSON record per line.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,

    /// Worker pool width for task-level parallelism.
    #[arg(long, default_value_t = 1)]
    parallel: usize,

    /// Where to write the JSON report.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    #[command(flatten)]
    overrides: BudgetOverrides,

    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct GroundArgs {
    /// Dataset directory (holding index.jsonl) or a JSONL file.
    #[arg(long, value_name = "PATH")]
    dataset: PathBuf,

    /// Model id to evaluate; overrides the configured localizer model.
    #[arg(long, conflicts_with = "oracle")]
    model: Option<String>,

    /// Evaluate the bbox-center oracle instead of a model (sanity check).
    #[arg(long)]
    oracle: bool,

    /// Worker pool width.
    #[arg(long, default_value_t = 1)]
    parallel: usize,

    /// Where to write the JSON report.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,

    /// Scripted model replies (JSON rule list) instead of live endpoints.
    #[arg(long, value_name = "FILE")]
    script: Option<PathBuf>,
}

#[derive(Args)]
struct ExportFbcArgs {
    /// Trace directory written by `agent run` (traces.jsonl + images/).
    #[arg(long, value_name = "DIR")]
    traces: PathBuf,

    /// Where to write the sample JSONL.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// JSON map of task id to judge outcome; with it, only judge-confirmed
    /// traces are exported.
    #[arg(long, value_name = "FILE")]
    judgments: Option<PathBuf>,
}

#[derive(Args)]
struct BudgetOverrides {
    /// Steps allowed per attempt.
    #[arg(long, value_name = "N")]
    max_steps: Option<u32>,

    /// Attempts allowed per episode.
    #[arg(long, value_name = "N")]
    max_attempts: Option<u32>,
}

#[derive(Args)]
struct SimArgs {
    /// Run against this simulated world instead of a live browser.
    #[arg(long, value_name = "WORLD.JSON")]
    sim: Option<PathBuf>,

    /// Scripted model replies (JSON rule list); required with --sim.
    #[arg(long, value_name = "FILE")]
    script: Option<PathBuf>,
}

/// Failures split by exit code.
enum CliError {
    /// Exit 2: the user asked for something contradictory or unloadable.
    Config(anyhow::Error),
    /// Exit 3: the setup was fine but the run died.
    Fatal(anyhow::Error),
}

type CliResult<T> = Result<T, CliError>;

fn config_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Config(e.into())
}

fn fatal_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Fatal(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match dispatch(cli) {
        Ok(code) => code,
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Fatal(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<ExitCode> {
    let config = load_app_config(cli.config.as_deref())?;
    match cli.command {
        Command::Run(args) => cmd_run(&config, args),
        Command::Bench(args) => cmd_bench(&config, args),
        Command::Ground(args) => cmd_ground(&config, args),
        Command::ExportFbc(args) => cmd_export_fbc(args),
    }
}

fn load_app_config(path: Option<&Path>) -> CliResult<AppConfig> {
    match path {
        Some(path) => load_config(path).map_err(config_err),
        None => Ok(AppConfig::default()),
    }
}

fn apply_overrides(run: &mut RunConfig, overrides: &BudgetOverrides) -> CliResult<()> {
    if let Some(max_steps) = overrides.max_steps {
        run.max_steps = max_steps;
    }
    if let Some(max_attempts) = overrides.max_attempts {
        run.max_attempts = max_attempts;
    }
    run.validate().map_err(config_err)
}

/// Binds every module to a backend: one shared scripted backend when a
/// script is given, live HTTP endpoints otherwise.
fn build_gateway(config: &AppConfig, script: Option<&Path>) -> CliResult<Gateway> {
    let mut gateway = Gateway::new(config.pricing_table());
    match script {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read script {}", path.display()))
                .map_err(config_err)?;
            let backend = Arc::new(
                MockBackend::from_script_json(&text)
                    .with_context(|| format!("bad script {}", path.display()))
                    .map_err(config_err)?,
            );
            for (tag, _, binding) in config.models.entries() {
                gateway.bind(tag, &binding.model, backend.clone());
            }
        }
        None => bind_live_backends(config, &mut gateway)?,
    }
    Ok(gateway)
}

#[cfg(feature = "live")]
fn bind_live_backends(config: &AppConfig, gateway: &mut Gateway) -> CliResult<()> {
    use scout::gateway::HttpBackend;
    config.validate(true).map_err(config_err)?;
    if config.mode != Mode::Live {
        return Err(config_err(anyhow!(
            "model endpoints need live mode; pass --sim with --script for offline runs"
        )));
    }
    for (tag, name, binding) in config.models.entries() {
        let base_url = binding.base_url.as_deref().unwrap_or_default();
        let api_key_env = binding.api_key_env.as_deref().unwrap_or_default();
        let timeout = Duration::from_millis(binding.timeout_ms.unwrap_or(120_000));
        let backend = HttpBackend::new(base_url, api_key_env, timeout)
            .map_err(|e| config_err(anyhow!("{name} endpoint: {e}")))?;
        gateway.bind(tag, &binding.model, Arc::new(backend));
    }
    Ok(())
}

#[cfg(not(feature = "live"))]
fn bind_live_backends(_config: &AppConfig, _gateway: &mut Gateway) -> CliResult<()> {
    Err(config_err(anyhow!(
        "this build has no live backends (feature \"live\" disabled); use --sim with --script"
    )))
}

fn make_sim_env(config: &AppConfig, world: &Path) -> CliResult<Box<dyn Environment>> {
    let env = SimEnv::load_file(world, config.env.clone())
        .with_context(|| format!("cannot load world {}", world.display()))
        .map_err(config_err)?;
    Ok(Box::new(env))
}

#[cfg(feature = "live")]
fn make_live_env(config: &AppConfig, start_url: &str) -> CliResult<Box<dyn Environment>> {
    use scout::env::{LiveConfig, LiveEnv};
    let live = LiveConfig { webdriver_url: config.webdriver_url.clone(), browser_args: vec![] };
    let env = LiveEnv::connect(&live, config.env.clone(), start_url)
        .map_err(|e| fatal_err(anyhow!("cannot open browser session: {e}")))?;
    Ok(Box::new(env))
}

#[cfg(not(feature = "live"))]
fn make_live_env(_config: &AppConfig, _start_url: &str) -> CliResult<Box<dyn Environment>> {
    Err(config_err(anyhow!(
        "this build has no live browser driver (feature \"live\" disabled); pass --sim"
    )))
}

/// Resolves the sim/live choice shared by `run` and `bench`. Sim runs are
/// hermetic, so they must script their models; a world without a script (or
/// the reverse) is a contradiction worth stopping on.
fn check_sim_args(config: &AppConfig, sim: &SimArgs) -> CliResult<()> {
    match (&sim.sim, &sim.script) {
        (Some(_), Some(_)) => Ok(()),
        (Some(_), None) => Err(config_err(anyhow!(
            "--sim needs --script: simulated runs are offline, so model replies must be scripted"
        ))),
        (None, Some(_)) => Err(config_err(anyhow!(
            "--script without --sim: scripted models only make sense against a simulated world"
        ))),
        (None, None) if config.mode == Mode::Sim => Err(config_err(anyhow!(
            "config is in sim mode; pass --sim <world.json> --script <replies.json>"
        ))),
        (None, None) => Ok(()),
    }
}

fn cmd_run(config: &AppConfig, args: RunArgs) -> CliResult<ExitCode> {
    check_sim_args(config, &args.sim)?;
    let mut run = config.run.clone();
    apply_overrides(&mut run, &args.overrides)?;

    let task = Task::new(format!("cli-{}", util::now_millis()), &args.url, &args.task)
        .map_err(config_err)?;
    let gateway = build_gateway(config, args.sim.script.as_deref())?;
    let mut env = match &args.sim.sim {
        Some(world) => make_sim_env(config, world)?,
        None => make_live_env(config, &args.url)?,
    };

    let result = run_episode(env.as_mut(), &gateway, &ModuleSet::with_defaults(), task, &run)
        .map_err(|e| fatal_err(anyhow!("episode failed: {e}")))?;

    match &result.answer {
        Some(answer) => println!("answer: {answer}"),
        None => println!("answer: (none)"),
    }
    println!("validated: {}", result.validated);
    println!(
        "attempts: {}   steps: {}   stop: {}",
        result.attempts_used,
        result.steps_total,
        serde_json::to_value(result.stop)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default()
    );
    println!("cost: ${:.6}", result.cost_usd);
    if let Some(error) = &result.error {
        println!("note: {error}");
    }

    if !args.no_save {
        let store = TraceStore::open(&config.output.traces_dir).map_err(fatal_err)?;
        store.save_episode(&result.trace, &result.images).map_err(fatal_err)?;
        println!("trace: {}", store.root().join("traces.jsonl").display());
    }

    Ok(exit_flag(result.validated))
}

fn cmd_bench(config: &AppConfig, args: BenchArgs) -> CliResult<ExitCode> {
    check_sim_args(config, &args.sim)?;
    let corpus = bench::load_corpus(&args.corpus).map_err(config_err)?;

    let mut bench_config = BenchmarkConfig {
        run: config.run.clone(),
        parallel: args.parallel,
        judge: config.models.judge.as_ref().map(|_| JudgeConfig::default()),
        today: util::today_utc(),
        ..BenchmarkConfig::default()
    };
    apply_overrides(&mut bench_config.run, &args.overrides)?;

    let gateway = build_gateway(config, args.sim.script.as_deref())?;
    let modules = ModuleSet::with_defaults();

    let report = match &args.sim.sim {
        Some(world) => {
            let world = world.clone();
            bench::run_benchmark(
                &corpus,
                &gateway,
                &modules,
                |_task| {
                    let env = SimEnv::load_file(&world, config.env.clone())
                        .map_err(|e| EnvError::Fatal(e.to_string()))?;
                    Ok(Box::new(env) as Box<dyn Environment>)
                },
                &bench_config,
            )
        }
        None => bench::run_benchmark(
            &corpus,
            &gateway,
            &modules,
            |task| live_env_for_bench(config, &task.task.website),
            &bench_config,
        ),
    }
    .map_err(|e| match e {
        bench::BenchError::EmptyCorpus | bench::BenchError::Config(_) => config_err(anyhow!(e)),
        other => fatal_err(anyhow!(other)),
    })?;

    print!("{}", report.render_text());
    if let Some(out) = &args.out {
        write_json(out, &report)?;
        println!("report: {}", out.display());
    }

    Ok(exit_flag(report.successes == report.total_tasks))
}

/// Bench workers need plain `EnvError`s, not CLI errors; live session setup
/// failures become per-task failures instead of killing the sweep.
fn live_env_for_bench(
    config: &AppConfig,
    start_url: &str,
) -> Result<Box<dyn Environment>, EnvError> {
    match make_live_env(config, start_url) {
        Ok(env) => Ok(env),
        Err(CliError::Config(e)) | Err(CliError::Fatal(e)) => Err(EnvError::Fatal(e.to_string())),
    }
}

fn cmd_ground(config: &AppConfig, args: GroundArgs) -> CliResult<ExitCode> {
    let dataset =
        scout::localizer::load_grounding_dataset(&args.dataset).map_err(config_err)?;

    let report = if args.oracle {
        evaluate_grounding(&dataset, &CenterOracle, args.parallel)
    } else {
        let mut config = config.clone();
        if let Some(model) = &args.model {
            config.models.localizer.model = model.clone();
        }
        config.validate(false).map_err(config_err)?;
        let gateway = build_gateway(&config, args.script.as_deref())?;
        let localizer = Localizer::new(LocalizerConfig::default());
        let locator = ModelLocator { localizer: &localizer, gateway: &gateway };
        evaluate_grounding(&dataset, &locator, args.parallel)
    };

    print!("{}", report.render());
    if let Some(out) = &args.out {
        write_json(out, &report)?;
        println!("report: {}", out.display());
    }

    Ok(exit_flag(report.overall.hits == report.overall.total))
}

fn cmd_export_fbc(args: ExportFbcArgs) -> CliResult<ExitCode> {
    let store = TraceStore::open(&args.traces).map_err(config_err)?;
    let traces = store.load_traces().map_err(config_err)?;

    let (judgments, options) = match &args.judgments {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read judgments {}", path.display()))
                .map_err(config_err)?;
            let map: BTreeMap<String, bool> = serde_json::from_str(&text)
                .with_context(|| format!("bad judgments {}", path.display()))
                .map_err(config_err)?;
            (map, ExportOptions { require_judge_confirmation: true })
        }
        None => (BTreeMap::new(), ExportOptions { require_judge_confirmation: false }),
    };

    let mut out = std::fs::File::create(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))
        .map_err(fatal_err)?;
    let stats = export_fbc(&traces, &judgments, &options, &store, &mut out).map_err(fatal_err)?;

    println!(
        "traces: {}   exported: {}   samples: {}   skipped: {}",
        stats.traces_seen, stats.traces_exported, stats.samples, stats.skipped
    );
    println!("samples: {}", args.out.display());

    Ok(exit_flag(stats.skipped == 0))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))
            .map_err(fatal_err)?;
    }
    let text = serde_json::to_string_pretty(value).map_err(fatal_err)?;
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(fatal_err)
}

fn exit_flag(all_succeeded: bool) -> ExitCode {
    if all_succeeded {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
