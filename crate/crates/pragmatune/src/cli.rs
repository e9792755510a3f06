//! Command-line surface. Four subcommands bind the library together:
//! `tune` runs a model-guided search over a parameter space, `mctree
//! autotune` searches stacks of loop transformations, `analyze` reports the
//! best row of a finished run, and `space` validates, counts, or samples a
//! space file on its own.
//!
//! Exit statuses are part of the interface: 0 means the command completed
//! (even if individual trials failed), 2 means inputs did not parse or flags
//! were invalid, 3 means the run finished without a single successful trial.
//! The last stdout line of every data-producing command is one JSON object,
//! so scripts can consume results without scraping the human-readable text
//! above it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::evaluator::{last_number, run_command, EvalSpec, Evaluator, TrialStatus};
use crate::optimizer::{
    run_search, SearchSettings, SearchState, DEFAULT_BATCH_SIZE, DEFAULT_KAPPA, DEFAULT_MAX_EVALS,
};
use crate::perfdb::{PerfDb, ResultRow};
use crate::space::{ParamSpace, Sampler};
use crate::surrogate::SurrogateKind;
use crate::treespace::{
    instantiate_stack, tree_search, LoopAnnotation, StackOutcome, TreeSearchSettings,
};

const EXIT_OK: i32 = 0;
const EXIT_BAD_INPUT: i32 = 2;
const EXIT_NO_SUCCESS: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "pragmatune",
    about = "Search-based autotuner for code-transformation parameter spaces",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Model-guided search over a parameter space against an evaluation spec.
    Tune(TuneArgs),
    /// Loop-transformation tree search driven by a real compile command.
    Mctree {
        #[command(subcommand)]
        command: MctreeCommand,
    },
    /// Report the best configuration of a finished run directory.
    Analyze(AnalyzeArgs),
    /// Validate, count, or sample a space file without running anything.
    Space(SpaceArgs),
}

#[derive(Args, Debug)]
struct TuneArgs {
    /// Evaluation spec (template, commands, metric) as JSON.
    #[arg(long, value_name = "FILE")]
    eval_spec: PathBuf,
    /// Space file; defaults to the `space` entry of the eval spec.
    #[arg(long, value_name = "FILE")]
    space: Option<PathBuf>,
    /// Run directory; defaults to tune-<timestamp> under the current directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Evaluation budget, counting duplicate skips on the GP path.
    #[arg(long, default_value_t = DEFAULT_MAX_EVALS)]
    max_evals: usize,
    /// Surrogate model: RF, ET, GBRT, or GP.
    #[arg(long, default_value = "RF")]
    learner: SurrogateKind,
    /// Exploration weight in the acquisition score `mean - kappa*std`.
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    kappa: f64,
    /// Sampler and model seed; defaults to the space file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Valid candidates scored per model-guided iteration.
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    /// Random evaluations before the model takes over; defaults to
    /// max(10, 2 x parameters), capped at --max-evals.
    #[arg(long)]
    n_init: Option<usize>,
    /// Per-command timeout in minutes, overriding the eval spec.
    #[arg(long, value_name = "MINUTES")]
    eval_timeout_minutes: Option<f64>,
    /// Evaluation backend. Only `subprocess` exists.
    #[arg(long, default_value = "subprocess")]
    evaluator: String,
    /// Run repeats per configuration (the minimum is kept), overriding the
    /// eval spec.
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum MctreeCommand {
    /// Search stacks of tiling/interchange/parallelization pragmas, letting
    /// the compiler reject malformed stacks.
    Autotune(MctreeArgs),
}

#[derive(Args, Debug)]
struct MctreeArgs {
    /// Loop annotation file naming the source, the pragma marker line, and
    /// the loop nesting.
    #[arg(long, value_name = "FILE")]
    loops: PathBuf,
    /// Number of valid (compiled-and-ran) evaluations to collect.
    #[arg(long, default_value_t = 100)]
    budget: usize,
    /// Per-command timeout in seconds.
    #[arg(long, default_value_t = 300.0, value_name = "SECONDS")]
    timeout: f64,
    /// Tile size choices offered to every tiling step.
    #[arg(long, value_delimiter = ',', default_value = "2,4")]
    tile_choices: Vec<u64>,
    /// Run directory; defaults to mctree-<timestamp> under the current
    /// directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// How the metric is read from a run: its wall-clock seconds or the last
    /// number it prints.
    #[arg(long, value_enum, default_value_t = MctreeMetric::Walltime)]
    metric: MctreeMetric,
    /// Retain generated sources and binaries. They are always retained;
    /// the flag is accepted for interface compatibility.
    #[arg(long)]
    keep: bool,
    /// Compile command; the argument matching the annotated source file and
    /// the argument after -o are rewritten per experiment.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        required = true,
        value_name = "COMPILE-COMMAND"
    )]
    compile: Vec<String>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum MctreeMetric {
    Walltime,
    StdoutLastNumber,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Run directory holding results.csv and results.json.
    run_dir: PathBuf,
    /// Also write the convergence series as TSV.
    #[arg(long, value_name = "FILE")]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SpaceArgs {
    /// Space file as JSON.
    file: PathBuf,
    #[command(subcommand)]
    action: SpaceAction,
}

#[derive(Subcommand, Debug)]
enum SpaceAction {
    /// Check the file's invariants and summarize its structure.
    Validate,
    /// Print the domain-product and condition-aware member counts.
    Count,
    /// Print N valid configurations drawn with the file's seed.
    Sample { n: usize },
}

/// Parse the process arguments and dispatch. Returns the process exit code;
/// flag and subcommand errors exit directly through the argument parser.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Tune(args) => cmd_tune(args),
        Command::Mctree { command: MctreeCommand::Autotune(args) } => cmd_mctree(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Space(args) => cmd_space(args),
    };
    match outcome {
        Ok(code) => code,
        Err(error) => {
            eprintln!("error: {error:#}");
            EXIT_BAD_INPUT
        }
    }
}

fn timestamp() -> String {
    chrono::Local::now().format("%Y-%m-%dT%H:%M:%S%.3f%z").to_string()
}

fn dir_stamp() -> String {
    chrono::Local::now().format("%Y%m%d-%H%M%S").to_string()
}

/// Thousands-separated decimal, the convention for quoting space sizes.
fn group_digits(n: u128) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Configuration as a JSON object in declaration order, `null` marking an
/// inactive parameter.
fn config_json(param_names: &[String], values: &[Option<String>]) -> serde_json::Value {
    let mut object = serde_json::Map::new();
    for (name, value) in param_names.iter().zip(values) {
        let v = match value {
            Some(text) => serde_json::Value::String(text.clone()),
            None => serde_json::Value::Null,
        };
        object.insert(name.clone(), v);
    }
    serde_json::Value::Object(object)
}

/// What `tune` ran with, written to the run directory before the first
/// evaluation. The `end` timestamp is the one field filled in afterwards.
#[derive(Serialize)]
struct RunManifest {
    space: PathBuf,
    eval_spec: PathBuf,
    settings: ManifestSettings,
    run_dir: PathBuf,
    start: String,
    end: Option<String>,
}

#[derive(Serialize)]
struct ManifestSettings {
    max_evals: usize,
    learner: String,
    kappa: f64,
    seed: u64,
    timeout_seconds: f64,
    batch_size: usize,
    n_init: Option<usize>,
    repeats: usize,
}

fn write_json_file(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_tune(args: TuneArgs) -> anyhow::Result<i32> {
    if args.evaluator != "subprocess" {
        bail!(
            "unsupported evaluator backend `{}`: only `subprocess` exists",
            args.evaluator
        );
    }

    let mut spec = EvalSpec::from_path(&args.eval_spec)
        .with_context(|| format!("cannot load eval spec {}", args.eval_spec.display()))?;
    let space_path = args
        .space
        .clone()
        .or_else(|| spec.space.clone())
        .ok_or_else(|| {
            anyhow!("no space file: pass --space or set `space` in the eval spec")
        })?;
    let space = ParamSpace::from_path(&space_path)
        .with_context(|| format!("cannot load space {}", space_path.display()))?;

    if let Some(minutes) = args.eval_timeout_minutes {
        if !(minutes > 0.0) {
            bail!("--eval-timeout-minutes must be positive, got {minutes}");
        }
        spec.timeout_seconds = minutes * 60.0;
    }
    if let Some(repeats) = args.repeats {
        spec.repeats = repeats;
    }

    let settings = SearchSettings {
        max_evals: args.max_evals,
        kappa: args.kappa,
        learner: args.learner,
        batch_size: args.batch_size,
        n_init: args.n_init,
        seed: args.seed.unwrap_or_else(|| space.seed()),
    };
    settings.check()?;

    let run_dir = args.out.unwrap_or_else(|| PathBuf::from(format!("tune-{}", dir_stamp())));
    let run_dir = std::path::absolute(&run_dir)?;
    std::fs::create_dir_all(&run_dir)
        .with_context(|| format!("cannot create run directory {}", run_dir.display()))?;

    // The evaluator checks the template against the space, so every input
    // error surfaces before anything is written.
    let mut evaluator = Evaluator::new(spec.clone(), space.clone(), &run_dir)?;

    let mut manifest = RunManifest {
        space: space_path,
        eval_spec: args.eval_spec,
        settings: ManifestSettings {
            max_evals: settings.max_evals,
            learner: settings.learner.to_string(),
            kappa: settings.kappa,
            seed: settings.seed,
            timeout_seconds: spec.timeout_seconds,
            batch_size: settings.batch_size,
            n_init: settings.n_init,
            repeats: spec.repeats,
        },
        run_dir: run_dir.clone(),
        start: timestamp(),
        end: None,
    };
    let manifest_path = run_dir.join("manifest.json");
    write_json_file(&manifest_path, &manifest)?;

    let param_names: Vec<String> =
        space.parameters().iter().map(|p| p.name.clone()).collect();
    let mut db = PerfDb::create(&run_dir, param_names.clone())?;

    let mut sink_error: Option<anyhow::Error> = None;
    let mut best_seen = f64::INFINITY;
    let state = run_search(&space, &settings, |cfg| {
        let record = evaluator.evaluate(cfg);
        let index = db.next_index();
        if record.status.is_ok() && record.metric < best_seen {
            best_seen = record.metric;
        }
        let best = if best_seen.is_finite() {
            format!("{best_seen:.6}")
        } else {
            "-".to_string()
        };
        eprintln!(
            "[{index}/{}] metric={:.6} status={} best={best}",
            settings.max_evals, record.metric, record.status
        );
        let appended = ResultRow::from_trial(index, &space, &record, timestamp())
            .map_err(anyhow::Error::from)
            .and_then(|row| db.append(row).map_err(anyhow::Error::from));
        if let (Err(error), None) = (appended, &sink_error) {
            sink_error = Some(error.context("cannot record trial"));
        }
        record
    })?;
    if let Some(error) = sink_error {
        return Err(error);
    }

    manifest.end = Some(timestamp());
    write_json_file(&manifest_path, &manifest)?;

    report_search(&state, &space, &param_names)
}

/// Shared tail of `tune`: the stderr summary and the final JSON line, or the
/// no-success exit.
fn report_search(
    state: &SearchState,
    space: &ParamSpace,
    param_names: &[String],
) -> anyhow::Result<i32> {
    let executed = state.evaluated.len();
    let ok = state.evaluated.iter().filter(|r| r.status.is_ok()).count();
    eprintln!(
        "budget {} spent: {executed} executed, {ok} ok, {} skipped as duplicates",
        state.budget_used,
        state.budget_used - executed
    );
    let Some(best_index) = state.best_index else {
        eprintln!("no successful trials");
        return Ok(EXIT_NO_SUCCESS);
    };
    let best = &state.evaluated[best_index];
    let values = space.values_in_order(&best.configuration)?;
    println!(
        "{}",
        json!({
            "best_metric": best.metric,
            "best_index": best_index as u64 + 1,
            "configuration": config_json(param_names, &values),
        })
    );
    Ok(EXIT_OK)
}

fn cmd_analyze(args: AnalyzeArgs) -> anyhow::Result<i32> {
    let db = PerfDb::open(&args.run_dir)
        .with_context(|| format!("cannot open run directory {}", args.run_dir.display()))?;

    if let Some(plot) = &args.plot {
        db.export_plot(plot)?;
        eprintln!("wrote convergence series to {}", plot.display());
    }

    let Some((row, _)) = db.find_min() else {
        eprintln!("no successful trials");
        return Ok(EXIT_NO_SUCCESS);
    };
    println!(
        "best metric {} at evaluation {} of {}",
        row.metric,
        row.index,
        db.rows().len()
    );
    for (name, value) in db.param_names().iter().zip(&row.values) {
        match value {
            Some(v) => println!("  {name} = {v}"),
            None => println!("  {name} (inactive)"),
        }
    }
    println!(
        "{}",
        json!({
            "best_metric": row.metric,
            "best_index": row.index,
            "configuration": config_json(db.param_names(), &row.values),
        })
    );
    Ok(EXIT_OK)
}

fn cmd_space(args: SpaceArgs) -> anyhow::Result<i32> {
    let space = ParamSpace::from_path(&args.file)
        .with_context(|| format!("cannot load space {}", args.file.display()))?;
    match args.action {
        SpaceAction::Validate => {
            // Construction already enforced the invariants (unique names,
            // nonempty domains, defaults in domain, acyclic conditions over
            // known parameters); reaching this point means they all hold.
            println!("parameters: {}", space.len());
            println!("conditions: {}", space.conditions().len());
            println!("forbidden clauses: {}", space.forbidden().len());
            println!("all invariants hold");
            println!(
                "{}",
                json!({
                    "valid": true,
                    "parameters": space.len(),
                    "conditions": space.conditions().len(),
                    "forbidden": space.forbidden().len(),
                })
            );
        }
        SpaceAction::Count => {
            let cardinality = space.cardinality();
            println!("domain product: {}", group_digits(cardinality.domain_product));
            match cardinality.exact {
                Some(exact) => println!("exact members: {}", group_digits(exact as u128)),
                None => println!("exact members: not enumerated (space too large)"),
            }
            let product = u64::try_from(cardinality.domain_product)
                .map(serde_json::Value::from)
                .unwrap_or_else(|_| cardinality.domain_product.to_string().into());
            println!(
                "{}",
                json!({ "product": product, "exact": cardinality.exact })
            );
        }
        SpaceAction::Sample { n } => {
            let mut sampler = Sampler::with_seed(&space, space.seed());
            let names: Vec<String> =
                space.parameters().iter().map(|p| p.name.clone()).collect();
            for _ in 0..n {
                let cfg = sampler.draw()?;
                let values = space.values_in_order(&cfg)?;
                println!("{}", config_json(&names, &values));
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_mctree(args: MctreeArgs) -> anyhow::Result<i32> {
    let annotation = LoopAnnotation::from_path(&args.loops)
        .with_context(|| format!("cannot load loop annotation {}", args.loops.display()))?;
    let source_path = args
        .loops
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&annotation.source);
    let source_text = std::fs::read_to_string(&source_path)
        .with_context(|| format!("cannot read annotated source {}", source_path.display()))?;
    // Fail on a missing or ambiguous marker now, not at the first experiment.
    instantiate_stack(&source_text, &annotation.marker, &[])?;

    let source_slot = args
        .compile
        .iter()
        .position(|a| Path::new(a).file_name().is_some_and(|f| f == annotation.source.as_str()))
        .ok_or_else(|| {
            anyhow!(
                "compile command never mentions the annotated source `{}`",
                annotation.source
            )
        })?;
    let binary_slot = args
        .compile
        .iter()
        .position(|a| a == "-o")
        .map(|i| i + 1)
        .filter(|&i| i < args.compile.len())
        .ok_or_else(|| anyhow!("compile command needs `-o <output>`"))?;
    if binary_slot == source_slot {
        bail!("compile command uses the source file as the -o output");
    }

    let settings = TreeSearchSettings {
        budget: args.budget,
        tile_choices: args.tile_choices.clone(),
        seed: args.seed,
        ..TreeSearchSettings::default()
    };
    settings.check()?;
    if !(args.timeout > 0.0) {
        bail!("--timeout must be positive, got {}", args.timeout);
    }
    let timeout = Duration::from_secs_f64(args.timeout);

    let run_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("mctree-{}", dir_stamp())));
    let run_dir = std::path::absolute(&run_dir)?;
    std::fs::create_dir_all(run_dir.join("generated"))?;
    std::fs::create_dir_all(run_dir.join("logs"))?;

    let metric_name = match args.metric {
        MctreeMetric::Walltime => "walltime",
        MctreeMetric::StdoutLastNumber => "stdout_last_number",
    };
    let mut manifest = json!({
        "loops": args.loops,
        "compile": args.compile,
        "settings": {
            "budget": settings.budget,
            "tile_choices": settings.tile_choices,
            "max_stack_depth": settings.max_stack_depth,
            "exploit_probability": settings.exploit_probability,
            "seed": settings.seed,
            "timeout_seconds": args.timeout,
            "metric": metric_name,
        },
        "run_dir": run_dir,
        "start": timestamp(),
        "end": null,
    });
    let manifest_path = run_dir.join("manifest.json");
    write_json_file(&manifest_path, &manifest)?;

    let mut db = PerfDb::create(&run_dir, vec!["pragmas".to_string()])?;

    let source_ext = Path::new(&annotation.source)
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    let env = BTreeMap::new();
    let mut experiment = 0usize;
    let mut sink_error: Option<anyhow::Error> = None;

    let search = tree_search(&annotation, &settings, |pragmas| {
        experiment += 1;
        let (outcome, status, metric, elapsed, log_text) = run_stack(
            &args,
            &annotation,
            &source_text,
            pragmas,
            &run_dir,
            &source_ext,
            source_slot,
            binary_slot,
            timeout,
            &env,
            experiment,
        );
        let _ = std::fs::write(
            run_dir.join("logs").join(format!("stack-{experiment}.log")),
            &log_text,
        );
        eprintln!(
            "[{experiment}] depth {} status={status} metric={metric:.6}",
            pragmas.len()
        );
        let row = ResultRow {
            index: db.next_index(),
            values: vec![Some(pragmas.join("; "))],
            metric,
            elapsed,
            status,
            timestamp: timestamp(),
        };
        if let (Err(error), None) = (db.append(row), &sink_error) {
            sink_error = Some(anyhow::Error::from(error).context("cannot record experiment"));
        }
        outcome
    })?;
    if let Some(error) = sink_error {
        return Err(error);
    }

    manifest["end"] = json!(timestamp());
    write_json_file(&manifest_path, &manifest)?;

    eprintln!(
        "ran {} total experiments for {} valid ({} rejected by the compiler)",
        search.total_experiments, search.valid_experiments, search.rejected_experiments
    );
    let (pragmas, best_metric) = search
        .best_stack()
        .expect("the root was evaluated, so a best stack exists");
    println!(
        "{}",
        json!({
            "best_metric": best_metric,
            "pragmas": pragmas,
            "total_experiments": search.total_experiments,
            "valid_experiments": search.valid_experiments,
            "rejected_experiments": search.rejected_experiments,
        })
    );
    Ok(EXIT_OK)
}

/// Compile and run one pragma stack. Returns the search outcome together
/// with everything the results database and log file need. Failures carry
/// the timeout as their metric so rows stay numeric.
#[allow(clippy::too_many_arguments)]
fn run_stack(
    args: &MctreeArgs,
    annotation: &LoopAnnotation,
    source_text: &str,
    pragmas: &[String],
    run_dir: &Path,
    source_ext: &str,
    source_slot: usize,
    binary_slot: usize,
    timeout: Duration,
    env: &BTreeMap<String, String>,
    experiment: usize,
) -> (StackOutcome, TrialStatus, f64, f64, String) {
    let penalty = timeout.as_secs_f64();
    let mut log_text = String::new();

    let instantiated = match instantiate_stack(source_text, &annotation.marker, pragmas) {
        Ok(text) => text,
        Err(error) => {
            log_text.push_str(&format!("instantiation failed: {error}\n"));
            return (StackOutcome::RunFailed, TrialStatus::RunFail, penalty, 0.0, log_text);
        }
    };
    let source = run_dir.join("generated").join(format!("stack-{experiment}{source_ext}"));
    let binary = run_dir.join("generated").join(format!("stack-{experiment}.bin"));
    if let Err(error) = std::fs::write(&source, &instantiated) {
        log_text.push_str(&format!("cannot write {}: {error}\n", source.display()));
        return (StackOutcome::RunFailed, TrialStatus::RunFail, penalty, 0.0, log_text);
    }

    let mut argv = args.compile.clone();
    argv[source_slot] = source.to_string_lossy().into_owned();
    argv[binary_slot] = binary.to_string_lossy().into_owned();
    log_text.push_str(&format!("$ {}\n", argv.join(" ")));
    let mut elapsed = 0.0;
    match run_command(&argv, env, run_dir, timeout) {
        Err(spawn_error) => {
            log_text.push_str(&format!("cannot spawn `{}`: {spawn_error}\n", argv[0]));
            return (
                StackOutcome::CompileRejected,
                TrialStatus::CompileFail,
                penalty,
                elapsed,
                log_text,
            );
        }
        Ok(outcome) => {
            elapsed += outcome.wall_seconds;
            log_text.push_str(&String::from_utf8_lossy(&outcome.stdout));
            log_text.push_str(&String::from_utf8_lossy(&outcome.stderr));
            if outcome.timed_out {
                return (StackOutcome::RunFailed, TrialStatus::Timeout, penalty, elapsed, log_text);
            }
            if outcome.exit_code != Some(0) {
                return (
                    StackOutcome::CompileRejected,
                    TrialStatus::CompileFail,
                    penalty,
                    elapsed,
                    log_text,
                );
            }
        }
    }

    let run_argv = vec![binary.to_string_lossy().into_owned()];
    log_text.push_str(&format!("$ {}\n", run_argv[0]));
    match run_command(&run_argv, env, run_dir, timeout) {
        Err(spawn_error) => {
            log_text.push_str(&format!("cannot spawn `{}`: {spawn_error}\n", run_argv[0]));
            (StackOutcome::RunFailed, TrialStatus::RunFail, penalty, elapsed, log_text)
        }
        Ok(outcome) => {
            elapsed += outcome.wall_seconds;
            let stdout = String::from_utf8_lossy(&outcome.stdout).into_owned();
            log_text.push_str(&stdout);
            log_text.push_str(&String::from_utf8_lossy(&outcome.stderr));
            if outcome.timed_out {
                return (StackOutcome::RunFailed, TrialStatus::Timeout, penalty, elapsed, log_text);
            }
            if outcome.exit_code != Some(0) {
                return (StackOutcome::RunFailed, TrialStatus::RunFail, penalty, elapsed, log_text);
            }
            let metric = match args.metric {
                MctreeMetric::Walltime => Some(outcome.wall_seconds),
                MctreeMetric::StdoutLastNumber => last_number(&stdout),
            };
            match metric {
                Some(metric) => {
                    (StackOutcome::Metric(metric), TrialStatus::Ok, metric, elapsed, log_text)
                }
                None => {
                    log_text.push_str("no number on stdout\n");
                    (StackOutcome::RunFailed, TrialStatus::RunFail, penalty, elapsed, log_text)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_group_in_threes() {
        assert_eq!(group_digits(0), "0");
        assert_eq!(group_digits(648), "648");
        assert_eq!(group_digits(10_648), "10,648");
        assert_eq!(group_digits(3_500), "3,500");
        assert_eq!(group_digits(1_234_567_890), "1,234,567,890");
    }

    #[test]
    fn config_json_keeps_declaration_order_and_marks_inactive() {
        let names = vec!["P0".to_string(), "P1".to_string()];
        let values = vec![Some("a".to_string()), None];
        let object = config_json(&names, &values);
        assert_eq!(object.to_string(), r#"{"P0":"a","P1":null}"#);
    }

    #[test]
    fn argument_parser_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
