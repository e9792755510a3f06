//! Subprocess evaluation of configurations: marker substitution into a code
//! template, compile/run command execution with timeout kill, metric
//! extraction, and penalty assignment for failed trials.
//!
//! A template contains `#P<n>` markers named after the space's parameters.
//! Instantiation substitutes each parameter's value for its marker (longest
//! marker first, so `#P10` is never corrupted by the substitution for `#P1`)
//! and an inactive parameter substitutes the empty string. Generated sources
//! are written under `generated/`, named by a content hash of the
//! configuration, and kept for inspection and reuse.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{Configuration, ParamSpace, ParamValue, SpaceError};

/// Extra seconds allowed past the timeout for the kill to land and pipes to
/// drain before `evaluate` must have returned.
pub const KILL_GRACE_SECONDS: f64 = 5.0;

/// Multiplier applied to the worst successful metric when pricing a failed
/// trial once at least one success exists.
pub const PENALTY_FACTOR: f64 = 10.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("template never mentions marker `#{0}`")]
    MissingMarker(String),
    #[error("template markers are not in declaration order: `#{first}` appears after `#{second}`")]
    MarkerOrder { first: String, second: String },
    #[error("template marker `{0}` has no corresponding parameter")]
    UnknownMarker(String),
    #[error("command template is empty after substitution")]
    EmptyCommand,
    #[error("unbalanced quote in command `{0}`")]
    UnbalancedQuote(String),
    #[error("invalid metric pattern: {0}")]
    BadPattern(#[from] regex::Error),
    #[error("eval spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("cannot read eval file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse eval spec: {0}")]
    Parse(#[from] serde_json::Error),
}

/// How the scalar metric is extracted from a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MetricMode {
    /// Wall-clock seconds of the run subprocess.
    Walltime,
    /// Last floating-point token on stdout.
    StdoutLastNumber,
    /// First capture group of the last match of `pattern` on stdout.
    StdoutRegex { pattern: String },
    /// Like `stdout_regex`, then inverted (`1/x`) so that maximizing scores
    /// such as accuracies become minimization metrics.
    InverseStdout { pattern: String },
}

fn default_repeats() -> usize {
    1
}

fn default_timeout() -> f64 {
    300.0
}

/// Declarative description of how one configuration is evaluated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSpec {
    /// Code template with `#P<n>` markers.
    pub template: PathBuf,
    /// Space file the template's markers correspond to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<PathBuf>,
    /// Compile command with `{source}`, `{binary}`, `{workdir}` placeholders;
    /// absent for directly runnable templates (scripts).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compile: Option<String>,
    /// Run command with the same placeholders.
    pub run: String,
    pub metric: MetricMode,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Extra environment for compile and run, on top of the parent's.
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

impl EvalSpec {
    /// Load from JSON, resolving the template/space paths relative to the
    /// spec file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let mut spec: EvalSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if spec.template.is_relative() {
            spec.template = base.join(&spec.template);
        }
        if let Some(space) = &spec.space {
            if space.is_relative() {
                spec.space = Some(base.join(space));
            }
        }
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<(), EvalError> {
        if !(self.timeout_seconds > 0.0) {
            return Err(EvalError::BadSpec("timeout_seconds must be positive".into()));
        }
        if self.repeats == 0 {
            return Err(EvalError::BadSpec("repeats must be at least 1".into()));
        }
        match &self.metric {
            MetricMode::StdoutRegex { pattern } | MetricMode::InverseStdout { pattern } => {
                Regex::new(pattern)?;
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    CompileFail,
    RunFail,
    Timeout,
}

impl TrialStatus {
    pub fn is_ok(self) -> bool {
        self == TrialStatus::Ok
    }
}

impl fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrialStatus::Ok => "ok",
            TrialStatus::CompileFail => "compile_fail",
            TrialStatus::RunFail => "run_fail",
            TrialStatus::Timeout => "timeout",
        };
        f.write_str(s)
    }
}

impl FromStr for TrialStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(TrialStatus::Ok),
            "compile_fail" => Ok(TrialStatus::CompileFail),
            "run_fail" => Ok(TrialStatus::RunFail),
            "timeout" => Ok(TrialStatus::Timeout),
            other => Err(format!("unknown trial status `{other}`")),
        }
    }
}

/// Outcome of evaluating one configuration. Failed trials carry the penalty
/// metric in `metric` rather than a measurement.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub configuration: Configuration,
    pub metric: f64,
    /// Total wall seconds spent on the whole evaluation (all repeats).
    pub elapsed: f64,
    pub status: TrialStatus,
    pub stdout_digest: String,
    pub stderr_digest: String,
}

/// Code template with named substitution markers.
#[derive(Debug, Clone)]
pub struct CodeTemplate {
    text: String,
}

impl CodeTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        CodeTemplate { text: text.into() }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Ok(Self::new(std::fs::read_to_string(path)?))
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    fn numbered_markers(&self) -> Vec<(usize, String)> {
        // Markers follow the `#P<digits>` convention; other `#` uses
        // (preprocessor lines, comments) are left alone.
        let pattern = Regex::new(r"#(P[0-9]+)").expect("static pattern");
        pattern
            .captures_iter(&self.text)
            .map(|c| {
                let m = c.get(1).unwrap();
                (m.start(), m.as_str().to_string())
            })
            .collect()
    }

    /// Verify this template against a space: every parameter appears as a
    /// marker, first occurrences run top-down in declaration order, and no
    /// numbered marker lacks a parameter.
    pub fn check_against(&self, space: &ParamSpace) -> Result<(), EvalError> {
        let mut last: Option<(usize, &str)> = None;
        for p in space.parameters() {
            let marker = format!("#{}", p.name);
            let at = self
                .text
                .find(&marker)
                .ok_or_else(|| EvalError::MissingMarker(p.name.clone()))?;
            if let Some((prev_at, prev_name)) = last {
                if at < prev_at {
                    return Err(EvalError::MarkerOrder {
                        first: p.name.clone(),
                        second: prev_name.to_string(),
                    });
                }
            }
            last = Some((at, &p.name));
        }
        for (_, name) in self.numbered_markers() {
            if space.parameter(&name).is_none() {
                return Err(EvalError::UnknownMarker(format!("#{name}")));
            }
        }
        Ok(())
    }

    /// Substitute configuration values for markers. Longer parameter names
    /// substitute first; an inactive parameter becomes the empty string.
    /// The result is byte-deterministic in (template, configuration).
    pub fn instantiate(
        &self,
        space: &ParamSpace,
        cfg: &Configuration,
    ) -> Result<String, EvalError> {
        for (_, name) in self.numbered_markers() {
            if space.parameter(&name).is_none() {
                return Err(EvalError::UnknownMarker(format!("#{name}")));
            }
        }
        let mut names: Vec<&str> = space.parameters().iter().map(|p| p.name.as_str()).collect();
        names.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let mut out = self.text.clone();
        for name in names {
            let value = match cfg.get(name) {
                Some(ParamValue::Active(v)) => v.clone(),
                Some(ParamValue::Inactive) => String::new(),
                None => {
                    return Err(EvalError::BadSpec(format!(
                        "configuration does not assign `{name}`"
                    )))
                }
            };
            out = out.replace(&format!("#{name}"), &value);
        }
        Ok(out)
    }
}

/// Split a command template into argv words. Single and double quotes group
/// words; backslash escapes the next character outside single quotes.
pub fn split_command(text: &str) -> Result<Vec<String>, EvalError> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut in_word = false;
    let mut chars = text.chars();
    loop {
        let Some(c) = chars.next() else { break };
        match c {
            ' ' | '\t' | '\n' => {
                if in_word {
                    words.push(std::mem::take(&mut current));
                    in_word = false;
                }
            }
            '\'' => {
                in_word = true;
                loop {
                    match chars.next() {
                        Some('\'') => break,
                        Some(c) => current.push(c),
                        None => return Err(EvalError::UnbalancedQuote(text.to_string())),
                    }
                }
            }
            '"' => {
                in_word = true;
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some(e) => current.push(e),
                            None => return Err(EvalError::UnbalancedQuote(text.to_string())),
                        },
                        Some(c) => current.push(c),
                        None => return Err(EvalError::UnbalancedQuote(text.to_string())),
                    }
                }
            }
            '\\' => {
                in_word = true;
                match chars.next() {
                    Some(e) => current.push(e),
                    None => return Err(EvalError::UnbalancedQuote(text.to_string())),
                }
            }
            c => {
                in_word = true;
                current.push(c);
            }
        }
    }
    if in_word {
        words.push(current);
    }
    if words.is_empty() {
        return Err(EvalError::EmptyCommand);
    }
    Ok(words)
}

/// Last floating-point token in `text`, if any.
pub fn last_number(text: &str) -> Option<f64> {
    let pattern = Regex::new(r"[-+]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][-+]?[0-9]+)?")
        .expect("static pattern");
    pattern
        .find_iter(text)
        .last()
        .and_then(|m| m.as_str().parse().ok())
}

fn regex_number(pattern: &str, text: &str) -> Result<Option<f64>, EvalError> {
    let re = Regex::new(pattern)?;
    Ok(re.captures_iter(text).last().and_then(|c| {
        let m = c.get(1).or_else(|| c.get(0)).unwrap();
        m.as_str().parse().ok()
    }))
}

/// Extract the metric for one finished repeat.
pub fn parse_metric(mode: &MetricMode, stdout: &str, wall_seconds: f64) -> Result<Option<f64>, EvalError> {
    Ok(match mode {
        MetricMode::Walltime => Some(wall_seconds),
        MetricMode::StdoutLastNumber => last_number(stdout),
        MetricMode::StdoutRegex { pattern } => regex_number(pattern, stdout)?,
        MetricMode::InverseStdout { pattern } => {
            regex_number(pattern, stdout)?.map(|x| 1.0 / x).filter(|m| m.is_finite())
        }
    })
}

/// Keep the tail of captured output for the result database.
fn digest(bytes: &[u8]) -> String {
    const KEEP: usize = 2000;
    let text = String::from_utf8_lossy(bytes);
    let text = text.trim_end();
    if text.len() <= KEEP {
        text.to_string()
    } else {
        let cut = text.len() - KEEP;
        let cut = (cut..text.len()).find(|&i| text.is_char_boundary(i)).unwrap();
        format!("…{}", &text[cut..])
    }
}

/// What happened to one subprocess invocation.
pub(crate) struct CommandOutcome {
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub wall_seconds: f64,
}

/// Run argv to completion or `timeout`, killing the whole process group at
/// the deadline. Stdout/stderr are drained concurrently so a chatty child
/// cannot deadlock on a full pipe.
pub(crate) fn run_command(
    argv: &[String],
    env: &BTreeMap<String, String>,
    cwd: &Path,
    timeout: Duration,
) -> Result<CommandOutcome, std::io::Error> {
    let started = Instant::now();
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .envs(env)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    let mut child = cmd.spawn()?;

    let mut out_pipe = child.stdout.take().expect("stdout piped");
    let mut err_pipe = child.stderr.take().expect("stderr piped");
    let out_thread = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_thread = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });

    let mut timed_out = false;
    let exit_status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= timeout {
            timed_out = true;
            kill_process_group(&mut child);
            break child.wait()?;
        }
        std::thread::sleep(Duration::from_millis(5));
    };

    Ok(CommandOutcome {
        exit_code: exit_status.code(),
        timed_out,
        stdout: out_thread.join().unwrap_or_default(),
        stderr: err_thread.join().unwrap_or_default(),
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn kill_process_group(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        // The child leads its own process group, so a negative pid reaches
        // any grandchildren (shells, spawned workers) too.
        unsafe {
            libc::kill(-(child.id() as i32), libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

/// Stateful subprocess evaluator for one run directory.
///
/// Tracks the worst successful metric to price failures: a failed or
/// timed-out trial is recorded at `PENALTY_FACTOR` times the worst success,
/// or at the timeout duration in seconds while no success exists yet.
pub struct Evaluator {
    spec: EvalSpec,
    space: ParamSpace,
    template: CodeTemplate,
    run_dir: PathBuf,
    source_ext: String,
    worst_ok: Option<f64>,
}

impl Evaluator {
    pub fn new(spec: EvalSpec, space: ParamSpace, run_dir: impl Into<PathBuf>) -> Result<Self, EvalError> {
        spec.check()?;
        let template = CodeTemplate::from_path(&spec.template)?;
        template.check_against(&space)?;
        let run_dir = run_dir.into();
        std::fs::create_dir_all(run_dir.join("generated"))?;
        std::fs::create_dir_all(run_dir.join("logs"))?;
        let source_ext = spec
            .template
            .extension()
            .map(|e| format!(".{}", e.to_string_lossy()))
            .unwrap_or_default();
        Ok(Evaluator {
            spec,
            space,
            template,
            run_dir,
            source_ext,
            worst_ok: None,
        })
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn spec(&self) -> &EvalSpec {
        &self.spec
    }

    /// Metric assigned to a failing trial right now.
    pub fn penalty(&self) -> f64 {
        match self.worst_ok {
            Some(worst) => PENALTY_FACTOR * worst,
            None => self.spec.timeout_seconds,
        }
    }

    /// Override the number of run repeats (used to re-measure a winner).
    pub fn set_repeats(&mut self, repeats: usize) {
        self.spec.repeats = repeats.max(1);
    }

    fn substitute(template: &str, source: &Path, binary: &Path, workdir: &Path) -> String {
        template
            .replace("{source}", &source.to_string_lossy())
            .replace("{binary}", &binary.to_string_lossy())
            .replace("{workdir}", &workdir.to_string_lossy())
    }

    fn failure(
        &self,
        cfg: &Configuration,
        status: TrialStatus,
        started: Instant,
        stdout: &[u8],
        stderr: &[u8],
    ) -> TrialRecord {
        TrialRecord {
            configuration: cfg.clone(),
            metric: self.penalty(),
            elapsed: started.elapsed().as_secs_f64(),
            status,
            stdout_digest: digest(stdout),
            stderr_digest: digest(stderr),
        }
    }

    /// Evaluate one valid configuration end to end. Never panics on a
    /// failing candidate: compile errors, run errors, timeouts, and missing
    /// metrics all come back as failed records carrying the penalty metric.
    pub fn evaluate(&mut self, cfg: &Configuration) -> TrialRecord {
        let started = Instant::now();
        let timeout = Duration::from_secs_f64(self.spec.timeout_seconds);
        let hash = cfg.content_hash();

        let source_text = match self.template.instantiate(&self.space, cfg) {
            Ok(text) => text,
            Err(e) => {
                return self.failure(cfg, TrialStatus::RunFail, started, b"", e.to_string().as_bytes())
            }
        };
        let source = self.run_dir.join("generated").join(format!("cfg-{hash}{}", self.source_ext));
        let binary = self.run_dir.join("generated").join(format!("cfg-{hash}.bin"));
        let log = self.run_dir.join("logs").join(format!("cfg-{hash}.log"));
        if let Err(e) = std::fs::write(&source, &source_text) {
            return self.failure(cfg, TrialStatus::RunFail, started, b"", e.to_string().as_bytes());
        }

        let mut log_text = String::new();

        if let Some(compile_template) = &self.spec.compile {
            let rendered = Self::substitute(compile_template, &source, &binary, &self.run_dir);
            let argv = match split_command(&rendered) {
                Ok(argv) => argv,
                Err(e) => {
                    return self.failure(cfg, TrialStatus::CompileFail, started, b"", e.to_string().as_bytes())
                }
            };
            log_text.push_str(&format!("$ {rendered}\n"));
            match run_command(&argv, &self.spec.env, &self.run_dir, timeout) {
                Err(spawn_error) => {
                    let message = format!("cannot spawn `{}`: {spawn_error}", argv[0]);
                    log_text.push_str(&message);
                    let _ = std::fs::write(&log, &log_text);
                    return self.failure(cfg, TrialStatus::CompileFail, started, b"", message.as_bytes());
                }
                Ok(outcome) => {
                    log_text.push_str(&String::from_utf8_lossy(&outcome.stdout));
                    log_text.push_str(&String::from_utf8_lossy(&outcome.stderr));
                    if outcome.timed_out {
                        let _ = std::fs::write(&log, &log_text);
                        return self.failure(cfg, TrialStatus::Timeout, started, &outcome.stdout, &outcome.stderr);
                    }
                    if outcome.exit_code != Some(0) {
                        let _ = std::fs::write(&log, &log_text);
                        return self.failure(cfg, TrialStatus::CompileFail, started, &outcome.stdout, &outcome.stderr);
                    }
                }
            }
        }

        let rendered = Self::substitute(&self.spec.run, &source, &binary, &self.run_dir);
        let argv = match split_command(&rendered) {
            Ok(argv) => argv,
            Err(e) => {
                return self.failure(cfg, TrialStatus::RunFail, started, b"", e.to_string().as_bytes())
            }
        };

        let mut best_metric: Option<f64> = None;
        let mut last_stdout = Vec::new();
        let mut last_stderr = Vec::new();
        for repeat in 0..self.spec.repeats {
            log_text.push_str(&format!("$ {rendered} (repeat {})\n", repeat + 1));
            let outcome = match run_command(&argv, &self.spec.env, &self.run_dir, timeout) {
                Err(spawn_error) => {
                    let message = format!("cannot spawn `{}`: {spawn_error}", argv[0]);
                    log_text.push_str(&message);
                    let _ = std::fs::write(&log, &log_text);
                    return self.failure(cfg, TrialStatus::RunFail, started, b"", message.as_bytes());
                }
                Ok(outcome) => outcome,
            };
            log_text.push_str(&String::from_utf8_lossy(&outcome.stdout));
            log_text.push_str(&String::from_utf8_lossy(&outcome.stderr));
            if outcome.timed_out {
                let _ = std::fs::write(&log, &log_text);
                return self.failure(cfg, TrialStatus::Timeout, started, &outcome.stdout, &outcome.stderr);
            }
            if outcome.exit_code != Some(0) {
                let _ = std::fs::write(&log, &log_text);
                return self.failure(cfg, TrialStatus::RunFail, started, &outcome.stdout, &outcome.stderr);
            }
            let stdout_text = String::from_utf8_lossy(&outcome.stdout).into_owned();
            let parsed = match parse_metric(&self.spec.metric, &stdout_text, outcome.wall_seconds) {
                Ok(parsed) => parsed,
                Err(e) => {
                    let _ = std::fs::write(&log, &log_text);
                    return self.failure(cfg, TrialStatus::RunFail, started, &outcome.stdout, e.to_string().as_bytes());
                }
            };
            let Some(metric) = parsed.filter(|m| m.is_finite()) else {
                let _ = std::fs::write(&log, &log_text);
                return self.failure(cfg, TrialStatus::RunFail, started, &outcome.stdout, b"no metric found in output");
            };
            best_metric = Some(best_metric.map_or(metric, |b: f64| b.min(metric)));
            last_stdout = outcome.stdout;
            last_stderr = outcome.stderr;
        }
        let _ = std::fs::write(&log, &log_text);

        let metric = best_metric.expect("at least one repeat ran");
        self.worst_ok = Some(self.worst_ok.map_or(metric, |w| w.max(metric)));
        TrialRecord {
            configuration: cfg.clone(),
            metric,
            elapsed: started.elapsed().as_secs_f64(),
            status: TrialStatus::Ok,
            stdout_digest: digest(&last_stdout),
            stderr_digest: digest(&last_stderr),
        }
    }
}
