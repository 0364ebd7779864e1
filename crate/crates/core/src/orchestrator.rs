//! The end-to-end grading pipeline plus the authoring commands.
//!
//! A job directory looks like this:
//!
//! ```text
//! <job>/student/          submitted files
//! <job>/tests/            reference answer (ans.*) and tests/ with the test files
//! <job>/info.json         question descriptor (optional)
//! <job>/results/          results.json ends up here
//! ```
//!
//! Grading works in `<job>/run/`, which is rebuilt on every invocation.

use std::fmt;
use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::annotation::{extract_for_files, extract_metadata, MetadataSet};
use crate::diagnostics::{has_errors, Diagnostic};
use crate::harness::{run_test_dir, HarnessConfig, LanguageBackend, Outcome, SeedPolicy, TestResult};
use crate::question::{load_question, load_tests, validate_layout, QuestionInfo, QuestionLayout};
use crate::report::{
    aggregate, catastrophic_report, emit_results, error_to_report, stderr_tail, GradingReport,
};
use crate::sandbox::{
    apply_lockdown, stage_job, LockdownOptions, LockdownPlan, DEFAULT_GRADING_USER, DEFAULT_PATH,
};

pub const DEFAULT_JOB_DIR: &str = "/grade/";
pub const JOB_DIR_VAR: &str = "JOB_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct GraderConfig {
    pub job_dir: PathBuf,
    pub backend: LanguageBackend,
    pub grading_user: String,
    pub strict_isolation: bool,
    /// Pins the daily seed.
    pub date_override: Option<NaiveDate>,
    pub color: bool,
    /// Per-test limit; defaults to the question's `timeout`.
    pub timeout_s: Option<u64>,
    /// Grader-provided files copied next to the tests.
    pub assets_dir: Option<PathBuf>,
    /// Executable handed to tests as `GRADER_BIN`.
    pub helper: Option<PathBuf>,
}

impl GraderConfig {
    pub fn new(job_dir: impl Into<PathBuf>, backend: LanguageBackend) -> Self {
        Self {
            job_dir: absolute(job_dir.into()),
            backend,
            grading_user: DEFAULT_GRADING_USER.to_owned(),
            strict_isolation: false,
            date_override: None,
            color: false,
            timeout_s: None,
            assets_dir: None,
            helper: None,
        }
    }

    /// `--job-dir`, else `$JOB_DIR`, else `/grade/`.
    pub fn resolve_job_dir(flag: Option<PathBuf>) -> PathBuf {
        let dir = flag
            .or_else(|| std::env::var_os(JOB_DIR_VAR).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_JOB_DIR));
        absolute(dir)
    }

    pub fn results_path(&self) -> PathBuf {
        results_path(&self.job_dir)
    }
}

pub fn results_path(job_dir: &Path) -> PathBuf {
    job_dir.join("results").join("results.json")
}

fn absolute(path: PathBuf) -> PathBuf {
    std::path::absolute(&path).unwrap_or(path)
}

/// Phase-prefixed log lines on a caller-supplied stream (stderr in the CLI).
pub struct Log<'a> {
    out: &'a mut dyn Write,
    color: bool,
}

#[derive(Clone, Copy)]
enum Tone {
    Plain,
    Good,
    Bad,
    Warn,
}

impl<'a> Log<'a> {
    pub fn new(out: &'a mut dyn Write, color: bool) -> Self {
        Self { out, color }
    }

    pub fn init(&mut self, msg: impl fmt::Display) {
        let _ = writeln!(self.out, "[init] {msg}");
    }

    pub fn run(&mut self, msg: impl fmt::Display) {
        let _ = writeln!(self.out, "[run] {msg}");
    }

    fn tinted(&mut self, tone: Tone, msg: impl fmt::Display) {
        let code = match tone {
            Tone::Plain => "",
            Tone::Good => "32",
            Tone::Bad => "31",
            Tone::Warn => "33",
        };
        if self.color && !code.is_empty() {
            let _ = writeln!(self.out, "[run] \x1b[{code}m{msg}\x1b[0m");
        } else {
            let _ = writeln!(self.out, "[run] {msg}");
        }
    }

    fn diagnostics(&mut self, phase: &str, diags: &[Diagnostic]) {
        for d in diags {
            let _ = writeln!(self.out, "[{phase}] {d}");
        }
    }
}

#[derive(Debug)]
struct PipelineError(String);

impl<E: std::error::Error> From<E> for PipelineError {
    fn from(err: E) -> Self {
        PipelineError(err.to_string())
    }
}

fn fail(msg: impl Into<String>) -> PipelineError {
    PipelineError(msg.into())
}

/// Checks that the backend's program can be started with the sandbox `PATH`.
pub fn check_backend(backend: &LanguageBackend) -> Result<PathBuf, String> {
    backend.validate().map_err(|e| e.to_string())?;
    let program = backend.program();
    let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("/"));
    which::which_in(program, Some(DEFAULT_PATH), cwd)
        .map_err(|_| format!("backend program `{program}` not found"))
}

fn load_job_question(job_dir: &Path, tests_dir: &Path, log: &mut Log) -> Result<QuestionLayout, PipelineError> {
    let info_path = job_dir.join("info.json");
    let info = if info_path.is_file() {
        QuestionInfo::from_path(&info_path)?
    } else {
        log.init("no info.json in job directory; using defaults");
        QuestionInfo::fallback()
    };
    Ok(load_tests(job_dir, tests_dir, info)?)
}

fn run_pipeline(config: &GraderConfig, log: &mut Log) -> Result<GradingReport, PipelineError> {
    let job = &config.job_dir;
    log.init(format!("job directory {}", job.display()));
    let program = check_backend(&config.backend).map_err(fail)?;
    log.init(format!("backend {} ({})", config.backend.name, program.display()));

    log.init("making directories and copying content");
    let staged = stage_job(
        &job.join("student"),
        config.assets_dir.as_deref(),
        &job.join("tests"),
        job,
    )?;
    log.diagnostics("init", &staged.diagnostics);

    let layout = load_job_question(job, &staged.tests_dir, log)?;
    let checks = validate_layout(&layout);
    log.diagnostics("init", &checks);
    if has_errors(&checks) {
        return Err(fail("question failed validation"));
    }
    let metadata = extract_for_files(&layout.test_files, &config.backend.comment_leader)?;
    log.diagnostics("init", &metadata.diagnostics);

    log.init(format!("locking down job files for user `{}`", config.grading_user));
    let plan = LockdownPlan {
        root_owned_paths: lockdown_targets(job)?,
        writable_for_grader: Vec::new(),
    };
    let options = LockdownOptions {
        grading_user: config.grading_user.clone(),
        strict: config.strict_isolation,
    };
    let receipt = apply_lockdown(&plan, &options)?;
    log.init(format!("isolation: {}", receipt.isolation));
    log.diagnostics("init", &receipt.warnings);

    let seed = match config.date_override {
        Some(date) => SeedPolicy::for_date(date),
        None => SeedPolicy::today(),
    };
    let mut harness = HarnessConfig::new(
        &staged.bin_dir,
        staged.run_dir.join("work"),
        config.timeout_s.unwrap_or(layout.info.timeout_s),
    );
    harness.grading_user = config.grading_user.clone();
    harness.strict_isolation = config.strict_isolation;
    harness.helper = config.helper.clone();

    log.run(format!(
        "running {} tests (seed {}, timeout {} s)",
        layout.test_files.len(),
        seed.seed,
        harness.timeout_s
    ));
    let results = run_test_dir(&layout, &config.backend, &seed, &harness);
    log_results(log, &results, &metadata);

    if !results.is_empty() && results.iter().all(TestResult::crashed) {
        // Not one test got as far as reporting: the runner is broken, not
        // the submission.
        let message = format!(
            "the test runner failed on every test: {}",
            stderr_tail(&results[0])
        );
        return Ok(error_to_report(&message, metadata.total_points()));
    }
    let report = aggregate(&results, &metadata.tests);
    log.diagnostics("run", &report.diagnostics);
    Ok(report)
}

/// Everything in the job directory except the results.
fn lockdown_targets(job: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(job)?
        .filter_map(Result::ok)
        .filter(|e| e.file_name() != "results")
        .map(|e| e.path())
        .collect();
    paths.sort();
    Ok(paths)
}

fn log_results(log: &mut Log, results: &[TestResult], metadata: &MetadataSet) {
    for result in results {
        let title = metadata
            .tests
            .iter()
            .find(|m| m.file == result.file)
            .map_or(result.file.as_str(), |m| m.title.as_str());
        let (tone, word) = match result.outcome {
            Outcome::Passed => (Tone::Good, "passed"),
            Outcome::Failed => (Tone::Bad, "FAILED"),
            Outcome::Absent => (Tone::Warn, "did not complete"),
        };
        log.tinted(
            tone,
            format!("{} ({title}): {word} in {} ms", result.file, result.duration_ms),
        );
        for d in &result.diagnostics {
            log.run(format!("  {d}"));
        }
    }
}

/// Writes the catastrophic document for `job_dir`. Returns the exit code.
pub fn fail_job(job_dir: &Path, reason: &str, log: &mut Log) -> i32 {
    log.run(format!("grading failed: {reason}"));
    write_report(&catastrophic_report(""), &results_path(job_dir), log)
}

fn write_report(report: &GradingReport, path: &Path, log: &mut Log) -> i32 {
    if let Some(parent) = path.parent() {
        let _ = fs::create_dir_all(parent);
    }
    match emit_results(report, path) {
        Ok(()) => {
            log.run("copied results");
            0
        }
        Err(err) => {
            log.run(format!("could not write results: {err}"));
            // Last resort: a plain write of the fallback document.
            match fs::write(path, catastrophic_report("").to_json()) {
                Ok(()) => 0,
                Err(err) => {
                    log.run(format!("could not write fallback results: {err}"));
                    1
                }
            }
        }
    }
}

/// Grades one job. Returns 0 whenever a results document was written, even
/// if grading itself failed.
pub fn grade(config: &GraderConfig, out: &mut dyn Write) -> i32 {
    let mut log = Log::new(out, config.color);
    log.run("starting autograder");
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| run_pipeline(config, &mut log)));
    let report = match outcome {
        Ok(Ok(report)) => {
            let tone = if report.succeeded && report.score == 1.0 {
                Tone::Good
            } else if report.succeeded {
                Tone::Plain
            } else {
                Tone::Bad
            };
            log.tinted(
                tone,
                format!(
                    "score {} ({} of {} points)",
                    report.score,
                    report.total_points(),
                    report.max_points()
                ),
            );
            report
        }
        Ok(Err(PipelineError(reason))) => {
            log.run(format!("grading failed: {reason}"));
            catastrophic_report("")
        }
        Err(_) => {
            log.run("grading failed: internal panic");
            catastrophic_report("")
        }
    };
    log.run("autograder completed");
    write_report(&report, &config.results_path(), &mut log)
}

/// Prints the tests of a question with their titles and points.
pub fn inspect(question_root: &Path, comment_leader: &str, out: &mut dyn Write) -> i32 {
    let layout = match load_question(question_root) {
        Ok(layout) => layout,
        Err(err) => {
            let _ = writeln!(out, "error: {err}");
            return 1;
        }
    };
    let metadata = match extract_metadata(&layout.tests_dir, comment_leader) {
        Ok(m) => m,
        Err(err) => {
            let _ = writeln!(out, "error: {err}");
            return 1;
        }
    };
    let _ = writeln!(out, "{} ({})", layout.info.title, layout.info.uuid);
    let width = metadata.tests.iter().map(|t| t.file.len()).max().unwrap_or(0);
    for test in &metadata.tests {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {}",
            test.file,
            fmt_points(test.max_points),
            test.title
        );
    }
    let _ = writeln!(
        out,
        "{} tests, {} points",
        metadata.tests.len(),
        fmt_points(metadata.total_points())
    );
    for d in layout.notes.iter().chain(&metadata.diagnostics) {
        let _ = writeln!(out, "{d}");
    }
    0
}

fn fmt_points(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("{p:.0}")
    } else {
        p.to_string()
    }
}

/// Prints every problem found in a question. Exit code 0 iff none are errors.
pub fn validate(question_root: &Path, comment_leader: &str, out: &mut dyn Write) -> i32 {
    let layout = match load_question(question_root) {
        Ok(layout) => layout,
        Err(err) => {
            let _ = writeln!(out, "error: {err}");
            return 1;
        }
    };
    let mut diags = validate_layout(&layout);
    match extract_for_files(&layout.test_files, comment_leader) {
        Ok(metadata) => diags.extend(metadata.diagnostics),
        Err(err) => diags.push(Diagnostic::error(err.to_string())),
    }
    for d in &diags {
        let _ = writeln!(out, "{d}");
    }
    if has_errors(&diags) {
        1
    } else {
        let _ = writeln!(out, "ok");
        0
    }
}
