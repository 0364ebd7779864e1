//! Runs every test file of a question and turns each run into data.
//!
//! Each test file gets its own scratch directory holding a fresh copy of the
//! submission, and its own sandboxed child. The child is the trusted test
//! driver; it evaluates student code through `autograde exec-as` (named by
//! `GRADER_BIN`), which drops to the grading user and exposes only the
//! submission copy. Results come back over the line protocol in
//! [`protocol`].

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use crate::diagnostics::Diagnostic;
use crate::question::{file_name, QuestionLayout};
use crate::sandbox::{
    apply_lockdown, copy_tree, minimal_env, run_sandboxed, Isolation, LockdownOptions,
    LockdownPlan, RunOutcome, SandboxSpec, DEFAULT_GRACE_S, DEFAULT_GRADING_USER,
    DEFAULT_STREAM_LIMIT,
};

pub mod backend;
pub mod protocol;
pub mod seed;

pub use backend::{BackendError, LanguageBackend};
pub use protocol::{compare_and_record, parse_result_stream, ExpectationRecord, SENTINEL};
pub use seed::{daily_seed, SeedPolicy};

pub const SEED_VAR: &str = "GRADER_SEED";
pub const BIN_VAR: &str = "GRADER_BIN";
pub const USER_VAR: &str = "GRADER_USER";
pub const TIMEOUT_VAR: &str = "GRADER_TIMEOUT";
pub const STRICT_VAR: &str = "GRADER_STRICT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Passed,
    Failed,
    /// The test produced no usable verdict: it crashed, timed out, or
    /// reported nothing.
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestResult {
    pub file: String,
    pub outcome: Outcome,
    pub records: Vec<ExpectationRecord>,
    pub raw_stderr: String,
    pub duration_ms: u64,
    pub timed_out: bool,
    /// Why a test is Absent, plus protocol and capture warnings.
    pub diagnostics: Vec<Diagnostic>,
}

impl TestResult {
    pub fn absent(file: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            file: file.into(),
            outcome: Outcome::Absent,
            records: Vec::new(),
            raw_stderr: String::new(),
            duration_ms: 0,
            timed_out: false,
            diagnostics: vec![Diagnostic::error(reason)],
        }
    }

    /// Human-readable reasons the test did not complete, if any.
    pub fn failure_notes(&self) -> Vec<String> {
        self.diagnostics
            .iter()
            .filter(|d| d.is_error())
            .map(|d| d.message.clone())
            .collect()
    }

    /// Absent for a reason other than the time limit: the test driver
    /// itself broke down.
    pub fn crashed(&self) -> bool {
        self.outcome == Outcome::Absent && !self.timed_out && self.records.is_empty()
    }

    fn from_run(file: String, run: RunOutcome, timeout_s: u64) -> Self {
        let (records, mut diagnostics) = parse_result_stream(&run.stdout);
        let completed = !run.timed_out && run.exit_code.is_some();
        let outcome = if !completed || records.is_empty() {
            Outcome::Absent
        } else if records.iter().all(|r| r.passed) {
            Outcome::Passed
        } else {
            Outcome::Failed
        };
        if run.timed_out {
            diagnostics.push(Diagnostic::error(format!("timed out after {timeout_s} s")));
        } else if let Some(signal) = run.signal {
            diagnostics.push(Diagnostic::error(format!("killed by signal {signal}")));
        } else if records.is_empty() {
            diagnostics.push(Diagnostic::error(format!(
                "no results reported (exit code {})",
                run.exit_code.unwrap_or(-1)
            )));
        }
        diagnostics.extend(
            run.diagnostics
                .iter()
                .filter(|d| !d.message.starts_with("timed out"))
                .cloned(),
        );
        Self {
            file,
            outcome,
            records,
            raw_stderr: run.stderr_lossy(),
            duration_ms: run.duration_ms,
            timed_out: run.timed_out,
            diagnostics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarnessConfig {
    /// Staged submission files; copied afresh for every test.
    pub submission_dir: PathBuf,
    /// Parent of the per-test scratch directories.
    pub scratch_root: PathBuf,
    pub timeout_s: u64,
    pub grace_s: u64,
    pub grading_user: String,
    pub strict_isolation: bool,
    pub stdout_limit_bytes: usize,
    pub stderr_limit_bytes: usize,
    pub niceness: Option<i32>,
    /// The `autograde` executable offered to tests as `GRADER_BIN`.
    pub helper: Option<PathBuf>,
}

impl HarnessConfig {
    pub fn new(submission_dir: impl Into<PathBuf>, scratch_root: impl Into<PathBuf>, timeout_s: u64) -> Self {
        Self {
            submission_dir: submission_dir.into(),
            scratch_root: scratch_root.into(),
            timeout_s,
            grace_s: DEFAULT_GRACE_S,
            grading_user: DEFAULT_GRADING_USER.to_owned(),
            strict_isolation: false,
            stdout_limit_bytes: DEFAULT_STREAM_LIMIT,
            stderr_limit_bytes: DEFAULT_STREAM_LIMIT,
            niceness: None,
            helper: None,
        }
    }
}

fn scratch_name(index: usize, file: &str) -> String {
    let stem: String = file
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("{index:02}_{stem}")
}

/// Picks the file tests should evaluate: the first by name with the
/// backend's extension, else the first file.
fn pick_submission_file(dir: &Path, extension: &str) -> Option<PathBuf> {
    let mut files: Vec<PathBuf> = WalkDir::new(dir)
        .min_depth(1)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect();
    files.sort();
    let matching = files
        .iter()
        .find(|p| !extension.is_empty() && p.extension().is_some_and(|e| e == extension));
    matching.or(files.first()).cloned()
}

struct PreparedTest {
    scratch: PathBuf,
    student_file: PathBuf,
    isolation: Isolation,
    diagnostics: Vec<Diagnostic>,
}

fn prepare_scratch(
    index: usize,
    file: &str,
    backend: &LanguageBackend,
    config: &HarnessConfig,
) -> Result<PreparedTest, String> {
    let scratch = config.scratch_root.join(scratch_name(index, file));
    if scratch.exists() {
        fs::remove_dir_all(&scratch).map_err(|e| format!("{}: {e}", scratch.display()))?;
    }
    fs::create_dir_all(&scratch).map_err(|e| format!("{}: {e}", scratch.display()))?;
    let _ = fs::set_permissions(&config.scratch_root, fs::Permissions::from_mode(0o711));
    if config.submission_dir.is_dir() {
        copy_tree(&config.submission_dir, &scratch).map_err(|e| e.to_string())?;
    }

    let copies: Vec<PathBuf> = fs::read_dir(&scratch)
        .map_err(|e| format!("{}: {e}", scratch.display()))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .collect();
    let plan = LockdownPlan {
        root_owned_paths: copies,
        writable_for_grader: vec![scratch.clone()],
    };
    let options = LockdownOptions {
        grading_user: config.grading_user.clone(),
        strict: config.strict_isolation,
    };
    let receipt = apply_lockdown(&plan, &options).map_err(|e| e.to_string())?;

    let mut diagnostics = Vec::new();
    let student_file = match pick_submission_file(&scratch, &backend.file_extension) {
        Some(path) => path,
        None => {
            diagnostics.push(Diagnostic::warning("no submission file to evaluate"));
            let name = if backend.file_extension.is_empty() {
                "submission".to_owned()
            } else {
                format!("submission.{}", backend.file_extension)
            };
            scratch.join(name)
        }
    };
    Ok(PreparedTest {
        scratch,
        student_file,
        isolation: receipt.isolation,
        diagnostics,
    })
}

/// Runs one test file. Never fails: problems become an Absent result.
pub fn run_test_file(
    index: usize,
    test_file: &Path,
    layout: &QuestionLayout,
    backend: &LanguageBackend,
    seed: &SeedPolicy,
    config: &HarnessConfig,
) -> TestResult {
    let file = file_name(test_file);
    let prepared = match prepare_scratch(index, &file, backend, config) {
        Ok(p) => p,
        Err(reason) => return TestResult::absent(file, format!("could not prepare test: {reason}")),
    };

    let answer = layout
        .reference_answer
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    let command = backend.command_for(
        &test_file.display().to_string(),
        &prepared.student_file.display().to_string(),
        &answer,
    );
    let mut env = minimal_env(&prepared.scratch);
    env.insert(SEED_VAR.to_owned(), seed.seed_for(index).to_string());
    env.insert(USER_VAR.to_owned(), config.grading_user.clone());
    // exec-as backstop; the driver's own timeout always fires first.
    env.insert(
        TIMEOUT_VAR.to_owned(),
        (config.timeout_s + config.grace_s + 1).to_string(),
    );
    env.insert(
        STRICT_VAR.to_owned(),
        if config.strict_isolation { "1" } else { "0" }.to_owned(),
    );
    if let Some(helper) = &config.helper {
        env.insert(BIN_VAR.to_owned(), helper.display().to_string());
    }

    let spec = SandboxSpec {
        env,
        grace_s: config.grace_s,
        stdout_limit_bytes: config.stdout_limit_bytes,
        stderr_limit_bytes: config.stderr_limit_bytes,
        niceness: config.niceness,
        ..SandboxSpec::new(&prepared.scratch, command, config.timeout_s)
    };
    let mut result = match run_sandboxed(&spec) {
        Ok(run) => TestResult::from_run(file, run, config.timeout_s),
        Err(err) => TestResult::absent(file, err.to_string()),
    };
    result.diagnostics.extend(prepared.diagnostics);
    if prepared.isolation != Isolation::FullPrivilegeDrop {
        result.diagnostics.push(Diagnostic::warning(format!(
            "submission isolation: {}",
            prepared.isolation
        )));
    }
    result
}

/// One [`TestResult`] per test file, in test-file order.
pub fn run_test_dir(
    layout: &QuestionLayout,
    backend: &LanguageBackend,
    seed: &SeedPolicy,
    config: &HarnessConfig,
) -> Vec<TestResult> {
    if let Err(err) = fs::create_dir_all(&config.scratch_root) {
        let reason = format!("{}: {err}", config.scratch_root.display());
        return layout
            .test_files
            .iter()
            .map(|t| TestResult::absent(file_name(t), reason.clone()))
            .collect();
    }
    layout
        .test_files
        .iter()
        .enumerate()
        .map(|(index, test)| run_test_file(index, test, layout, backend, seed, config))
        .collect()
}
