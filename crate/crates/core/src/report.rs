//! Merging test results with their metadata and writing `results.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize, Serializer};
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::annotation::{TestMetadata, DEFAULT_MAX_POINTS};
use crate::diagnostics::Diagnostic;
use crate::harness::{Outcome, TestResult};

pub const CATASTROPHIC_MESSAGE: &str =
    "Catastrophic failure! Contact course staff and have them check the logs for this submission.";
pub const ABSENT_PREFIX: &str = "test did not complete: ";
/// How much of a crashed test's stderr ends up in its feedback.
pub const STDERR_TAIL_LINES: usize = 20;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no test defines any points")]
    NoPointsDefined,
    #[error("failed to write {path}: {source}")]
    WriteFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed results document: {0}")]
    Malformed(String),
}

/// Integral values print without a fractional part, everything else in the
/// shortest form that reads back to the same double.
fn number<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    if value.fract() == 0.0 && value.abs() < 9.0e15 {
        s.serialize_i64(*value as i64)
    } else {
        s.serialize_f64(*value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedTest {
    pub name: String,
    #[serde(serialize_with = "number")]
    pub max_points: f64,
    #[serde(serialize_with = "number")]
    pub points: f64,
    pub output: String,
}

impl GradedTest {
    pub fn passed(&self) -> bool {
        self.points == self.max_points && self.output.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradingReport {
    pub tests: Vec<GradedTest>,
    pub score: f64,
    pub succeeded: bool,
    pub message: Option<String>,
    /// Notes for the logs; never serialized.
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Serialize)]
struct TestsDocument<'a> {
    tests: &'a [GradedTest],
    #[serde(serialize_with = "number")]
    score: f64,
    succeeded: bool,
}

#[derive(Deserialize)]
struct AnyDocument {
    #[serde(default)]
    tests: Option<Vec<GradedTest>>,
    score: f64,
    succeeded: bool,
    #[serde(default)]
    message: Option<String>,
}

impl GradingReport {
    pub fn total_points(&self) -> f64 {
        self.tests.iter().map(|t| t.points).sum()
    }

    pub fn max_points(&self) -> f64 {
        self.tests.iter().map(|t| t.max_points).sum()
    }

    /// True for reports written in the bare failure shape (no test rows).
    pub fn is_fallback(&self) -> bool {
        !self.succeeded && self.tests.is_empty()
    }

    /// The document as written to disk.
    pub fn to_json(&self) -> String {
        if self.is_fallback() {
            let message = self.message.as_deref().unwrap_or(CATASTROPHIC_MESSAGE);
            let escaped = serde_json::to_string(message).expect("strings always serialize");
            return format!("{{\"succeeded\": false, \"score\": 0.0, \"message\": {escaped}}}\n");
        }
        let doc = TestsDocument {
            tests: &self.tests,
            score: self.score,
            succeeded: self.succeeded,
        };
        serde_json::to_string(&doc).expect("reports always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let doc: AnyDocument =
            serde_json::from_str(text).map_err(|e| ReportError::Malformed(e.to_string()))?;
        Ok(Self {
            tests: doc.tests.unwrap_or_default(),
            score: doc.score,
            succeeded: doc.succeeded,
            message: doc.message,
            diagnostics: Vec::new(),
        })
    }
}

fn failed_output(result: &TestResult) -> String {
    let parts: Vec<String> = result
        .records
        .iter()
        .filter(|r| !r.passed)
        .map(|r| match (r.call.is_empty(), r.diff.is_empty()) {
            (_, true) => r.call.clone(),
            (true, false) => r.diff.clone(),
            (false, false) => format!("{}\n{}", r.call, r.diff),
        })
        .filter(|p| !p.is_empty())
        .collect();
    if parts.is_empty() {
        "expectation failed".to_owned()
    } else {
        parts.join("\n")
    }
}

/// The last lines of a test's stderr followed by the reasons it did not
/// complete, or "no output".
pub fn stderr_tail(result: &TestResult) -> String {
    let mut lines: Vec<String> = result.raw_stderr.lines().map(str::to_owned).collect();
    lines.extend(result.failure_notes());
    let start = lines.len().saturating_sub(STDERR_TAIL_LINES);
    let tail = lines[start..].join("\n");
    if tail.trim().is_empty() {
        "no output".to_owned()
    } else {
        tail
    }
}

fn absent_output(result: &TestResult) -> String {
    format!("{ABSENT_PREFIX}{}", stderr_tail(result))
}

fn grade_row(name: String, max_points: f64, result: Option<&TestResult>) -> GradedTest {
    let (points, output) = match result {
        Some(r) if r.outcome == Outcome::Passed => (max_points, String::new()),
        Some(r) if r.outcome == Outcome::Failed => (0.0, failed_output(r)),
        Some(r) => (0.0, absent_output(r)),
        None => (
            0.0,
            format!("{ABSENT_PREFIX}no result was recorded for this test"),
        ),
    };
    GradedTest {
        name,
        max_points,
        points,
        output,
    }
}

/// Full outer join of results and metadata on the file name, scored
/// all-or-nothing per test. Rows come out in file-name order.
pub fn try_aggregate(
    results: &[TestResult],
    metadata: &[TestMetadata],
) -> Result<GradingReport, ReportError> {
    let mut rows: BTreeMap<&str, (Option<&TestMetadata>, Option<&TestResult>)> = BTreeMap::new();
    for meta in metadata {
        rows.entry(meta.file.as_str()).or_default().0.get_or_insert(meta);
    }
    for result in results {
        rows.entry(result.file.as_str()).or_default().1.get_or_insert(result);
    }

    let mut diagnostics = Vec::new();
    let mut tests = Vec::with_capacity(rows.len());
    for (file, (meta, result)) in rows {
        let (name, max_points) = match meta {
            Some(m) => (m.title.clone(), m.max_points),
            None => {
                diagnostics.push(Diagnostic::warning(format!(
                    "result for {file} has no metadata; counted as {DEFAULT_MAX_POINTS} point"
                )));
                (file.to_owned(), DEFAULT_MAX_POINTS)
            }
        };
        tests.push(grade_row(name, max_points, result));
    }

    let max: f64 = tests.iter().map(|t| t.max_points).sum();
    if max.is_nan() || max <= 0.0 {
        return Err(ReportError::NoPointsDefined);
    }
    let earned: f64 = tests.iter().map(|t| t.points).sum();
    Ok(GradingReport {
        tests,
        score: (earned / max).clamp(0.0, 1.0),
        succeeded: true,
        message: None,
        diagnostics,
    })
}

/// Like [`try_aggregate`], but a question without points becomes a failed
/// report instead of an error.
pub fn aggregate(results: &[TestResult], metadata: &[TestMetadata]) -> GradingReport {
    try_aggregate(results, metadata).unwrap_or_else(|err| catastrophic_report(&err.to_string()))
}

/// The fallback document. An empty reason yields the standard message.
pub fn catastrophic_report(reason: &str) -> GradingReport {
    let message = if reason.is_empty() {
        CATASTROPHIC_MESSAGE
    } else {
        reason
    };
    GradingReport {
        tests: Vec::new(),
        score: 0.0,
        succeeded: false,
        message: Some(message.to_owned()),
        diagnostics: Vec::new(),
    }
}

/// A single zero-point "Error" row carrying `message`.
pub fn error_to_report(message: &str, max_points_total: f64) -> GradingReport {
    GradingReport {
        tests: vec![GradedTest {
            name: "Error".to_owned(),
            max_points: max_points_total,
            points: 0.0,
            output: message.to_owned(),
        }],
        score: 0.0,
        succeeded: false,
        message: Some(if message.is_empty() {
            CATASTROPHIC_MESSAGE.to_owned()
        } else {
            message.to_owned()
        }),
        diagnostics: Vec::new(),
    }
}

/// Writes the report to `path` via a temporary file in the same directory
/// and a rename.
pub fn emit_results(report: &GradingReport, path: &Path) -> Result<(), ReportError> {
    let fail = |source: io::Error| ReportError::WriteFailure {
        path: path.to_path_buf(),
        source,
    };
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(parent).map_err(fail)?;
    tmp.write_all(report.to_json().as_bytes()).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    // Temp files are created 0600; the platform reads results as another user.
    use std::os::unix::fs::PermissionsExt;
    fs::set_permissions(path, fs::Permissions::from_mode(0o644)).map_err(fail)?;
    Ok(())
}
