//! The line protocol between test children and the harness.
//!
//! A test reports each expectation as one stdout line:
//!
//! ```text
//! @@GRADER@@ {"passed":false,"call":"expect_equal(v, c(1,1))","diff":"@@ -1,2 +1 @@\n 1\n-1"}
//! ```
//!
//! `passed` is required; `call`, `diff` and `info` are optional strings. Any
//! other output is ignored, so submissions may print freely.

use serde::{Deserialize, Serialize};

use crate::diagnostics::Diagnostic;
use crate::diff::{myers_diff, render_unified, DEFAULT_CONTEXT, DEFAULT_MAX_LINES};

pub const SENTINEL: &str = "@@GRADER@@ ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationRecord {
    pub passed: bool,
    #[serde(default)]
    pub call: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub diff: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<String>,
}

impl ExpectationRecord {
    /// The record as one protocol line, without a trailing newline.
    pub fn to_line(&self) -> String {
        let json = serde_json::to_string(self).expect("records always serialize");
        format!("{SENTINEL}{json}")
    }
}

/// Extracts the records from a test's stdout. Malformed sentinel lines are
/// skipped and reported.
pub fn parse_result_stream(stdout: &[u8]) -> (Vec<ExpectationRecord>, Vec<Diagnostic>) {
    let text = String::from_utf8_lossy(stdout);
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let Some(payload) = line.strip_prefix(SENTINEL) else {
            continue;
        };
        match serde_json::from_str::<ExpectationRecord>(payload) {
            Ok(mut record) => {
                if record.passed && !record.diff.is_empty() {
                    record.diff.clear();
                    diagnostics.push(Diagnostic::warning(format!(
                        "line {}: diff on a passing record dropped",
                        idx + 1
                    )));
                }
                records.push(record);
            }
            Err(err) => diagnostics.push(Diagnostic::warning(format!(
                "line {}: malformed result record: {err}",
                idx + 1
            ))),
        }
    }
    (records, diagnostics)
}

fn canonical_number(token: &str) -> Option<String> {
    if !token.bytes().any(|b| b.is_ascii_digit()) {
        return None;
    }
    let value: f64 = token.parse().ok()?;
    if !value.is_finite() {
        return None;
    }
    if value.fract() == 0.0 && value.abs() < 1e15 {
        Some(format!("{}", value as i64))
    } else {
        Some(format!("{value:?}"))
    }
}

/// Value text in comparison form: one element per line, trailing whitespace
/// and trailing blank lines dropped, numbers in shortest round-trip form.
pub fn canonical_lines(text: &str) -> Vec<String> {
    let mut lines: Vec<String> = text
        .lines()
        .map(|line| {
            let line = line.trim_end();
            canonical_number(line.trim_start()).unwrap_or_else(|| line.to_owned())
        })
        .collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

/// Compares two canonicalised values; on mismatch the record carries a
/// unified diff from expected (`-`) to actual (`+`).
pub fn compare_and_record(expected: &str, actual: &str, call: &str) -> ExpectationRecord {
    let expected = canonical_lines(expected);
    let actual = canonical_lines(actual);
    let passed = expected == actual;
    let diff = if passed {
        String::new()
    } else {
        render_unified(&myers_diff(&expected, &actual), DEFAULT_CONTEXT, DEFAULT_MAX_LINES)
    };
    ExpectationRecord {
        passed,
        call: call.to_owned(),
        diff,
        info: None,
    }
}
