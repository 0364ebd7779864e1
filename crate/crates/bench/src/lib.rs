//! Input generators shared by the benchmarks.

use autograde_core::harness::{ExpectationRecord, Outcome, TestResult};
use autograde_core::TestMetadata;

/// `n` numbered lines with every `stride`-th one changed.
pub fn line_pair(n: usize, stride: usize) -> (Vec<String>, Vec<String>) {
    let a: Vec<String> = (0..n).map(|i| format!("line {i}")).collect();
    let b = a
        .iter()
        .enumerate()
        .map(|(i, l)| if stride > 0 && i % stride == 0 { format!("{l} changed") } else { l.clone() })
        .collect();
    (a, b)
}

/// Test output with `records` sentinel lines buried in ordinary prints.
pub fn result_stream(records: usize) -> Vec<u8> {
    let mut out = String::new();
    for i in 0..records {
        out.push_str("some chatter from the submission\n");
        let record = ExpectationRecord {
            passed: i % 3 != 0,
            call: format!("expect_equal(fib({i}), {i})"),
            diff: if i % 3 == 0 { "@@ -1 +1 @@\n-1\n+2".to_owned() } else { String::new() },
            info: None,
        };
        out.push_str(&record.to_line());
        out.push('\n');
    }
    out.into_bytes()
}

/// Matching metadata and results for `n` tests, with a few gaps on each side.
pub fn join_inputs(n: usize) -> (Vec<TestResult>, Vec<TestMetadata>) {
    let metadata = (0..n)
        .filter(|i| i % 17 != 5)
        .map(|i| TestMetadata {
            file: format!("test_{i:04}.sh"),
            title: format!("Test {i}"),
            max_points: 2.0,
        })
        .collect();
    let results = (0..n)
        .filter(|i| i % 13 != 7)
        .map(|i| TestResult {
            file: format!("test_{i:04}.sh"),
            outcome: match i % 3 {
                0 => Outcome::Passed,
                1 => Outcome::Failed,
                _ => Outcome::Absent,
            },
            records: Vec::new(),
            raw_stderr: "Error: boom\n".repeat(i % 4),
            duration_ms: 3,
            timed_out: false,
            diagnostics: Vec::new(),
        })
        .collect();
    (results, metadata)
}
