//! Acceptance checks. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

mod common;

use std::fs;
use std::os::unix::fs::{MetadataExt, PermissionsExt};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use autograde_core::annotation::extract_metadata;
use autograde_core::diff::{Edit, EditKind, Myers};
use autograde_core::harness::{Outcome, TestResult};
use autograde_core::sandbox::LockdownOptions;
use autograde_core::{
    aggregate, apply_lockdown, apply_script, daily_seed, myers_diff, LockdownPlan, TestMetadata,
};
use chrono::NaiveDate;
use common::{fixture, is_root, Job, CATASTROPHIC};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const DATE: &str = "2019-09-01";

fn fib_end_to_end() -> Check {
    let start = Instant::now();
    let correct = Job::new("fib", "fib/submissions/correct");
    correct.grade(&["--date", DATE]);
    let doc = correct.results();
    ensure!(doc["score"].as_f64() == Some(1.0), "correct submission scored {}", doc["score"]);

    let hardcoded = Job::new("fib", "fib/submissions/hardcoded");
    hardcoded.grade(&["--date", DATE]);
    let doc = hardcoded.results();
    let score = doc["score"].as_f64().ok_or("score missing")?;
    ensure!(score == 2.0 / 6.0, "hardcoded submission scored {score}");
    let tests = doc["tests"].as_array().ok_or("tests missing")?;
    let with_diff: Vec<bool> = tests
        .iter()
        .map(|t| t["output"].as_str().is_some_and(|o| o.contains("\n@@ ")))
        .collect();
    ensure!(with_diff == [false, true, true], "diff rows {with_diff:?}");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("score 1 and {score}, {elapsed:.2?}"))
}

fn catastrophic_fallback() -> Check {
    let start = Instant::now();
    let job = Job::new("fib", "fib/submissions/correct");
    let out = job.grade(&["--backend", "definitely-not-installed-xyz {test_file}"]);
    ensure!(out.status.code() == Some(0), "exit status {:?}", out.status);
    let doc = job.results();
    ensure!(doc["succeeded"] == false, "succeeded = {}", doc["succeeded"]);
    ensure!(doc["score"].as_f64() == Some(0.0), "score = {}", doc["score"]);
    ensure!(doc["message"] == CATASTROPHIC, "message = {}", doc["message"]);
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("{elapsed:.2?}"))
}

fn timeout_enforcement() -> Check {
    let job = Job::new("fib", "fib/submissions/loop");
    let info: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(job.path().join("info.json")).unwrap()).unwrap();
    let timeout = info["externalGradingOptions"]["timeout"].as_u64().ok_or("no timeout")?;
    ensure!(timeout == 5, "fixture timeout is {timeout}");
    let limit_ms = (timeout + 1 + 1) * 1000;

    let start = Instant::now();
    let out = job.grade(&[]);
    let elapsed = start.elapsed();
    let log = String::from_utf8_lossy(&out.stderr);
    let durations: Vec<u64> = log
        .lines()
        .filter_map(|l| l.split(" did not complete in ").nth(1))
        .filter_map(|rest| rest.trim_end_matches(" ms").parse().ok())
        .collect();
    ensure!(durations.len() == 3, "expected 3 reaped tests, log:\n{log}");
    ensure!(
        durations.iter().all(|&d| d <= limit_ms),
        "per-test durations {durations:?} exceed {limit_ms} ms"
    );
    ensure!(
        elapsed <= Duration::from_millis(3 * limit_ms),
        "whole run took {elapsed:?}"
    );
    let doc = job.results();
    for t in doc["tests"].as_array().ok_or("tests missing")? {
        ensure!(t["points"] == 0, "points {}", t["points"]);
        ensure!(
            t["output"].as_str().is_some_and(|o| o.starts_with("test did not complete: ")),
            "output {}",
            t["output"]
        );
    }
    Ok(format!("per-test {durations:?} ms, limit {limit_ms} ms"))
}

/// Insert/delete edit distance of `a` against every string on the path from
/// the root of the trie of `b`s; `rows[d]` holds the DP row for depth `d`.
struct DpOracle {
    rows: Vec<Vec<usize>>,
}

fn exhaustive_minimality() -> Check {
    const ALPHABET: u8 = 3;
    const MAX_LEN: usize = 8;
    let start = Instant::now();

    let mut all: Vec<Vec<u8>> = vec![Vec::new()];
    let mut frontier: Vec<Vec<u8>> = vec![Vec::new()];
    for _ in 0..MAX_LEN {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..ALPHABET {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }

    let mut myers = Myers::new();
    let mut edits: Vec<Edit> = Vec::new();
    let mut b = Vec::with_capacity(MAX_LEN);
    let mut pairs = 0u64;
    let mut mismatches = 0u64;
    let mut first_bad = None;
    for a in &all {
        let mut oracle = DpOracle {
            rows: vec![vec![0; a.len() + 1]; MAX_LEN + 1],
        };
        for (i, v) in oracle.rows[0].iter_mut().enumerate() {
            *v = i;
        }
        walk(
            a,
            &mut b,
            &mut oracle,
            &mut myers,
            &mut edits,
            &mut pairs,
            &mut mismatches,
            &mut first_bad,
            MAX_LEN,
            ALPHABET,
        );
    }
    let elapsed = start.elapsed();
    ensure!(
        mismatches == 0,
        "{mismatches} mismatches, first {first_bad:?}"
    );
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("{} sequences, {pairs} pairs, {elapsed:.2?}", all.len()))
}

#[allow(clippy::too_many_arguments)]
fn walk(
    a: &[u8],
    b: &mut Vec<u8>,
    oracle: &mut DpOracle,
    myers: &mut Myers,
    edits: &mut Vec<Edit>,
    pairs: &mut u64,
    mismatches: &mut u64,
    first_bad: &mut Option<(Vec<u8>, Vec<u8>, usize, usize)>,
    max_len: usize,
    alphabet: u8,
) {
    let depth = b.len();
    let expected = oracle.rows[depth][a.len()];
    myers.diff_into(a, b, edits);
    *pairs += 1;
    let count = edits.iter().filter(|e| e.kind != EditKind::Keep).count();
    if count != expected {
        *mismatches += 1;
        if first_bad.is_none() {
            *first_bad = Some((a.to_vec(), b.clone(), count, expected));
        }
    }
    if depth == max_len {
        return;
    }
    for c in 0..alphabet {
        let (prev, rest) = oracle.rows.split_at_mut(depth + 1);
        let prev = &prev[depth];
        let row = &mut rest[0];
        row[0] = depth + 1;
        for i in 1..=a.len() {
            row[i] = if a[i - 1] == c {
                prev[i - 1]
            } else {
                1 + prev[i].min(row[i - 1])
            };
        }
        b.push(c);
        walk(a, b, oracle, myers, edits, pairs, mismatches, first_bad, max_len, alphabet);
        b.pop();
    }
}

fn random_lines(rng: &mut StdRng) -> Vec<String> {
    let len = rng.gen_range(0..40);
    let alphabet = rng.gen_range(1..6);
    (0..len)
        .map(|_| format!("line {}", rng.gen_range(0..alphabet)))
        .collect()
}

fn diff_round_trip() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for case in 0..1000 {
        let a = random_lines(&mut rng);
        let b = random_lines(&mut rng);
        let script = myers_diff(&a, &b);
        let applied = apply_script(&a, &script).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(applied == b, "case {case}: {a:?} -> {b:?} gave {applied:?}");
    }
    Ok("1000 pairs".to_owned())
}

fn merge_semantics() -> Check {
    let mut rng = StdRng::seed_from_u64(0xa66);
    let mut checked = 0;
    for case in 0..1000 {
        let keys = rng.gen_range(1..12);
        let mut metadata = Vec::new();
        let mut results = Vec::new();
        for k in 0..keys {
            let file = format!("test_{k:02}.sh");
            let side = rng.gen_range(0..3);
            if side != 1 {
                metadata.push(TestMetadata {
                    file: file.clone(),
                    title: format!("T{k}"),
                    max_points: f64::from(rng.gen_range(0..6u32)) / 2.0,
                });
            }
            if side != 2 {
                let outcome = match rng.gen_range(0..3) {
                    0 => Outcome::Passed,
                    1 => Outcome::Failed,
                    _ => Outcome::Absent,
                };
                results.push(TestResult {
                    file,
                    outcome,
                    records: Vec::new(),
                    raw_stderr: String::new(),
                    duration_ms: 0,
                    timed_out: false,
                    diagnostics: Vec::new(),
                });
            }
        }

        // Naive oracle: look every key up on both sides.
        let mut expected = Vec::new();
        for k in 0..keys {
            let file = format!("test_{k:02}.sh");
            let meta = metadata.iter().find(|m| m.file == file);
            let result = results.iter().find(|r| r.file == file);
            if meta.is_none() && result.is_none() {
                continue;
            }
            let max = meta.map_or(1.0, |m| m.max_points);
            let passed = result.is_some_and(|r| r.outcome == Outcome::Passed);
            expected.push((max, if passed { max } else { 0.0 }));
        }
        let max_total: f64 = expected.iter().map(|e| e.0).sum();
        let report = aggregate(&results, &metadata);
        if max_total == 0.0 {
            ensure!(!report.succeeded, "case {case}: zero points must fail");
            continue;
        }
        ensure!(
            report.tests.len() == expected.len(),
            "case {case}: {} rows, expected {}",
            report.tests.len(),
            expected.len()
        );
        for (row, (max, points)) in report.tests.iter().zip(&expected) {
            ensure!(row.max_points == *max, "case {case}: max {} vs {max}", row.max_points);
            ensure!(row.points == *points, "case {case}: points {} vs {points}", row.points);
            ensure!(
                row.points == 0.0 || row.points == row.max_points,
                "case {case}: partial credit"
            );
        }
        let earned: f64 = expected.iter().map(|e| e.1).sum();
        ensure!(
            report.score == earned / max_total,
            "case {case}: score {} vs {}",
            report.score,
            earned / max_total
        );
        checked += 1;
    }
    Ok(format!("1000 cases ({checked} with points)"))
}

/// Days since 1970-01-01 by counting whole years and months.
fn calendar_days(year: i64, month: u32, day: u32) -> i64 {
    let leap = |y: i64| (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    let mut days = 0;
    for y in 1970..year {
        days += if leap(y) { 366 } else { 365 };
    }
    let lengths = [31, if leap(year) { 29 } else { 28 }, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    days += lengths.iter().take(month as usize - 1).sum::<i64>();
    days + i64::from(day) - 1
}

fn seed_determinism() -> Check {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
    ensure!(daily_seed(epoch) == 0, "epoch seed {}", daily_seed(epoch));
    let date = NaiveDate::from_ymd_opt(2019, 9, 1).unwrap();
    let oracle = calendar_days(2019, 9, 1);
    ensure!(oracle == 18140, "calendar oracle gives {oracle}");
    ensure!(daily_seed(date) == oracle, "seed {}", daily_seed(date));

    let job = Job::new("fib", "fib/submissions/hardcoded");
    job.grade(&["--date", DATE]);
    let first = fs::read(job.results_path()).unwrap();
    job.grade(&["--date", DATE]);
    let second = fs::read(job.results_path()).unwrap();
    ensure!(first == second, "results differ between runs");
    Ok(format!("seed {oracle}, {} identical bytes", first.len()))
}

fn snapshot(root: &Path) -> Vec<(String, u32, u32, u32)> {
    let mut out = Vec::new();
    for entry in walk_paths(root) {
        let meta = fs::symlink_metadata(&entry).unwrap();
        out.push((entry.display().to_string(), meta.mode(), meta.uid(), meta.gid()));
    }
    out
}

fn walk_paths(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = vec![root.to_path_buf()];
    if root.is_dir() {
        let mut children: Vec<_> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
        children.sort();
        for child in children {
            out.extend(walk_paths(&child));
        }
    }
    out
}

fn isolation_probes() -> Check {
    if !is_root() {
        return Ok("SKIPPED: not running as root, privilege drop unavailable".to_owned());
    }
    let job = Job::new("probe", "probe/submission");
    job.grade(&[]);
    let doc = job.results();
    ensure!(
        doc["score"] == 1,
        "probe saw something it should not: {}",
        doc["tests"][0]["output"]
    );

    let dir = tempfile::TempDir::new().unwrap();
    let root = dir.path().join("assets");
    fs::create_dir_all(root.join("nested")).unwrap();
    let files = [
        ("ans.sh", 0o644),
        ("nested/data.txt", 0o4755),
        ("nested/other", 0o2640),
        ("sticky", 0o1777),
    ];
    for (name, mode) in files {
        let p = root.join(name);
        if name == "sticky" {
            fs::create_dir(&p).unwrap();
        } else {
            fs::write(&p, name).unwrap();
        }
        fs::set_permissions(&p, fs::Permissions::from_mode(mode)).unwrap();
    }
    // Give one file to another owner so ownership restoration is exercised.
    std::os::unix::fs::chown(root.join("nested/other"), Some(65534), Some(65534)).unwrap();
    let before = snapshot(&root);
    let receipt = apply_lockdown(
        &LockdownPlan {
            root_owned_paths: vec![root.clone()],
            writable_for_grader: Vec::new(),
        },
        &LockdownOptions {
            grading_user: "nobody".to_owned(),
            strict: true,
        },
    )
    .map_err(|e| e.to_string())?;
    let during = snapshot(&root);
    ensure!(during != before, "lockdown changed nothing");
    ensure!(
        during.iter().all(|(_, mode, uid, _)| *uid == 0 && mode & 0o066 == 0),
        "locked tree still group/other accessible: {during:?}"
    );
    receipt.undo().map_err(|e| e.to_string())?;
    let after = snapshot(&root);
    ensure!(after == before, "undo mismatch:\n{before:?}\n{after:?}");
    Ok(format!("probe denied, {} paths restored bit-exactly", before.len()))
}

fn annotation_parsing() -> Check {
    let set = extract_metadata(&fixture("fib/tests/tests"), "#").map_err(|e| e.to_string())?;
    let got: Vec<(&str, f64)> = set.tests.iter().map(|t| (t.title.as_str(), t.max_points)).collect();
    let want = [
        ("Test F(1)", 2.0),
        ("Test F(2)", 2.0),
        ("Test F(n) for random n", 2.0),
    ];
    ensure!(got == want, "parsed {got:?}");

    let dir = tempfile::TempDir::new().unwrap();
    fs::write(dir.path().join("test_03_extra.sh"), "echo no header\n").unwrap();
    let set = extract_metadata(dir.path(), "#").map_err(|e| e.to_string())?;
    let t = &set.tests[0];
    ensure!(
        t.title == "test_03_extra.sh" && t.max_points == 1.0,
        "unannotated file parsed as {t:?}"
    );
    Ok("3 headers + default".to_owned())
}

type Criterion = (&'static str, fn() -> Check);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 fibonacci corpus end-to-end", fib_end_to_end),
        ("2 catastrophic fallback", catastrophic_fallback),
        ("3 timeout enforcement", timeout_enforcement),
        ("4 exhaustive diff minimality", exhaustive_minimality),
        ("5 diff round-trip", diff_round_trip),
        ("6 merge semantics", merge_semantics),
        ("7 seed determinism", seed_determinism),
        ("8 isolation probes", isolation_probes),
        ("9 annotation parsing", annotation_parsing),
    ];
    // Optional arguments select criteria by number, e.g. `-- 4 5`.
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.split(' ').next() == Some(o.as_str())) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
