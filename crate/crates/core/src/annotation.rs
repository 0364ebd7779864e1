//! Test metadata from doxygen-style tags in a test file's header comments:
//!
//! ```text
//! ## @title Test F(1)
//! ## @score 2
//! ```
//!
//! Only the leading comment block is scanned; the first line that is neither
//! blank nor a comment ends it.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::diagnostics::Diagnostic;
use crate::question::{file_name, scan_test_files, QuestionError};

pub const DEFAULT_COMMENT_LEADER: &str = "#";
pub const DEFAULT_MAX_POINTS: f64 = 1.0;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("{path}: {source}")]
    UnreadableFile {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: @score value `{value}` is not a non-negative number")]
    MalformedScore {
        path: PathBuf,
        line: usize,
        value: String,
    },
    #[error(transparent)]
    Question(#[from] QuestionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestMetadata {
    /// Base file name; the join key against test results.
    pub file: String,
    pub title: String,
    pub max_points: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetadataSet {
    pub tests: Vec<TestMetadata>,
    pub diagnostics: Vec<Diagnostic>,
}

impl MetadataSet {
    pub fn total_points(&self) -> f64 {
        self.tests.iter().map(|t| t.max_points).sum()
    }
}

/// Splits `<leader>+ ws* @<tag> ws+ <value>` into `(tag, value)`.
pub fn parse_annotation_line(line: &str, comment_leader: &str) -> Option<(String, String)> {
    if comment_leader.is_empty() {
        return None;
    }
    let mut rest = line.strip_prefix(comment_leader)?;
    while let Some(more) = rest.strip_prefix(comment_leader) {
        rest = more;
    }
    let rest = rest.trim_start().strip_prefix('@')?;
    let tag_len = rest
        .find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .unwrap_or(rest.len());
    if tag_len == 0 {
        return None;
    }
    let (tag, after) = rest.split_at(tag_len);
    if !after.starts_with(char::is_whitespace) {
        return None;
    }
    let value = after.trim();
    if value.is_empty() {
        return None;
    }
    Some((tag.to_owned(), value.to_owned()))
}

fn is_comment(line: &str, comment_leader: &str) -> bool {
    line.trim_start().starts_with(comment_leader)
}

fn parse_score(value: &str) -> Option<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v >= 0.0)
}

/// Extracts the metadata of one test from its text. `path` is only used in
/// diagnostics and errors.
pub fn parse_header(
    path: &Path,
    text: &str,
    comment_leader: &str,
) -> Result<(TestMetadata, Vec<Diagnostic>), AnnotationError> {
    let file = file_name(path);
    let mut title: Option<String> = None;
    let mut score: Option<f64> = None;
    let mut diagnostics = Vec::new();
    let mut in_header = true;

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if in_header && !(line.trim().is_empty() || is_comment(line, comment_leader)) {
            in_header = false;
        }
        let Some((tag, value)) = parse_annotation_line(line, comment_leader) else {
            continue;
        };
        if !in_header {
            diagnostics.push(
                Diagnostic::warning(format!(
                    "line {line_no}: @{tag} after the header comment block is ignored"
                ))
                .at(path),
            );
            continue;
        }
        match tag.as_str() {
            "title" if title.is_none() => title = Some(value),
            "score" if score.is_none() => {
                score = Some(parse_score(&value).ok_or_else(|| AnnotationError::MalformedScore {
                    path: path.to_path_buf(),
                    line: line_no,
                    value: value.clone(),
                })?);
            }
            "title" | "score" => diagnostics.push(
                Diagnostic::warning(format!(
                    "line {line_no}: duplicate @{tag} ignored; the first occurrence wins"
                ))
                .at(path),
            ),
            _ => diagnostics.push(
                Diagnostic::warning(format!("line {line_no}: unknown tag @{tag}")).at(path),
            ),
        }
    }

    let meta = TestMetadata {
        title: title.unwrap_or_else(|| file.clone()),
        max_points: score.unwrap_or(DEFAULT_MAX_POINTS),
        file,
    };
    Ok((meta, diagnostics))
}

/// Reads one test file (invalid UTF-8 is replaced) and parses its header.
pub fn extract_file_metadata(
    path: &Path,
    comment_leader: &str,
) -> Result<(TestMetadata, Vec<Diagnostic>), AnnotationError> {
    let bytes = fs::read(path).map_err(|source| AnnotationError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    parse_header(path, &String::from_utf8_lossy(&bytes), comment_leader)
}

/// Metadata for the given test files, in the given order.
pub fn extract_for_files(files: &[PathBuf], comment_leader: &str) -> Result<MetadataSet, AnnotationError> {
    let mut set = MetadataSet::default();
    for path in files {
        let (meta, diags) = extract_file_metadata(path, comment_leader)?;
        set.tests.push(meta);
        set.diagnostics.extend(diags);
    }
    Ok(set)
}

/// One [`TestMetadata`] per test file in `tests_dir`, in test-file order.
pub fn extract_metadata(tests_dir: &Path, comment_leader: &str) -> Result<MetadataSet, AnnotationError> {
    let scan = scan_test_files(tests_dir)?;
    let mut set = extract_for_files(&scan.files, comment_leader)?;
    set.diagnostics.extend(scan.notes);
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::TempDir;

    #[test]
    fn annotation_lines() {
        assert_eq!(
            parse_annotation_line("## @score 2", "#"),
            Some(("score".into(), "2".into()))
        );
        assert_eq!(parse_annotation_line("plain code line", "#"), None);
        assert_eq!(
            parse_annotation_line("##   @title  Test F(n) for random n", "#"),
            Some(("title".into(), "Test F(n) for random n".into()))
        );
        assert_eq!(
            parse_annotation_line("// @score 1.5  ", "//"),
            Some(("score".into(), "1.5".into()))
        );
        assert_eq!(parse_annotation_line("## @title", "#"), None);
        assert_eq!(parse_annotation_line("## @ title x", "#"), None);
        assert_eq!(parse_annotation_line("## title x", "#"), None);
        assert_eq!(parse_annotation_line("x ## @title x", "#"), None);
        assert_eq!(parse_annotation_line("## @title:x", "#"), None);
    }

    fn header(text: &str) -> (TestMetadata, Vec<Diagnostic>) {
        parse_header(Path::new("tests/test_00_fib1.R"), text, "#").unwrap()
    }

    #[test]
    fn paper_header() {
        let text = "## @title Test F(1)\n## @score 2\n\nfile <- \"/grade/student/fib.R\"\n";
        let (meta, diags) = header(text);
        assert_eq!(
            meta,
            TestMetadata {
                file: "test_00_fib1.R".into(),
                title: "Test F(1)".into(),
                max_points: 2.0,
            }
        );
        assert!(diags.is_empty());
    }

    #[test]
    fn defaults_without_annotations() {
        let (meta, _) =
            parse_header(Path::new("test_03_extra.R"), "x <- 1\n", "#").unwrap();
        assert_eq!(meta.title, "test_03_extra.R");
        assert_eq!(meta.max_points, 1.0);
    }

    #[test]
    fn duplicate_score_first_wins() {
        let (meta, diags) = header("## @score 2\n## @score 5\n");
        assert_eq!(meta.max_points, 2.0);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("duplicate @score"));
    }

    #[test]
    fn malformed_and_negative_scores() {
        for bad in ["two", "-1", "NaN", "inf"] {
            let err = parse_header(Path::new("t.R"), &format!("#\n## @score {bad}\n"), "#")
                .unwrap_err();
            match err {
                AnnotationError::MalformedScore { line, value, .. } => {
                    assert_eq!(line, 2);
                    assert_eq!(value, bad);
                }
                other => panic!("unexpected {other}"),
            }
        }
        let (meta, _) = header("## @score 0.25\n");
        assert_eq!(meta.max_points, 0.25);
    }

    #[test]
    fn scan_stops_at_code_and_reports_late_tags() {
        let (meta, diags) = header("#!/bin/sh\n## @title T\nx=1\n## @score 9\n");
        assert_eq!(meta.max_points, 1.0);
        assert_eq!(meta.title, "T");
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("after the header"));
    }

    #[test]
    fn unknown_tags_are_diagnostics() {
        let (meta, diags) = header("## @author someone\n## @score 3\n");
        assert_eq!(meta.max_points, 3.0);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("unknown tag @author"));
    }

    #[test]
    fn extract_from_directory_and_rename() {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("test_b.sh"), "## @score 2\n").unwrap();
        fs::write(dir.path().join("test_a.sh"), b"## @title A \xff\n").unwrap();
        let set = extract_metadata(dir.path(), "#").unwrap();
        let files: Vec<_> = set.tests.iter().map(|t| t.file.as_str()).collect();
        assert_eq!(files, ["test_a.sh", "test_b.sh"]);
        assert_eq!(set.tests[0].title, "A \u{fffd}");
        assert_eq!(set.total_points(), 3.0);

        fs::rename(dir.path().join("test_b.sh"), dir.path().join("test_c.sh")).unwrap();
        let renamed = extract_metadata(dir.path(), "#").unwrap();
        assert_eq!(renamed.tests[1].file, "test_c.sh");
        assert_eq!(renamed.tests[1].title, "test_c.sh");
        assert_eq!(renamed.tests[1].max_points, 2.0);
    }

    // Independent scan: walk lines until the first code line, remember the
    // first `@score` seen in a comment line.
    fn naive_score(text: &str) -> Option<f64> {
        let mut found = None;
        for line in text.lines() {
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                break;
            }
            if !line.starts_with('#') {
                continue;
            }
            let words: Vec<&str> = line.trim_start_matches('#').split_whitespace().collect();
            if words.len() >= 2 && words[0] == "@score" && found.is_none() {
                found = Some(words[1..].join(" "));
            }
        }
        match found {
            None => Some(1.0),
            Some(v) => v.parse::<f64>().ok().filter(|x| x.is_finite() && *x >= 0.0),
        }
    }

    fn header_line() -> impl Strategy<Value = String> {
        prop_oneof![
            Just(String::new()),
            Just("   ".to_owned()),
            (1..4usize, 0..3usize, 0..100u32)
                .prop_map(|(h, s, v)| format!("{}{}@score {v}", "#".repeat(h), " ".repeat(s))),
            (0..100u32).prop_map(|v| format!("## @score {}.5", v)),
            "[a-z ]{0,10}".prop_map(|t| format!("## @title x{t}")),
            "[a-z ]{0,10}".prop_map(|t| format!("# {t}")),
            "[a-z]{1,8}( [a-z]{1,8})?".prop_map(|t| format!("code {t}")),
        ]
    }

    proptest! {
        #[test]
        fn max_points_match_naive_scan(lines in prop::collection::vec(header_line(), 0..12)) {
            let text = lines.join("\n");
            let expected = naive_score(&text);
            match parse_header(Path::new("t.sh"), &text, "#") {
                Ok((meta, _)) => prop_assert_eq!(Some(meta.max_points), expected),
                Err(_) => prop_assert_eq!(None, expected),
            }
        }

        #[test]
        fn parsing_is_pure(text in "[#@a-z0-9 \n]{0,80}") {
            let a = parse_header(Path::new("t.sh"), &text, "#").ok();
            let b = parse_header(Path::new("t.sh"), &text, "#").ok();
            prop_assert_eq!(a, b);
        }
    }
}
