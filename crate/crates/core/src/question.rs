//! On-disk question directories.
//!
//! ```text
//! <root>/info.json
//! <root>/question.html          (ignored)
//! <root>/tests/ans.*            reference answer
//! <root>/tests/tests/test_*     one file per test
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use thiserror::Error;
use uuid::Uuid;

use crate::diagnostics::Diagnostic;

/// Timeout applied when `externalGradingOptions.timeout` is absent.
pub const DEFAULT_TIMEOUT_S: u64 = 30;

#[derive(Debug, Error)]
pub enum QuestionError {
    #[error("{0}: info.json not found")]
    MissingInfoJson(PathBuf),
    #[error("{path}: malformed info.json field `{field}`: {reason}")]
    MalformedInfoJson {
        path: PathBuf,
        field: String,
        reason: String,
    },
    #[error("{0}: tests directory not found")]
    MissingTestsDir(PathBuf),
    #[error("{0}: tests directory contains no test files")]
    EmptyTestsDir(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GradingMethod {
    External,
    Other(String),
}

impl GradingMethod {
    fn parse(text: &str) -> Self {
        match text {
            "External" => GradingMethod::External,
            other => GradingMethod::Other(other.to_owned()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            GradingMethod::External => "External",
            GradingMethod::Other(name) => name,
        }
    }
}

/// Parsed `info.json`. Keys this engine does not interpret are kept in
/// `extra` (top level) and `extra_grading_options`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionInfo {
    pub uuid: Uuid,
    pub title: String,
    pub topic: String,
    pub tags: Vec<String>,
    pub grading_method: GradingMethod,
    pub image: String,
    pub entrypoint: String,
    pub server_files: Vec<String>,
    pub timeout_s: u64,
    pub extra: Map<String, Value>,
    pub extra_grading_options: Map<String, Value>,
}

const KNOWN_KEYS: &[&str] = &[
    "uuid",
    "title",
    "topic",
    "tags",
    "gradingMethod",
    "externalGradingOptions",
];
const KNOWN_OPTION_KEYS: &[&str] = &["image", "entrypoint", "serverFilesCourse", "timeout"];

impl QuestionInfo {
    /// Stand-in descriptor for jobs that ship without an `info.json`.
    pub fn fallback() -> Self {
        Self {
            uuid: Uuid::nil(),
            title: String::new(),
            topic: String::new(),
            tags: Vec::new(),
            grading_method: GradingMethod::External,
            image: String::new(),
            entrypoint: String::new(),
            server_files: Vec::new(),
            timeout_s: DEFAULT_TIMEOUT_S,
            extra: Map::new(),
            extra_grading_options: Map::new(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, QuestionError> {
        let bytes = match fs::read(path) {
            Ok(bytes) => bytes,
            Err(err) if err.kind() == io::ErrorKind::NotFound => {
                return Err(QuestionError::MissingInfoJson(path.to_path_buf()))
            }
            Err(source) => {
                return Err(QuestionError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        Self::from_json(&bytes).map_err(|(field, reason)| QuestionError::MalformedInfoJson {
            path: path.to_path_buf(),
            field,
            reason,
        })
    }

    /// Parses `info.json` bytes. Errors name the offending field.
    pub fn from_json(bytes: &[u8]) -> Result<Self, (String, String)> {
        let root: Value = serde_json::from_slice(bytes)
            .map_err(|err| ("<document>".to_owned(), err.to_string()))?;
        let Value::Object(mut top) = root else {
            return Err(("<document>".to_owned(), "expected a JSON object".to_owned()));
        };

        let uuid_text = required_str(&top, "uuid")?;
        let uuid = Uuid::parse_str(&uuid_text)
            .map_err(|err| ("uuid".to_owned(), err.to_string()))?;
        let title = optional_str(&top, "title")?;
        let topic = optional_str(&top, "topic")?;
        let tags = optional_str_list(&top, "tags")?;
        let grading_method = GradingMethod::parse(&required_str(&top, "gradingMethod")?);

        let mut options = match top.get("externalGradingOptions") {
            None | Some(Value::Null) => Map::new(),
            Some(Value::Object(map)) => map.clone(),
            Some(_) => {
                return Err((
                    "externalGradingOptions".to_owned(),
                    "expected an object".to_owned(),
                ))
            }
        };
        let image = optional_str(&options, "image")
            .map_err(|(f, r)| (format!("externalGradingOptions.{f}"), r))?;
        let entrypoint = optional_str(&options, "entrypoint")
            .map_err(|(f, r)| (format!("externalGradingOptions.{f}"), r))?;
        let server_files = optional_str_list(&options, "serverFilesCourse")
            .map_err(|(f, r)| (format!("externalGradingOptions.{f}"), r))?;
        let timeout_s = match options.get("timeout") {
            None | Some(Value::Null) => DEFAULT_TIMEOUT_S,
            Some(value) => value.as_u64().filter(|t| *t >= 1).ok_or_else(|| {
                (
                    "externalGradingOptions.timeout".to_owned(),
                    format!("expected a positive integer number of seconds, got {value}"),
                )
            })?,
        };

        for key in KNOWN_KEYS {
            top.remove(*key);
        }
        for key in KNOWN_OPTION_KEYS {
            options.remove(*key);
        }

        Ok(Self {
            uuid,
            title,
            topic,
            tags,
            grading_method,
            image,
            entrypoint,
            server_files,
            timeout_s,
            extra: top,
            extra_grading_options: options,
        })
    }
}

type FieldError = (String, String);

fn required_str(map: &Map<String, Value>, key: &str) -> Result<String, FieldError> {
    match map.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err((key.to_owned(), format!("expected a string, got {other}"))),
        None => Err((key.to_owned(), "missing".to_owned())),
    }
}

fn optional_str(map: &Map<String, Value>, key: &str) -> Result<String, FieldError> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err((key.to_owned(), format!("expected a string, got {other}"))),
    }
}

fn optional_str_list(map: &Map<String, Value>, key: &str) -> Result<Vec<String>, FieldError> {
    match map.get(key) {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|item| {
                item.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| (key.to_owned(), format!("expected strings, got {item}")))
            })
            .collect(),
        Some(other) => Err((key.to_owned(), format!("expected a list, got {other}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionLayout {
    pub root: PathBuf,
    pub info: QuestionInfo,
    pub reference_answer: Option<PathBuf>,
    pub tests_dir: PathBuf,
    pub test_files: Vec<PathBuf>,
    /// Findings from the directory scan (extra answer candidates, nested
    /// directories under the tests directory).
    pub notes: Vec<Diagnostic>,
}

impl QuestionLayout {
    pub fn test_file_names(&self) -> Vec<String> {
        self.test_files.iter().map(|p| file_name(p)).collect()
    }
}

pub(crate) fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// The test files of a tests directory, plus notes about skipped entries.
#[derive(Debug, Clone, PartialEq)]
pub struct TestScan {
    pub files: Vec<PathBuf>,
    pub notes: Vec<Diagnostic>,
}

/// Lists the regular files directly inside `tests_dir`, sorted by file name
/// bytes. Other entries are reported and skipped.
pub fn scan_test_files(tests_dir: &Path) -> Result<TestScan, QuestionError> {
    let entries = match fs::read_dir(tests_dir) {
        Ok(entries) => entries,
        Err(err) if err.kind() == io::ErrorKind::NotFound => {
            return Err(QuestionError::MissingTestsDir(tests_dir.to_path_buf()))
        }
        Err(source) => {
            return Err(QuestionError::Io {
                path: tests_dir.to_path_buf(),
                source,
            })
        }
    };
    let io_err = |source| QuestionError::Io {
        path: tests_dir.to_path_buf(),
        source,
    };

    let mut files = Vec::new();
    let mut notes = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err)?;
        let path = entry.path();
        if entry.file_type().map_err(io_err)?.is_file() {
            files.push(path);
        } else {
            notes.push(Diagnostic::warning("not a regular file; ignored as a test").at(&path));
        }
    }
    if files.is_empty() {
        return Err(QuestionError::EmptyTestsDir(tests_dir.to_path_buf()));
    }
    files.sort_by(|a, b| {
        a.file_name()
            .map(|n| n.as_encoded_bytes())
            .cmp(&b.file_name().map(|n| n.as_encoded_bytes()))
    });
    notes.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(TestScan { files, notes })
}

/// Picks the reference answer among the regular files directly under
/// `assets_dir` (the question's `tests/`). Several candidates resolve to the
/// first by name, with a warning.
pub fn find_reference_answer(assets_dir: &Path) -> Result<(Option<PathBuf>, Vec<Diagnostic>), QuestionError> {
    let entries = fs::read_dir(assets_dir).map_err(|source| QuestionError::Io {
        path: assets_dir.to_path_buf(),
        source,
    })?;
    let mut candidates = Vec::new();
    for entry in entries.flatten() {
        if entry.file_type().map(|t| t.is_file()).unwrap_or(false) {
            candidates.push(entry.path());
        }
    }
    candidates.sort_by(|a, b| {
        a.file_name()
            .map(|n| n.as_encoded_bytes())
            .cmp(&b.file_name().map(|n| n.as_encoded_bytes()))
    });
    let mut notes = Vec::new();
    if candidates.len() > 1 {
        notes.push(
            Diagnostic::warning(format!(
                "{} candidate reference answers; using {}",
                candidates.len(),
                file_name(&candidates[0])
            ))
            .at(assets_dir),
        );
    }
    Ok((candidates.into_iter().next(), notes))
}

/// Loads the `tests/` half of a question (answer plus test files) with a
/// descriptor obtained elsewhere.
pub fn load_tests(root: &Path, assets_dir: &Path, info: QuestionInfo) -> Result<QuestionLayout, QuestionError> {
    if !assets_dir.is_dir() {
        return Err(QuestionError::MissingTestsDir(assets_dir.join("tests")));
    }
    let tests_dir = assets_dir.join("tests");
    let scan = scan_test_files(&tests_dir)?;
    let (reference_answer, mut notes) = find_reference_answer(assets_dir)?;
    notes.extend(scan.notes);
    Ok(QuestionLayout {
        root: root.to_path_buf(),
        info,
        reference_answer,
        tests_dir,
        test_files: scan.files,
        notes,
    })
}

pub fn load_question(root: &Path) -> Result<QuestionLayout, QuestionError> {
    let info = QuestionInfo::from_path(&root.join("info.json"))?;
    load_tests(root, &root.join("tests"), info)
}

/// Checks a loaded question for problems that make it ungradable (errors) or
/// suspicious (warnings).
pub fn validate_layout(layout: &QuestionLayout) -> Vec<Diagnostic> {
    let mut out = layout.notes.clone();
    if layout.info.grading_method != GradingMethod::External {
        out.push(
            Diagnostic::error(format!(
                "grading_method is \"{}\"; this engine only grades External questions",
                layout.info.grading_method.as_str()
            ))
            .at(layout.root.join("info.json")),
        );
    }
    match &layout.reference_answer {
        None => out.push(
            Diagnostic::warning("no reference answer found; tests must carry their own expectations")
                .at(layout.tests_dir.parent().unwrap_or(&layout.root)),
        ),
        Some(answer) => {
            if layout.test_files.iter().any(|t| t == answer) {
                out.push(Diagnostic::error("reference answer is also a test file").at(answer));
            }
        }
    }
    out
}
