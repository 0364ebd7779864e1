use std::fmt;

use thiserror::Error;

pub const TEST_FILE: &str = "{test_file}";
pub const STUDENT_FILE: &str = "{student_file}";
pub const ANSWER_FILE: &str = "{answer_file}";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("command template must contain {{test_file}} exactly once, found {0}")]
    TestFilePlaceholder(usize),
    #[error("command template is empty")]
    Empty,
}

/// How to run one test file: an argv template whose placeholders are filled
/// per test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageBackend {
    pub name: String,
    pub command_template: Vec<String>,
    /// Preferred extension of the submission file, without the dot. Empty
    /// means any.
    pub file_extension: String,
    pub comment_leader: String,
}

fn builtin(name: &str, program: &str, ext: &str) -> LanguageBackend {
    LanguageBackend {
        name: name.to_owned(),
        command_template: [program, TEST_FILE, STUDENT_FILE, ANSWER_FILE]
            .map(str::to_owned)
            .to_vec(),
        file_extension: ext.to_owned(),
        comment_leader: "#".to_owned(),
    }
}

impl LanguageBackend {
    pub const BUILTIN: [&'static str; 4] = ["sh", "bash", "python", "r"];

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "sh" => Some(builtin("sh", "sh", "sh")),
            "bash" => Some(builtin("bash", "bash", "sh")),
            "python" => Some(builtin("python", "python3", "py")),
            "r" | "R" => Some(builtin("r", "Rscript", "R")),
            _ => None,
        }
    }

    /// A backend from a whitespace-separated template such as
    /// `"node {test_file} {student_file}"`.
    pub fn from_template(template: &str) -> Result<Self, BackendError> {
        let backend = Self {
            name: "custom".to_owned(),
            command_template: template.split_whitespace().map(str::to_owned).collect(),
            file_extension: String::new(),
            comment_leader: "#".to_owned(),
        };
        backend.validate()?;
        Ok(backend)
    }

    /// A built-in name or a template.
    pub fn parse(spec: &str) -> Result<Self, BackendError> {
        match Self::builtin(spec.trim()) {
            Some(backend) => Ok(backend),
            None => Self::from_template(spec),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.command_template.is_empty() {
            return Err(BackendError::Empty);
        }
        let count: usize = self
            .command_template
            .iter()
            .map(|arg| arg.matches(TEST_FILE).count())
            .sum();
        if count != 1 {
            return Err(BackendError::TestFilePlaceholder(count));
        }
        Ok(())
    }

    pub fn program(&self) -> &str {
        self.command_template.first().map(String::as_str).unwrap_or("")
    }

    pub fn command_for(&self, test_file: &str, student_file: &str, answer_file: &str) -> Vec<String> {
        self.command_template
            .iter()
            .map(|arg| {
                arg.replace(TEST_FILE, test_file)
                    .replace(STUDENT_FILE, student_file)
                    .replace(ANSWER_FILE, answer_file)
            })
            .collect()
    }
}

impl fmt::Display for LanguageBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name, self.command_template.join(" "))
    }
}
