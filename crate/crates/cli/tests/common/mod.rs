#![allow(dead_code)]

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

pub const BIN: &str = env!("CARGO_BIN_EXE_autograde");

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn is_root() -> bool {
    autograde_core::sandbox::is_privileged()
}

/// The unprivileged account tests run student code as.
pub fn grading_user() -> String {
    if is_root() {
        "nobody".to_owned()
    } else {
        std::env::var("USER").unwrap_or_else(|_| "nobody".to_owned())
    }
}

fn copy_dir(src: &Path, dst: &Path) {
    fs::create_dir_all(dst).unwrap();
    for entry in fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let target = dst.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// A job directory built from a fixture question and one submission.
pub struct Job {
    pub dir: TempDir,
}

impl Job {
    pub fn new(question: &str, submission: &str) -> Self {
        let dir = TempDir::new().unwrap();
        // The grading user must be able to reach its scratch directories.
        fs::set_permissions(dir.path(), fs::Permissions::from_mode(0o755)).unwrap();
        let q = fixture(question);
        copy_dir(&q.join("tests"), &dir.path().join("tests"));
        fs::copy(q.join("info.json"), dir.path().join("info.json")).unwrap();
        copy_dir(&fixture(submission), &dir.path().join("student"));
        Self { dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn results_path(&self) -> PathBuf {
        self.path().join("results/results.json")
    }

    pub fn grade(&self, extra: &[&str]) -> Output {
        let user = grading_user();
        let mut args = vec!["grade", "--job-dir"];
        let job = self.path().to_str().unwrap().to_owned();
        args.push(&job);
        args.extend(["--user", &user]);
        args.extend(extra);
        Command::new(BIN).args(&args).env_remove("JOB_DIR").output().unwrap()
    }

    pub fn results_text(&self) -> String {
        fs::read_to_string(self.results_path()).unwrap()
    }

    pub fn results(&self) -> serde_json::Value {
        serde_json::from_str(&self.results_text()).unwrap()
    }
}

pub const CATASTROPHIC: &str =
    "Catastrophic failure! Contact course staff and have them check the logs for this submission.";
