use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::SandboxError;
use crate::diagnostics::Diagnostic;

/// Directories produced by [`stage_job`].
#[derive(Debug, Clone, PartialEq)]
pub struct StagedJob {
    pub job_root: PathBuf,
    /// `<job>/run/`: grader assets plus a copy of the question's tests.
    pub run_dir: PathBuf,
    /// `<job>/run/bin/`: the student's files.
    pub bin_dir: PathBuf,
    /// `<job>/run/tests/`: copy of the question's `tests/` directory.
    pub tests_dir: PathBuf,
    /// `<job>/results/`
    pub results_dir: PathBuf,
    pub diagnostics: Vec<Diagnostic>,
}

/// Copies everything below `src` into `dst` (created if missing). Symlinks
/// are followed; directories are recreated.
pub fn copy_tree(src: &Path, dst: &Path) -> Result<(), SandboxError> {
    let copy_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SandboxError::CopyFailure { path, source }
    };
    fs::create_dir_all(dst).map_err(copy_err(dst))?;
    for entry in WalkDir::new(src).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(|err| {
            let path = err.path().unwrap_or(src).to_path_buf();
            SandboxError::CopyFailure {
                path,
                source: err.into_io_error().unwrap_or_else(|| io::Error::other("walk failed")),
            }
        })?;
        let rel = entry.path().strip_prefix(src).expect("walk stays below its root");
        let target = dst.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target).map_err(copy_err(entry.path()))?;
        } else {
            fs::copy(entry.path(), &target).map_err(copy_err(entry.path()))?;
        }
    }
    Ok(())
}

fn clear_dir(dir: &Path) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            fs::remove_dir_all(entry.path())?;
        } else {
            fs::remove_file(entry.path())?;
        }
    }
    Ok(())
}

/// Builds `<job_root>/run/` from the submission, the optional grader assets
/// and the question's tests, and prepares an empty `<job_root>/results/`.
/// A previous `run/` is removed first so repeated grading starts clean.
pub fn stage_job(
    student_dir: &Path,
    autograder_dir: Option<&Path>,
    tests_dir: &Path,
    job_root: &Path,
) -> Result<StagedJob, SandboxError> {
    let run_dir = job_root.join("run");
    let bin_dir = run_dir.join("bin");
    let staged_tests = run_dir.join("tests");
    let results_dir = job_root.join("results");
    let mut diagnostics = Vec::new();

    if run_dir.exists() {
        fs::remove_dir_all(&run_dir).map_err(SandboxError::io(&run_dir))?;
    }
    fs::create_dir_all(&bin_dir).map_err(SandboxError::io(&bin_dir))?;
    if results_dir.is_dir() {
        clear_dir(&results_dir).map_err(SandboxError::io(&results_dir))?;
    } else {
        fs::create_dir_all(&results_dir).map_err(SandboxError::io(&results_dir))?;
    }

    for src in [student_dir, tests_dir] {
        if !src.is_dir() {
            return Err(SandboxError::CopyFailure {
                path: src.to_path_buf(),
                source: io::Error::new(io::ErrorKind::NotFound, "source directory missing"),
            });
        }
    }

    copy_tree(student_dir, &bin_dir)?;
    if fs::read_dir(&bin_dir).map_err(SandboxError::io(&bin_dir))?.next().is_none() {
        diagnostics.push(Diagnostic::warning("submission is empty").at(student_dir));
    }
    if let Some(assets) = autograder_dir {
        if assets.is_dir() {
            copy_tree(assets, &run_dir)?;
        } else {
            diagnostics.push(Diagnostic::warning("grader asset directory missing").at(assets));
        }
    }
    copy_tree(tests_dir, &staged_tests)?;

    Ok(StagedJob {
        job_root: job_root.to_path_buf(),
        run_dir,
        bin_dir,
        tests_dir: staged_tests,
        results_dir,
        diagnostics,
    })
}
