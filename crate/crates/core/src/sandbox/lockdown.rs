use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::os::unix::fs::{MetadataExt, PermissionsExt};
use std::path::{Path, PathBuf};

use nix::unistd::{chown, Gid, Uid};
use walkdir::WalkDir;

use super::{current_owner, is_privileged, lookup_user, Isolation, SandboxError};
use crate::diagnostics::Diagnostic;

/// Which paths to lock away and which to hand to the grading user.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LockdownPlan {
    /// Owned by the privileged user afterwards, group/other bits stripped.
    /// Applied recursively.
    pub root_owned_paths: Vec<PathBuf>,
    /// Owned and writable by the grading user afterwards (not recursive).
    pub writable_for_grader: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockdownOptions {
    pub grading_user: String,
    /// Fail instead of degrading when ownership cannot be changed.
    pub strict: bool,
}

/// Prior ownership and mode of one path touched by a lockdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathRecord {
    pub path: PathBuf,
    pub uid: u32,
    pub gid: u32,
    pub mode: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockdownReceipt {
    pub records: Vec<PathRecord>,
    pub isolation: Isolation,
    pub warnings: Vec<Diagnostic>,
}

impl LockdownReceipt {
    /// Restores every recorded owner and mode, last change first.
    pub fn undo(&self) -> io::Result<()> {
        let chown_back = self.isolation == Isolation::FullPrivilegeDrop;
        for record in self.records.iter().rev() {
            if chown_back {
                chown(
                    &record.path,
                    Some(Uid::from_raw(record.uid)),
                    Some(Gid::from_raw(record.gid)),
                )
                .map_err(io::Error::from)?;
            }
            fs::set_permissions(&record.path, fs::Permissions::from_mode(record.mode & 0o7777))?;
        }
        Ok(())
    }
}

fn record(path: &Path, meta: &fs::Metadata) -> PathRecord {
    PathRecord {
        path: path.to_path_buf(),
        uid: meta.uid(),
        gid: meta.gid(),
        mode: meta.mode() & 0o7777,
    }
}

// Files lose every group/other bit. Directories keep group/other search so
// that a single exposed file below them stays reachable; listing is denied.
fn locked_mode(mode: u32, is_dir: bool) -> u32 {
    let owner_only = mode & 0o7700;
    if is_dir {
        owner_only | 0o711
    } else {
        owner_only & !0o6000
    }
}

/// Applies `plan` and returns a receipt from which it can be undone.
pub fn apply_lockdown(plan: &LockdownPlan, options: &LockdownOptions) -> Result<LockdownReceipt, SandboxError> {
    let writable: BTreeSet<&Path> = plan.writable_for_grader.iter().map(PathBuf::as_path).collect();
    if let Some(both) = plan
        .root_owned_paths
        .iter()
        .find(|p| writable.contains(p.as_path()))
    {
        return Err(SandboxError::InvalidSpec(format!(
            "{} is both locked and writable for the grader",
            both.display()
        )));
    }

    let mut warnings = Vec::new();
    let grader = if is_privileged() {
        match lookup_user(&options.grading_user) {
            Ok(user) => Some(user),
            Err(err) if options.strict => return Err(err),
            Err(err) => {
                warnings.push(Diagnostic::warning(format!(
                    "{err}; ownership unchanged, isolation degraded to permission-only"
                )));
                None
            }
        }
    } else if options.strict {
        return Err(SandboxError::InsufficientPrivilege(
            "strict isolation requires running as root".to_owned(),
        ));
    } else {
        warnings.push(Diagnostic::warning(
            "not running as root; ownership unchanged, isolation degraded to permission-only",
        ));
        None
    };
    let isolation = if grader.is_some() {
        Isolation::FullPrivilegeDrop
    } else {
        Isolation::PermissionOnly
    };
    let (owner_uid, owner_gid) = current_owner();

    let mut records = Vec::new();
    for root in &plan.root_owned_paths {
        let mut walk = WalkDir::new(root).into_iter();
        while let Some(entry) = walk.next() {
            let entry = entry.map_err(|err| SandboxError::Io {
                path: err.path().unwrap_or(root).to_path_buf(),
                source: err.into_io_error().unwrap_or_else(|| io::Error::other("walk failed")),
            })?;
            let path = entry.path();
            if writable.contains(path) {
                if entry.file_type().is_dir() {
                    walk.skip_current_dir();
                }
                continue;
            }
            if entry.path_is_symlink() {
                continue;
            }
            let meta = entry.metadata().map_err(|err| SandboxError::Io {
                path: path.to_path_buf(),
                source: err.into(),
            })?;
            records.push(record(path, &meta));
            if grader.is_some() {
                chown(path, Some(owner_uid), Some(owner_gid))
                    .map_err(|e| SandboxError::io(path)(e.into()))?;
            }
            let mode = locked_mode(meta.mode(), meta.is_dir());
            fs::set_permissions(path, fs::Permissions::from_mode(mode)).map_err(SandboxError::io(path))?;
        }
    }

    for path in &plan.writable_for_grader {
        let meta = fs::symlink_metadata(path).map_err(SandboxError::io(path))?;
        records.push(record(path, &meta));
        if let Some(user) = &grader {
            chown(
                path.as_path(),
                Some(Uid::from_raw(user.uid)),
                Some(Gid::from_raw(user.gid)),
            )
            .map_err(|e| SandboxError::io(path)(e.into()))?;
        }
        let mode = if meta.is_dir() { 0o700 } else { 0o600 };
        fs::set_permissions(path, fs::Permissions::from_mode(mode)).map_err(SandboxError::io(path))?;
    }

    Ok(LockdownReceipt {
        records,
        isolation,
        warnings,
    })
}

/// A file made readable for a while. Dropping it restores the prior mode.
#[derive(Debug)]
pub struct Exposure {
    path: PathBuf,
    prior_mode: u32,
    restored: bool,
}

impl Exposure {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn prior_mode(&self) -> u32 {
        self.prior_mode
    }

    pub fn restore(mut self) -> io::Result<()> {
        self.restored = true;
        fs::set_permissions(&self.path, fs::Permissions::from_mode(self.prior_mode))
    }
}

impl Drop for Exposure {
    fn drop(&mut self) {
        if !self.restored {
            let _ = fs::set_permissions(&self.path, fs::Permissions::from_mode(self.prior_mode));
        }
    }
}

pub fn expose_file(path: &Path, mode: u32) -> io::Result<Exposure> {
    let prior_mode = fs::metadata(path)?.permissions().mode() & 0o7777;
    fs::set_permissions(path, fs::Permissions::from_mode(mode))?;
    Ok(Exposure {
        path: path.to_path_buf(),
        prior_mode,
        restored: false,
    })
}

/// Sets `path` to `mode`, runs `action`, and puts the old mode back whether
/// the action returns normally, returns an error, or panics.
pub fn expose_file_during<T>(path: &Path, mode: u32, action: impl FnOnce() -> T) -> io::Result<T> {
    let exposure = expose_file(path, mode)?;
    let out = action();
    exposure.restore()?;
    Ok(out)
}
