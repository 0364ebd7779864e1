//! Confinement for untrusted code.
//!
//! Grading assets are copied into a job directory ([`stage_job`]), locked to
//! the privileged user with group/other bits stripped ([`apply_lockdown`]),
//! and untrusted commands run as a separate grading user with one file made
//! readable for the duration of the run ([`run_sandboxed`],
//! [`expose_file_during`]).
//!
//! Without superuser rights the ownership changes and the identity switch are
//! impossible. Unless strict isolation is requested the runner then degrades
//! to [`Isolation::PermissionOnly`] and says so in its diagnostics.

use std::fmt;
use std::io;
use std::path::PathBuf;

use nix::unistd::{Gid, Uid, User};
use thiserror::Error;

mod lockdown;
mod run;
mod stage;

pub use lockdown::{
    apply_lockdown, expose_file, expose_file_during, Exposure, LockdownOptions, LockdownPlan,
    LockdownReceipt, PathRecord,
};
pub use run::{minimal_env, run_sandboxed, RunOutcome, SandboxSpec, DEFAULT_PATH};
pub use stage::{copy_tree, stage_job, StagedJob};

pub const DEFAULT_GRADING_USER: &str = "ag";
pub const DEFAULT_GRACE_S: u64 = 1;
pub const DEFAULT_STREAM_LIMIT: usize = 1 << 20;
/// Mode given to an exposed submission file while it is evaluated.
pub const EXPOSED_MODE: u32 = 0o664;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Isolation {
    /// Child runs as the grading user; locked assets are unreadable to it.
    FullPrivilegeDrop,
    /// Permission bits were tightened but the child keeps the caller's identity.
    PermissionOnly,
    None,
}

impl fmt::Display for Isolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Isolation::FullPrivilegeDrop => "full privilege drop",
            Isolation::PermissionOnly => "permission-only",
            Isolation::None => "none",
        })
    }
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("failed to copy {path}: {source}")]
    CopyFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("insufficient privilege: {0}")]
    InsufficientPrivilege(String),
    #[error("failed to spawn `{command}`: {source}")]
    SpawnFailure {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("unknown user `{0}`")]
    UserUnknown(String),
    #[error("invalid sandbox spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl SandboxError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> SandboxError {
        let path = path.into();
        move |source| SandboxError::Io { path, source }
    }
}

/// The grading user's numeric identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradingUser {
    pub name: String,
    pub uid: u32,
    pub gid: u32,
}

pub fn lookup_user(name: &str) -> Result<GradingUser, SandboxError> {
    match User::from_name(name) {
        Ok(Some(user)) => Ok(GradingUser {
            name: name.to_owned(),
            uid: user.uid.as_raw(),
            gid: user.gid.as_raw(),
        }),
        _ => Err(SandboxError::UserUnknown(name.to_owned())),
    }
}

/// True when the process may change file ownership and switch identities.
pub fn is_privileged() -> bool {
    Uid::effective().is_root()
}

pub(crate) fn current_owner() -> (Uid, Gid) {
    (Uid::effective(), Gid::effective())
}
