use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use nix::sys::signal::{kill, killpg, Signal};
use nix::unistd::Pid;

use super::lockdown::{expose_file, Exposure};
use super::{
    is_privileged, lookup_user, Isolation, SandboxError, DEFAULT_GRACE_S, DEFAULT_STREAM_LIMIT,
};
use crate::diagnostics::Diagnostic;

pub const DEFAULT_PATH: &str = "/usr/local/bin:/usr/bin:/bin";

/// How long to wait for output pipes to close once the child is gone.
const DRAIN_TIMEOUT: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxSpec {
    pub workdir: PathBuf,
    /// argv; the program is looked up on the `PATH` given in `env`.
    pub command: Vec<String>,
    /// The complete child environment; nothing is inherited.
    pub env: BTreeMap<String, String>,
    pub run_as_user: Option<String>,
    /// Refuse to run instead of keeping the caller's identity.
    pub strict: bool,
    pub timeout_s: u64,
    /// Time between the polite and the forced kill.
    pub grace_s: u64,
    pub exposed_files: Vec<(PathBuf, u32)>,
    pub stdout_limit_bytes: usize,
    pub stderr_limit_bytes: usize,
    pub niceness: Option<i32>,
    /// Put the child in a fresh process group so the timeout kill reaches
    /// everything it spawned. Turn off when nested inside another sandbox
    /// whose group should stay in charge.
    pub own_process_group: bool,
}

/// `PATH` plus `HOME` pointing at the working directory.
pub fn minimal_env(workdir: &Path) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("PATH".to_owned(), DEFAULT_PATH.to_owned()),
        ("HOME".to_owned(), workdir.display().to_string()),
    ])
}

impl SandboxSpec {
    pub fn new(workdir: impl Into<PathBuf>, command: Vec<String>, timeout_s: u64) -> Self {
        let workdir = workdir.into();
        Self {
            env: minimal_env(&workdir),
            workdir,
            command,
            run_as_user: None,
            strict: false,
            timeout_s,
            grace_s: DEFAULT_GRACE_S,
            exposed_files: Vec::new(),
            stdout_limit_bytes: DEFAULT_STREAM_LIMIT,
            stderr_limit_bytes: DEFAULT_STREAM_LIMIT,
            niceness: None,
            own_process_group: true,
        }
    }

    pub fn validate(&self) -> Result<(), SandboxError> {
        let invalid = |msg: String| Err(SandboxError::InvalidSpec(msg));
        if self.command.is_empty() {
            return invalid("command is empty".into());
        }
        if self.timeout_s == 0 {
            return invalid("timeout must be at least one second".into());
        }
        if self.stdout_limit_bytes == 0 || self.stderr_limit_bytes == 0 {
            return invalid("stream limits must be positive".into());
        }
        let workdir = fs::canonicalize(&self.workdir).map_err(SandboxError::io(&self.workdir))?;
        for (path, _) in &self.exposed_files {
            let resolved = fs::canonicalize(path).map_err(SandboxError::io(path))?;
            if !resolved.starts_with(&workdir) {
                return invalid(format!(
                    "exposed file {} is outside the working directory",
                    path.display()
                ));
            }
        }
        Ok(())
    }

    fn deadline(&self) -> Duration {
        Duration::from_secs(self.timeout_s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutcome {
    /// Exit status; absent when the child died from a signal.
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    pub timed_out: bool,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    pub duration_ms: u64,
    pub isolation: Isolation,
    pub diagnostics: Vec<Diagnostic>,
}

impl RunOutcome {
    pub fn success(&self) -> bool {
        !self.timed_out && self.exit_code == Some(0)
    }

    pub fn stdout_lossy(&self) -> String {
        String::from_utf8_lossy(&self.stdout).into_owned()
    }

    pub fn stderr_lossy(&self) -> String {
        String::from_utf8_lossy(&self.stderr).into_owned()
    }
}

#[derive(Default)]
struct Captured {
    bytes: Vec<u8>,
    truncated: bool,
}

fn capture(
    mut stream: impl Read + Send + 'static,
    limit: usize,
) -> (Arc<Mutex<Captured>>, mpsc::Receiver<()>) {
    let shared = Arc::new(Mutex::new(Captured::default()));
    let (done_tx, done_rx) = mpsc::channel();
    let sink = Arc::clone(&shared);
    thread::spawn(move || {
        let mut chunk = [0u8; 8192];
        loop {
            match stream.read(&mut chunk) {
                Ok(0) => break,
                Ok(n) => {
                    let mut captured = sink.lock().unwrap_or_else(|e| e.into_inner());
                    let room = limit - captured.bytes.len();
                    if n > room {
                        captured.bytes.extend_from_slice(&chunk[..room]);
                        captured.truncated = true;
                    } else {
                        captured.bytes.extend_from_slice(&chunk[..n]);
                    }
                }
                Err(err) if err.kind() == io::ErrorKind::Interrupted => continue,
                Err(_) => break,
            }
        }
        let _ = done_tx.send(());
    });
    (shared, done_rx)
}

fn collect(shared: Arc<Mutex<Captured>>, done: &mpsc::Receiver<()>) -> (Vec<u8>, bool, bool) {
    let drained = done.recv_timeout(DRAIN_TIMEOUT).is_ok();
    let captured = shared.lock().unwrap_or_else(|e| e.into_inner());
    (captured.bytes.clone(), captured.truncated, drained)
}

struct Identity {
    uid_gid: Option<(u32, u32)>,
    isolation: Isolation,
}

fn resolve_identity(spec: &SandboxSpec, diagnostics: &mut Vec<Diagnostic>) -> Result<Identity, SandboxError> {
    let Some(name) = &spec.run_as_user else {
        return Ok(Identity {
            uid_gid: None,
            isolation: Isolation::None,
        });
    };
    if is_privileged() {
        let user = lookup_user(name)?;
        return Ok(Identity {
            uid_gid: Some((user.uid, user.gid)),
            isolation: Isolation::FullPrivilegeDrop,
        });
    }
    if spec.strict {
        return Err(SandboxError::InsufficientPrivilege(format!(
            "cannot switch to user `{name}` without root"
        )));
    }
    diagnostics.push(Diagnostic::warning(format!(
        "not running as root; child keeps the caller's identity instead of `{name}`"
    )));
    Ok(Identity {
        uid_gid: None,
        isolation: Isolation::PermissionOnly,
    })
}

fn signal_child(child: &Child, group: bool, signal: Signal) {
    let pid = Pid::from_raw(child.id() as i32);
    let _ = if group { killpg(pid, signal) } else { kill(pid, signal) };
}

fn wait_until(child: &mut Child, deadline: Instant) -> io::Result<Option<ExitStatus>> {
    let mut pause = Duration::from_millis(1);
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        let now = Instant::now();
        if now >= deadline {
            return Ok(None);
        }
        thread::sleep(pause.min(deadline - now));
        pause = (pause * 2).min(Duration::from_millis(20));
    }
}

/// Runs `spec.command` confined as described by `spec` and reports what
/// happened. Exposed files are restored to their prior modes afterwards.
pub fn run_sandboxed(spec: &SandboxSpec) -> Result<RunOutcome, SandboxError> {
    spec.validate()?;
    let mut diagnostics = Vec::new();
    let identity = resolve_identity(spec, &mut diagnostics)?;

    let mut exposures: Vec<Exposure> = Vec::with_capacity(spec.exposed_files.len());
    for (path, mode) in &spec.exposed_files {
        exposures.push(expose_file(path, *mode).map_err(SandboxError::io(path))?);
    }
    let result = spawn_and_wait(spec, &identity, diagnostics);
    // Innermost first, so repeated exposures of one file end at its original mode.
    while let Some(exposure) = exposures.pop() {
        let path = exposure.path().to_path_buf();
        exposure.restore().map_err(SandboxError::io(path))?;
    }
    result
}

fn spawn_and_wait(
    spec: &SandboxSpec,
    identity: &Identity,
    mut diagnostics: Vec<Diagnostic>,
) -> Result<RunOutcome, SandboxError> {
    let mut command = Command::new(&spec.command[0]);
    command
        .args(&spec.command[1..])
        .current_dir(&spec.workdir)
        .env_clear()
        .envs(&spec.env)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if spec.own_process_group {
        command.process_group(0);
    }
    if let Some((uid, gid)) = identity.uid_gid {
        command.uid(uid).gid(gid);
    }
    if let Some(nice) = spec.niceness {
        // SAFETY: setpriority is async-signal-safe and touches no shared state.
        unsafe {
            command.pre_exec(move || {
                if libc::setpriority(libc::PRIO_PROCESS, 0, nice) != 0 {
                    return Err(io::Error::last_os_error());
                }
                Ok(())
            });
        }
    }

    let start = Instant::now();
    let mut child = command.spawn().map_err(|source| SandboxError::SpawnFailure {
        command: spec.command.join(" "),
        source,
    })?;
    let stdout = child.stdout.take().expect("stdout is piped");
    let stderr = child.stderr.take().expect("stderr is piped");
    let (out_buf, out_done) = capture(stdout, spec.stdout_limit_bytes);
    let (err_buf, err_done) = capture(stderr, spec.stderr_limit_bytes);

    let group = spec.own_process_group;
    let wait_err = |source| SandboxError::Io {
        path: spec.workdir.clone(),
        source,
    };
    let mut timed_out = false;
    let status = match wait_until(&mut child, start + spec.deadline()).map_err(wait_err)? {
        Some(status) => status,
        None => {
            timed_out = true;
            signal_child(&child, group, Signal::SIGTERM);
            let grace = Instant::now() + Duration::from_secs(spec.grace_s);
            match wait_until(&mut child, grace).map_err(wait_err)? {
                Some(status) => status,
                None => {
                    signal_child(&child, group, Signal::SIGKILL);
                    child.wait().map_err(wait_err)?
                }
            }
        }
    };
    let duration_ms = start.elapsed().as_millis() as u64;
    if group {
        // Reap anything the child left running in its group.
        signal_child(&child, true, Signal::SIGKILL);
    }

    let (stdout, stdout_truncated, out_drained) = collect(out_buf, &out_done);
    let (stderr, stderr_truncated, err_drained) = collect(err_buf, &err_done);
    if timed_out {
        diagnostics.push(Diagnostic::warning(format!(
            "timed out after {} s",
            spec.timeout_s
        )));
    }
    for (name, truncated, limit) in [
        ("stdout", stdout_truncated, spec.stdout_limit_bytes),
        ("stderr", stderr_truncated, spec.stderr_limit_bytes),
    ] {
        if truncated {
            diagnostics.push(Diagnostic::warning(format!("{name} truncated to {limit} bytes")));
        }
    }
    if !(out_drained && err_drained) {
        diagnostics.push(Diagnostic::warning(
            "output streams still open after the child exited; capture cut short",
        ));
    }

    Ok(RunOutcome {
        exit_code: status.code(),
        signal: status.signal(),
        timed_out,
        stdout,
        stderr,
        stdout_truncated,
        stderr_truncated,
        duration_ms,
        isolation: identity.isolation,
        diagnostics,
    })
}
