//! Operator commands: `mrun` supervises a job, `mctl` talks to a running one.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::orchestrator::controller::{ctl_file, load_restart};
use crate::orchestrator::hub::exit_code;
use crate::wire::{self, ControlMsg, Message};
use crate::world::Endpoint;

pub const EXIT_LAUNCH: i32 = 1;
pub const EXIT_BAD_MANIFEST: i32 = 2;
pub const EXIT_SHRINK: i32 = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JobConfig {
    pub n: u32,
    pub nodes: u32,
    pub program: Vec<String>,
    pub jobid: String,
    pub ckpt_dir: PathBuf,
    pub run_dir: PathBuf,
    pub restart: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("{0}")]
    Invalid(String),
    #[error("restart manifest invalid: {0}")]
    BadManifest(CheckpointError),
    #[error("cannot restart {recorded} ranks as {requested}: shrinking is not supported")]
    Shrink { recorded: u32, requested: u32 },
    #[error("LaunchFailed(controller): {0}")]
    Controller(String),
}

impl LaunchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LaunchError::BadManifest(_) => EXIT_BAD_MANIFEST,
            LaunchError::Shrink { .. } => EXIT_SHRINK,
            _ => EXIT_LAUNCH,
        }
    }
}

/// Job ids become file names, so keep them to a safe alphabet.
pub fn valid_jobid(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub fn default_jobid() -> String {
    format!("job{}", std::process::id())
}

impl JobConfig {
    pub fn validate(&self) -> Result<(), LaunchError> {
        if self.n == 0 {
            return Err(LaunchError::Invalid("-n must be at least 1".into()));
        }
        if self.nodes == 0 {
            return Err(LaunchError::Invalid("--nodes must be at least 1".into()));
        }
        if !valid_jobid(&self.jobid) {
            return Err(LaunchError::Invalid(format!(
                "job id {:?} is not filesystem-safe",
                self.jobid
            )));
        }
        if self.program.is_empty() {
            return Err(LaunchError::Invalid("no program given".into()));
        }
        if let Some(dir) = &self.restart {
            let info = load_restart(dir).map_err(LaunchError::BadManifest)?;
            if self.n < info.manifest.size {
                return Err(LaunchError::Shrink {
                    recorded: info.manifest.size,
                    requested: self.n,
                });
            }
        }
        Ok(())
    }
}

/// Find `program` the way the rank launch will: a path if it has a slash,
/// otherwise a `PATH` lookup.
pub fn resolve_program(program: &str) -> Option<PathBuf> {
    if program.contains('/') {
        let p = PathBuf::from(program);
        return p.is_file().then(|| p.canonicalize().unwrap_or(p));
    }
    env::var_os("PATH")
        .map(|paths| {
            env::split_paths(&paths)
                .map(|d| d.join(program))
                .collect::<Vec<_>>()
        })
        .unwrap_or_default()
        .into_iter()
        .find(|p| p.is_file())
}

/// Daemon executables default to `elasticd` next to the running binary.
pub fn sibling_exe(name: &str) -> PathBuf {
    env::current_exe()
        .ok()
        .and_then(|p| p.parent().map(|d| d.join(name)))
        .unwrap_or_else(|| PathBuf::from(name))
}

#[derive(Clone, Debug)]
pub struct DaemonPaths {
    pub controller: PathBuf,
    pub head: PathBuf,
    pub fault: PathBuf,
}

impl Default for DaemonPaths {
    fn default() -> Self {
        let d = sibling_exe("elasticd");
        DaemonPaths {
            controller: d.clone(),
            head: d.clone(),
            fault: d,
        }
    }
}

/// Start the controller for `cfg` and wait for the job to end.
pub fn mrun(mut cfg: JobConfig, daemons: &DaemonPaths) -> Result<i32, LaunchError> {
    cfg.validate()?;
    let exe = resolve_program(&cfg.program[0])
        .ok_or_else(|| LaunchError::Invalid(format!("program {:?} not found", cfg.program[0])))?;
    cfg.program[0] = exe.display().to_string();
    for dir in [&cfg.run_dir, &cfg.ckpt_dir] {
        fs::create_dir_all(dir).map_err(|e| LaunchError::Invalid(format!("{}: {e}", dir.display())))?;
    }
    let mut cmd = Command::new(&daemons.controller);
    cmd.arg("controller")
        .args(["--jobid", &cfg.jobid])
        .args(["--nodes", &cfg.nodes.to_string()])
        .args(["-n", &cfg.n.to_string()])
        .arg("--run-dir")
        .arg(&cfg.run_dir)
        .arg("--ckpt-dir")
        .arg(&cfg.ckpt_dir)
        .arg("--head-exe")
        .arg(&daemons.head)
        .arg("--fault-exe")
        .arg(&daemons.fault);
    if let Some(dir) = &cfg.restart {
        cmd.arg("--restart").arg(dir);
    }
    cmd.arg("--").args(&cfg.program);
    let status = cmd
        .status()
        .map_err(|e| LaunchError::Controller(format!("{}: {e}", daemons.controller.display())))?;
    Ok(exit_code(status))
}

#[derive(Debug, Error)]
pub enum CtlError {
    #[error("JobNotFound: {0}")]
    JobNotFound(String),
    #[error("{0}")]
    Refused(String),
    #[error("controller link: {0}")]
    Link(String),
}

/// The controller endpoint advertised for `jobid`.
pub fn controller_endpoint(run_dir: &Path, jobid: &str) -> Result<Endpoint, CtlError> {
    let path = ctl_file(run_dir, jobid);
    let text = fs::read_to_string(&path)
        .map_err(|_| CtlError::JobNotFound(format!("no control file {}", path.display())))?;
    text.trim()
        .parse()
        .map_err(|e| CtlError::JobNotFound(format!("{}: {e}", path.display())))
}

/// One request, one reply.
pub fn request(run_dir: &Path, jobid: &str, msg: ControlMsg) -> Result<ControlMsg, CtlError> {
    let ep = controller_endpoint(run_dir, jobid)?;
    let link = wire::connect(&ep, Duration::from_secs(5))
        .map_err(|e| CtlError::JobNotFound(format!("controller at {ep}: {e}")))?;
    let (mut r, mut w) = link.split().map_err(|e| CtlError::Link(e.to_string()))?;
    w.send(&Message::Control(msg))
        .map_err(|e| CtlError::Link(e.to_string()))?;
    match r.recv() {
        Ok(Some(Message::Control(reply))) => Ok(reply),
        Ok(_) => Err(CtlError::Link("controller closed the link".into())),
        Err(e) => Err(CtlError::Link(e.to_string())),
    }
}

/// Run an mctl command and render its report.
pub fn mctl(run_dir: &Path, jobid: &str, msg: ControlMsg) -> Result<String, CtlError> {
    match request(run_dir, jobid, msg)? {
        ControlMsg::OpReply { ok: true, text } => Ok(text),
        ControlMsg::OpReply { ok: false, text } | ControlMsg::Error { text } => Err(CtlError::Refused(text)),
        ControlMsg::StatusRep(report) => Ok(report.to_string()),
        other => Err(CtlError::Link(format!("unexpected reply {other:?}"))),
    }
}

/// `+M` or `M`.
pub fn parse_grow(arg: &str) -> Result<u32, String> {
    let digits = arg.strip_prefix('+').unwrap_or(arg);
    match digits.parse::<u32>() {
        Ok(m) if m > 0 => Ok(m),
        _ => Err(format!("expected +M with M ≥ 1, got {arg:?}")),
    }
}
