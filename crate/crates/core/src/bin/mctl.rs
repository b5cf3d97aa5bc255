//! Talk to a running job's controller.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use elastic::launcher::{self, CtlError};
use elastic::wire::ControlMsg;

#[derive(Parser)]
#[command(name = "mctl", about = "Control a running elastic job")]
struct Cli {
    #[arg(long, default_value = "run", global = true)]
    run_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grow the world by M ranks: `resize +M <jobid>`.
    Resize {
        #[arg(allow_hyphen_values = true)]
        by: String,
        jobid: String,
    },
    /// Spawn M workers and merge them into the world.
    SpawnMerge {
        m: u32,
        jobid: String,
        /// Worker command; defaults to the job's program.
        #[arg(last = true)]
        command: Vec<String>,
    },
    /// Write images of every rank at their next world barrier.
    Checkpoint {
        jobid: String,
        /// Stop the job once the images are written.
        #[arg(long)]
        halt: bool,
        #[arg(long, default_value_t = 0)]
        timeout_ms: u32,
    },
    Status {
        jobid: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (jobid, msg) = match cli.cmd {
        Cmd::Resize { by, jobid } => match launcher::parse_grow(&by) {
            Ok(m) => (jobid, ControlMsg::ResizeReq { m }),
            Err(e) => {
                eprintln!("mctl: {e}");
                return ExitCode::from(2);
            }
        },
        Cmd::SpawnMerge { m, jobid, command } => (jobid, ControlMsg::SpawnMergeReq { k: m, command }),
        Cmd::Checkpoint {
            jobid,
            halt,
            timeout_ms,
        } => (jobid, ControlMsg::CheckpointReq { halt, timeout_ms }),
        Cmd::Status { jobid } => (jobid, ControlMsg::StatusReq),
    };
    match launcher::mctl(&cli.run_dir, &jobid, msg) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e @ CtlError::JobNotFound(_)) => {
            eprintln!("mctl: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("mctl: {e}");
            ExitCode::from(1)
        }
    }
}
