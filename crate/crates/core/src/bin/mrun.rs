//! Launch an elastic job and supervise it until every rank has exited.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use elastic::launcher::{self, DaemonPaths, JobConfig};

#[derive(Parser)]
#[command(name = "mrun", about = "Launch an elastic message-passing job")]
struct Cli {
    /// Number of ranks (for --restart: the size to grow to).
    #[arg(short = 'n', default_value_t = 1)]
    n: u32,
    /// Logical nodes to spread ranks over.
    #[arg(long, default_value_t = 1)]
    nodes: u32,
    #[arg(long)]
    jobid: Option<String>,
    /// Restore from a checkpoint directory, growing to -n ranks.
    #[arg(long)]
    restart: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    run_dir: PathBuf,
    /// Defaults to ./ckpt/<jobid>.
    #[arg(long)]
    ckpt_dir: Option<PathBuf>,
    #[arg(long, hide = true)]
    controller_exe: Option<PathBuf>,
    #[arg(long, hide = true)]
    head_exe: Option<PathBuf>,
    #[arg(long, hide = true)]
    fault_exe: Option<PathBuf>,
    /// Program and arguments.
    #[arg(last = true, required = true)]
    program: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobid = cli.jobid.unwrap_or_else(launcher::default_jobid);
    let defaults = DaemonPaths::default();
    let daemons = DaemonPaths {
        controller: cli.controller_exe.unwrap_or(defaults.controller),
        head: cli.head_exe.unwrap_or(defaults.head),
        fault: cli.fault_exe.unwrap_or(defaults.fault),
    };
    let cfg = JobConfig {
        n: cli.n,
        nodes: cli.nodes,
        program: cli.program,
        ckpt_dir: cli.ckpt_dir.unwrap_or_else(|| PathBuf::from("ckpt").join(&jobid)),
        run_dir: cli.run_dir,
        restart: cli.restart,
        jobid,
    };
    let code = match launcher::mrun(cfg, &daemons) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mrun: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}
