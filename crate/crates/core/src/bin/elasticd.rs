//! Daemon entry point: `elasticd controller|head|fault ...`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use elastic::orchestrator::controller::{self, ControllerConfig, DaemonExes};
use elastic::orchestrator::{fault, head};
use elastic::world::Endpoint;

#[derive(Parser)]
#[command(name = "elasticd", about = "Elastic job daemons (started by mrun)")]
struct Cli {
    #[command(subcommand)]
    role: Role,
}

#[derive(Subcommand)]
enum Role {
    Controller {
        #[arg(long)]
        jobid: String,
        #[arg(long, default_value_t = 1)]
        nodes: u32,
        #[arg(short = 'n')]
        n: u32,
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        ckpt_dir: PathBuf,
        #[arg(long)]
        restart: Option<PathBuf>,
        #[arg(long)]
        head_exe: PathBuf,
        #[arg(long)]
        fault_exe: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        connect_timeout_ms: u64,
        #[arg(long, default_value_t = 20_000)]
        startup_timeout_ms: u64,
        #[arg(last = true, required = true)]
        program: Vec<String>,
    },
    Head {
        #[arg(long)]
        node: u32,
        #[arg(long)]
        controller: Endpoint,
        #[arg(long)]
        fault_exe: PathBuf,
    },
    Fault {
        #[arg(long)]
        head: Endpoint,
        #[arg(long)]
        rank: u32,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let code = match Cli::parse().role {
        Role::Controller {
            jobid,
            nodes,
            n,
            run_dir,
            ckpt_dir,
            restart,
            head_exe,
            fault_exe,
            connect_timeout_ms,
            startup_timeout_ms,
            program,
        } => {
            let cfg = ControllerConfig {
                jobid,
                nodes,
                n,
                program,
                ckpt_dir,
                run_dir,
                restart,
                connect_timeout: Duration::from_millis(connect_timeout_ms),
                startup_timeout: Duration::from_millis(startup_timeout_ms),
                endpoint: Endpoint::new("127.0.0.1", 0),
            };
            controller::run(
                cfg,
                DaemonExes {
                    head: head_exe,
                    fault: fault_exe,
                },
            )
        }
        Role::Head {
            node,
            controller,
            fault_exe,
        } => head::run(head::HeadConfig {
            node,
            controller,
            fault_exe,
            connect_timeout: Duration::from_secs(10),
        }),
        Role::Fault { head, rank } => fault::run(&head, rank, Duration::from_secs(10)),
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}
