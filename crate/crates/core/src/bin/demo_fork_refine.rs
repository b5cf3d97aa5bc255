//! Relax a coarse grid, fork, and finish on a finer one.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use elastic::checkpoint::write_atomic;
use elastic::demo::refine::{self, RefineOptions};
use elastic::demo::{format_values, parse_values, DemoError, Report};
use elastic::Runtime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exit status when fork reports an error.
const EXIT_FORK: u8 = 4;

#[derive(Parser)]
#[command(name = "demo_fork_refine", about = "Coarse-to-fine relaxation using fork")]
struct Cli {
    #[arg(long, default_value_t = 20)]
    iters: u32,
    /// Coarse grid size.
    #[arg(long, default_value_t = 8)]
    grid: usize,
    /// Fine grid size; defaults to twice the coarse one.
    #[arg(long)]
    fine: Option<usize>,
    #[arg(long)]
    init: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    fork_at: u32,
    #[arg(long, default_value_t = 1)]
    fork_m: u32,
    /// This rank passes a different m to fork.
    #[arg(long)]
    inject_mismatch_rank: Option<u32>,
    #[arg(long)]
    emit: Option<PathBuf>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let coarse: Vec<f64> = match &cli.init {
        Some(text) => match parse_values(text) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("demo_fork_refine: {e}");
                return ExitCode::from(2);
            }
        },
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            (0..cli.grid).map(|_| rng.gen_range(-1.0..1.0)).collect()
        }
    };
    let mut rt = match Runtime::from_env() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("demo_fork_refine: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = rt.init() {
        eprintln!("demo_fork_refine: init: {e}");
        return ExitCode::from(1);
    }
    let opts = RefineOptions {
        iters: cli.iters,
        fine: cli.fine.unwrap_or(coarse.len() * 2),
        coarse,
        fork_at: cli.fork_at.min(cli.iters),
        fork_m: cli.fork_m,
        mismatch: cli.inject_mismatch_rank == Some(rt.rank()),
    };
    let result = refine::run(&mut rt, &opts);
    let mut report = Report::default();
    report.set("rank", rt.rank()).set("origin", rt.origin().as_str());
    let code = match result {
        Ok(out) => {
            report.set("fork", out.fork_code).set("size", out.size).set(
                "inherited_ok",
                out.inherited_ok.map_or("none".into(), |b| b.to_string()),
            );
            match out.result.map(|v| format_values(&v)) {
                Some(text) => match &cli.emit {
                    Some(path) => match write_atomic(path, text.as_bytes()) {
                        Ok(()) => 0,
                        Err(e) => {
                            eprintln!("demo_fork_refine: {e}");
                            1
                        }
                    },
                    None => {
                        print!("{text}");
                        0
                    }
                },
                None => 0,
            }
        }
        Err(DemoError::Fork(code)) => {
            eprintln!("demo_fork_refine: rank {}: fork failed with {code}", rt.rank());
            report.set("fork", code);
            EXIT_FORK
        }
        Err(e) => {
            eprintln!("demo_fork_refine: rank {}: {e}", rt.rank());
            1
        }
    };
    if let Some(dir) = &cli.report_dir {
        let _ = report.write(dir, rt.rank());
    }
    let _ = rt.finalize();
    ExitCode::from(code)
}
