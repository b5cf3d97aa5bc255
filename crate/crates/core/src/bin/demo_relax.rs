//! 1-D Jacobi relaxation that keeps going while the world grows.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use elastic::checkpoint::write_atomic;
use elastic::demo::relax::{self, RelaxOptions, RelaxOutcome};
use elastic::demo::{format_ranks, format_values, parse_values, Report, Value};
use elastic::Runtime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser, Clone)]
#[command(name = "demo_relax", about = "Elastic 1-D relaxation")]
struct Cli {
    #[arg(long, default_value_t = 100)]
    iters: u32,
    #[arg(long, default_value_t = 32)]
    grid: usize,
    /// Comma-separated initial values; overrides --grid and --seed.
    #[arg(long)]
    init: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Integer grid with floor-division updates.
    #[arg(long)]
    int: bool,
    /// Follow spawn-merges by polling resized_world every iteration.
    #[arg(long)]
    poll_resized: bool,
    /// Write the final vector here (one value per line) instead of stdout.
    #[arg(long)]
    emit: Option<PathBuf>,
    #[arg(long)]
    hold_at: Option<u32>,
    #[arg(long)]
    hold_file: Option<PathBuf>,
    /// Each rank writes a short report here.
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

fn initial<V: Value>(cli: &Cli, random: impl Fn(&mut ChaCha8Rng) -> V) -> Result<Vec<V>, String> {
    match &cli.init {
        Some(text) => parse_values(text),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            Ok((0..cli.grid).map(|_| random(&mut rng)).collect())
        }
    }
}

fn resized_members(rt: &mut Runtime) -> Result<String, String> {
    let rw = rt.resized_world();
    let members = if rw.is_null() {
        None
    } else {
        Some(rt.membership(rw).map_err(|e| e.to_string())?)
    };
    Ok(format_ranks(members.as_deref()))
}

fn run<V: Value>(cli: &Cli, rt: &mut Runtime, init: Vec<V>) -> Result<(), String> {
    let before = resized_members(rt)?;
    let opts = RelaxOptions {
        iters: cli.iters,
        init,
        poll_resized: cli.poll_resized,
        hold_at: cli.hold_at,
        hold_file: cli.hold_file.clone(),
    };
    let out: RelaxOutcome<V> = relax::run(rt, &opts).map_err(|e| e.to_string())?;
    if let Some(dir) = &cli.report_dir {
        let opt = |v: Option<u32>| v.map_or("none".to_string(), |v| v.to_string());
        let mut r = Report::default();
        r.set("rank", rt.rank())
            .set("origin", rt.origin().as_str())
            .set("resized", out.resized)
            .set("size", out.size)
            .set("version", out.version)
            .set("notice_iter", opt(out.notice_iter))
            .set("detect_iter", opt(out.detect_iter));
        r.set("resized_world_before", before)
            .set("resized_world", resized_members(rt)?);
        r.write(dir, rt.rank()).map_err(|e| e.to_string())?;
    }
    if let Some(values) = out.result {
        let text = format_values(&values);
        match &cli.emit {
            Some(path) => write_atomic(path, text.as_bytes()).map_err(|e| e.to_string())?,
            None => print!("{text}"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut rt = match Runtime::from_env() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("demo_relax: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = rt.init() {
        eprintln!("demo_relax: init: {e}");
        return ExitCode::from(1);
    }
    let result = if cli.int {
        initial(&cli, |r| r.gen_range(-1000i64..=1000)).and_then(|init| run(&cli, &mut rt, init))
    } else {
        initial(&cli, |r| r.gen_range(-1.0f64..1.0)).and_then(|init| run(&cli, &mut rt, init))
    };
    let _ = rt.finalize();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("demo_relax: rank {}: {e}", rt.rank());
            ExitCode::from(1)
        }
    }
}
