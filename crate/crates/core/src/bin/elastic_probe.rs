//! Test rank program: exercises one runtime feature and writes a report.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use clap::{Parser, Subcommand};
use elastic::checkpoint::write_atomic;
use elastic::demo::relax::hold;
use elastic::demo::{format_ranks, Report};
use elastic::wire::Origin;
use elastic::world::{CommRef, Family};
use elastic::{Rank, Runtime, RuntimeError, Status, VersionTag};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Makes a grow-launched rank with this number exit before init.
const CRASH_ENV: &str = "ELASTIC_PROBE_CRASH_RANK";
const TAG_RING: i32 = 7;
const TAG_STATE: i32 = 8;

#[derive(Parser)]
#[command(name = "elastic_probe")]
struct Cli {
    #[arg(long)]
    report_dir: PathBuf,
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand)]
enum Mode {
    /// All-to-all sequence-numbered traffic until the world reaches a size.
    Ring {
        #[arg(long)]
        until_size: u32,
        /// Rounds to run once the size is reached.
        #[arg(long, default_value_t = 3)]
        after: u32,
        /// Up to this many extra messages per pair per round.
        #[arg(long, default_value_t = 4)]
        load: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        delay_ms: u64,
        #[arg(long, default_value_t = 100_000)]
        max_rounds: u32,
        /// Rank 0 waits on this file (see demo hold) before the last barrier.
        #[arg(long)]
        linger_file: Option<PathBuf>,
    },
    /// Register random state and fork.
    Fork {
        #[arg(long)]
        m: u32,
        #[arg(long, default_value_t = 1024)]
        state_bytes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        mismatch_rank: Option<Rank>,
        /// Do not fork until this file exists.
        #[arg(long)]
        wait_file: Option<PathBuf>,
    },
    /// comm_spawn from the application, then merge.
    Spawn {
        #[arg(long)]
        k: u32,
        /// Worker command; defaults to this program in worker mode.
        #[arg(last = true)]
        cmd: Vec<String>,
    },
    /// The spawned side of `spawn`.
    Worker,
}

struct Counter(u32);

impl Counter {
    fn note(&mut self, s: Status) {
        self.0 += u32::from(s == Status::WorldResized);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut rt = match Runtime::from_env() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("elastic_probe: {e}");
            return ExitCode::from(2);
        }
    };
    if rt.origin() == Origin::GrowNew
        && std::env::var(CRASH_ENV).ok().and_then(|v| v.parse().ok()) == Some(rt.rank())
    {
        eprintln!("elastic_probe: rank {} crashing on request", rt.rank());
        return ExitCode::from(9);
    }
    if let Err(e) = rt.init() {
        eprintln!("elastic_probe: rank {}: init: {e}", rt.rank());
        return ExitCode::from(1);
    }
    let mut report = Report::default();
    report.set("rank", rt.rank()).set("origin", rt.origin().as_str());
    let result = match cli.mode {
        Mode::Ring {
            until_size,
            after,
            load,
            seed,
            delay_ms,
            max_rounds,
            linger_file,
        } => ring(
            &mut rt,
            &mut report,
            until_size,
            after,
            load,
            seed,
            Duration::from_millis(delay_ms),
            max_rounds,
            linger_file.as_ref(),
        ),
        Mode::Fork {
            m,
            state_bytes,
            seed,
            mismatch_rank,
            wait_file,
        } => {
            if let Some(f) = wait_file {
                while !f.exists() {
                    thread::sleep(Duration::from_millis(5));
                }
            }
            fork(&mut rt, &mut report, &cli.report_dir, m, state_bytes, seed, mismatch_rank)
        }
        Mode::Spawn { k, cmd } => spawn(&mut rt, &mut report, &cli.report_dir, k, cmd),
        Mode::Worker => worker(&mut rt, &mut report),
    };
    let code = match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("elastic_probe: rank {}: {e}", rt.rank());
            report.set("error", e.to_string().replace('\n', " "));
            1
        }
    };
    report.set("size", rt.size()).set("version", rt.version());
    let _ = report.write(&cli.report_dir, rt.rank());
    let _ = rt.finalize();
    ExitCode::from(code)
}

fn members(rt: &mut Runtime, comm: CommRef) -> String {
    if comm.is_null() {
        return format_ranks(None);
    }
    match rt.membership(comm) {
        Ok(m) => format_ranks(Some(&m)),
        Err(e) => format!("error:{e}"),
    }
}

#[allow(clippy::too_many_arguments)]
fn ring(
    rt: &mut Runtime,
    report: &mut Report,
    until: u32,
    after: u32,
    load: u32,
    seed: u64,
    delay: Duration,
    max_rounds: u32,
    linger: Option<&PathBuf>,
) -> Result<(), RuntimeError> {
    let me = rt.rank();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((me as u64) << 32));
    let mut next: HashMap<Rank, u32> = HashMap::new();
    let mut expect: HashMap<Rank, u32> = HashMap::new();
    let (mut gaps, mut dups, mut received) = (0u64, 0u64, 0u64);
    let mut resized = Counter(0);
    let (mut round, mut post) = (0, 0);
    loop {
        if rt.size() >= until {
            post += 1;
            if post > after {
                break;
            }
        }
        if round >= max_rounds {
            break;
        }
        let peers: Vec<Rank> = rt
            .membership(CommRef::world())?
            .into_iter()
            .filter(|&r| r != me)
            .collect();
        for &dst in &peers {
            let k = rng.gen_range(0..=load);
            for i in 0..=k {
                let seq = next.entry(dst).or_default();
                let mut payload = seq.to_le_bytes().to_vec();
                payload.extend((k - i).to_le_bytes());
                *seq += 1;
                resized.note(rt.send(dst, TAG_RING, &payload, CommRef::world())?);
            }
        }
        for &src in &peers {
            loop {
                let (bytes, s) = rt.recv(src, TAG_RING, CommRef::world())?;
                resized.note(s);
                received += 1;
                let seq = u32::from_le_bytes(bytes[0..4].try_into().expect("seq"));
                let rest = u32::from_le_bytes(bytes[4..8].try_into().expect("rest"));
                let exp = expect.entry(src).or_default();
                if seq < *exp {
                    dups += 1;
                } else {
                    gaps += u64::from(seq - *exp);
                    *exp = seq + 1;
                }
                if rest == 0 {
                    break;
                }
            }
        }
        resized.note(rt.barrier(CommRef::world())?);
        round += 1;
        thread::sleep(delay);
    }
    if me == 0 {
        hold(linger).map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    resized.note(rt.barrier(CommRef::world())?);
    let latest = rt.version();
    for v in 0..=latest.0 {
        let m = members(rt, CommRef::at(Family::World, VersionTag(v)));
        report.set(&format!("members_v{v}"), m);
    }
    let m = members(rt, CommRef::world());
    let parents = rt.comm_parents();
    let children = rt.comm_children();
    report
        .set("members_latest", m)
        .set("parents", members(rt, parents))
        .set("children", members(rt, children))
        .set("resized", resized.0)
        .set("rounds", round)
        .set("received", received)
        .set("gaps", gaps)
        .set("dups", dups);
    Ok(())
}

fn state_file(dir: &Path, rank: Rank) -> PathBuf {
    dir.join(format!("state-{rank}.bin"))
}

fn fork(
    rt: &mut Runtime,
    report: &mut Report,
    dir: &Path,
    m: u32,
    state_bytes: usize,
    seed: u64,
    mismatch: Option<Rank>,
) -> Result<(), RuntimeError> {
    let me = rt.rank();
    let code = if rt.origin() == Origin::ForkChild {
        let state = rt.inherited_state().unwrap_or_default().to_vec();
        write_atomic(&state_file(dir, me), &state)?;
        let code = rt.fork(m)?;
        let parent = me - rt.world().expect("initialized").prev_size;
        let (from_parent, _) = rt.recv(parent, TAG_STATE, CommRef::world())?;
        report.set("parent_state_equal", from_parent == state);
        code
    } else {
        let mut state = vec![0u8; state_bytes];
        ChaCha8Rng::seed_from_u64(seed.wrapping_add(me as u64)).fill_bytes(&mut state);
        write_atomic(&state_file(dir, me), &state)?;
        rt.register_state(state.clone())?;
        let code = rt.fork(if mismatch == Some(me) { m + 1 } else { m })?;
        if code > 0 && me < code as u32 {
            let n = rt.world().expect("initialized").prev_size;
            rt.send(n + me, TAG_STATE, &state, CommRef::world())?;
        }
        code
    };
    report.set("fork", code);
    let children = rt.comm_children();
    let parents = rt.comm_parents();
    report
        .set("children", members(rt, children))
        .set("parents", members(rt, parents));
    if code >= 0 {
        rt.barrier(CommRef::world())?;
    }
    Ok(())
}

fn spawn(
    rt: &mut Runtime,
    report: &mut Report,
    dir: &Path,
    k: u32,
    cmd: Vec<String>,
) -> Result<(), RuntimeError> {
    let cmd = if cmd.is_empty() {
        let exe = std::env::current_exe()?;
        vec![
            exe.display().to_string(),
            "--report-dir".into(),
            dir.display().to_string(),
            "worker".into(),
        ]
    } else {
        cmd
    };
    let rw = rt.resized_world();
    report.set("resized_before", members(rt, rw));
    let inter = match rt.comm_spawn(&cmd, k, 0, CommRef::world()) {
        Ok(i) => i,
        Err(e @ RuntimeError::SpawnFailed(_)) => {
            report.set("spawn_error", e.to_string().replace('\n', " "));
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    report.set("remote", format_ranks(Some(&inter.remote)));
    let merged = rt.intercomm_merge(&inter, false)?;
    finish_merge(rt, report, merged)
}

fn worker(rt: &mut Runtime, report: &mut Report) -> Result<(), RuntimeError> {
    let parent = rt
        .parent_comm()
        .ok_or_else(|| RuntimeError::NotCollective("worker without a parent".into()))?;
    report.set("remote", format_ranks(Some(&parent.remote)));
    let merged = rt.intercomm_merge(&parent, true)?;
    finish_merge(rt, report, merged)
}

fn finish_merge(rt: &mut Runtime, report: &mut Report, merged: CommRef) -> Result<(), RuntimeError> {
    let m = members(rt, merged);
    let rw = rt.resized_world();
    let r = members(rt, rw);
    report.set("merged", m).set("resized_after", r);
    rt.barrier(merged)?;
    Ok(())
}
