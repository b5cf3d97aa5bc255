//! Shared helpers for the process-level tests: job scaffolding, independent
//! oracles and proptest strategies.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use elastic::checkpoint::{CheckpointImage, Metadata, FORMAT_VERSION};
use elastic::demo::Report;
use elastic::wire::{
    ControlMsg, Envelope, LaunchSpec, LaunchTier, Liveness, Message, Origin, PendingStatus, PlanKind,
    RankStatus, StatusReport,
};
use elastic::world::{Endpoint, Transition, VersionSel};
use elastic::{CommRef, Family, VersionTag, WorldHistory, WorldView};
use proptest::prelude::*;
use tempfile::TempDir;

pub const MRUN: &str = env!("CARGO_BIN_EXE_mrun");
pub const MCTL: &str = env!("CARGO_BIN_EXE_mctl");
pub const ELASTICD: &str = env!("CARGO_BIN_EXE_elasticd");
pub const RELAX: &str = env!("CARGO_BIN_EXE_demo_relax");
pub const REFINE: &str = env!("CARGO_BIN_EXE_demo_fork_refine");
pub const PROBE: &str = env!("CARGO_BIN_EXE_elastic_probe");

pub const JOB_TIMEOUT: Duration = Duration::from_secs(60);

/// One job in its own scratch directory.
pub struct Job {
    pub dir: TempDir,
    pub jobid: String,
}

impl Job {
    pub fn new(jobid: &str) -> Job {
        let dir = tempfile::tempdir().expect("tempdir");
        std::fs::create_dir_all(dir.path().join("rep")).unwrap();
        Job {
            dir,
            jobid: jobid.to_string(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.path("run")
    }

    pub fn ckpt_dir(&self) -> PathBuf {
        self.path("ckpt")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.path("rep")
    }

    /// `mrun -n N --nodes K [extra] -- program...`
    pub fn mrun(
        &self,
        n: u32,
        nodes: u32,
        extra: &[&str],
        program: &[String],
        env: &[(&str, &str)],
    ) -> Child {
        let mut cmd = Command::new(MRUN);
        cmd.current_dir(self.dir.path())
            .args([
                "-n",
                &n.to_string(),
                "--nodes",
                &nodes.to_string(),
                "--jobid",
                &self.jobid,
            ])
            .arg("--run-dir")
            .arg(self.run_dir())
            .arg("--ckpt-dir")
            .arg(self.ckpt_dir())
            .args(extra)
            .arg("--")
            .args(program)
            .process_group(0)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.spawn().expect("spawn mrun")
    }

    pub fn mctl(&self, args: &[&str]) -> Output {
        Command::new(MCTL)
            .current_dir(self.dir.path())
            .arg("--run-dir")
            .arg(self.run_dir())
            .args(args)
            .output()
            .expect("run mctl")
    }

    /// mctl, retried while the job is still coming up.
    pub fn mctl_ready(&self, args: &[&str]) -> Output {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let out = self.mctl(args);
            let err = String::from_utf8_lossy(&out.stderr);
            let retry = err.contains("still starting") || err.contains("JobNotFound");
            if !retry || Instant::now() > deadline {
                return out;
            }
            thread::sleep(Duration::from_millis(20));
        }
    }

    pub fn status(&self) -> String {
        String::from_utf8_lossy(&self.mctl(&["status", &self.jobid]).stdout).into_owned()
    }

    pub fn report(&self, rank: u32) -> Report {
        Report::read(&self.report_dir(), rank).unwrap_or_default()
    }

    pub fn reports(&self, n: u32) -> Vec<Report> {
        (0..n).map(|r| self.report(r)).collect()
    }

    pub fn rep(&self) -> String {
        self.report_dir().display().to_string()
    }
}

/// A job started by [`Job::mrun`] or [`restart`].
pub struct Finished {
    /// None if the job had to be killed.
    pub code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
}

pub fn finish(mut child: Child, timeout: Duration) -> Finished {
    let deadline = Instant::now() + timeout;
    let code = loop {
        match child.try_wait().expect("try_wait") {
            Some(status) => break status.code(),
            None if Instant::now() > deadline => {
                // mrun leads its own process group; take the daemons and ranks down too.
                let _ = Command::new("kill")
                    .args(["-KILL", &format!("-{}", child.id())])
                    .status();
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            None => thread::sleep(Duration::from_millis(10)),
        }
    };
    let out = child.wait_with_output().expect("collect output");
    Finished {
        code,
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn wait_for(path: &Path, timeout: Duration) -> bool {
    let deadline = Instant::now() + timeout;
    while !path.exists() {
        if Instant::now() > deadline {
            return false;
        }
        thread::sleep(Duration::from_millis(5));
    }
    true
}

pub fn wait_status(job: &Job, needle: &str, timeout: Duration) -> bool {
    let deadline = Instant::now() + timeout;
    loop {
        if job.status().contains(needle) {
            return true;
        }
        if Instant::now() > deadline {
            return false;
        }
        thread::sleep(Duration::from_millis(20));
    }
}

pub fn touch(path: &Path) {
    std::fs::write(path, b"").unwrap();
}

pub fn strings(args: &[&str]) -> Vec<String> {
    args.iter().map(|s| s.to_string()).collect()
}

pub fn csv<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn ranks(lo: u32, hi: u32) -> String {
    if lo == hi {
        "NULL".into()
    } else {
        csv(&(lo..hi).collect::<Vec<_>>())
    }
}

pub fn parse_f64s(text: &str) -> Vec<f64> {
    text.split_whitespace()
        .map(|s| s.parse().expect("float"))
        .collect()
}

pub fn parse_i64s(text: &str) -> Vec<i64> {
    text.split_whitespace()
        .map(|s| s.parse().expect("integer"))
        .collect()
}

/// Sequential Jacobi relaxation with fixed end points, updating every
/// interior point from the previous sweep.
pub fn oracle_relax_f64(init: &[f64], iters: u32) -> Vec<f64> {
    let mut u = init.to_vec();
    for _ in 0..iters {
        let prev = u.clone();
        for i in 1..u.len().saturating_sub(1) {
            u[i] = (prev[i - 1] + prev[i + 1]) / 2.0;
        }
    }
    u
}

/// Integer variant: floor of the neighbour mean.
pub fn oracle_relax_i64(init: &[i64], iters: u32) -> Vec<i64> {
    let mut u = init.to_vec();
    for _ in 0..iters {
        let prev = u.clone();
        for i in 1..u.len().saturating_sub(1) {
            let s = prev[i - 1] + prev[i + 1];
            u[i] = if s >= 0 { s / 2 } else { -((-s + 1) / 2) };
        }
    }
    u
}

/// Piecewise-linear resampling with matching end points, computed from the
/// real-valued position of each fine point.
pub fn oracle_resample(coarse: &[f64], fine: usize) -> Vec<f64> {
    let scale = (coarse.len() - 1) as f64 / (fine - 1) as f64;
    (0..fine)
        .map(|j| {
            let x = j as f64 * scale;
            let i = (x.floor() as usize).min(coarse.len() - 2);
            let t = x - i as f64;
            coarse[i] * (1.0 - t) + coarse[i + 1] * t
        })
        .collect()
}

pub fn oracle_refine(coarse: &[f64], fine: usize, fork_at: u32, iters: u32) -> Vec<f64> {
    let c = oracle_relax_f64(coarse, fork_at);
    oracle_relax_f64(&oracle_resample(&c, fine), iters - fork_at)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "vector lengths differ");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// Strategies.

pub fn arb_version() -> impl Strategy<Value = VersionTag> {
    (0u32..u32::MAX - 1).prop_map(VersionTag)
}

pub fn arb_endpoint() -> impl Strategy<Value = Endpoint> {
    ("[a-z0-9.-]{1,20}", any::<u16>()).prop_map(|(h, p)| Endpoint::new(h, p))
}

pub fn arb_comm() -> impl Strategy<Value = CommRef> {
    let sel = prop_oneof![Just(VersionSel::Latest), arb_version().prop_map(VersionSel::At)];
    let plain = prop_oneof![
        Just(Family::World),
        Just(Family::Parents),
        Just(Family::Children),
        Just(Family::ResizedWorld),
    ];
    prop_oneof![
        Just(CommRef::Null),
        (plain, sel).prop_map(|(family, version)| CommRef::Comm { family, version }),
        arb_version().prop_map(|id| CommRef::at(Family::Merged(id), id)),
    ]
}

pub fn arb_envelope() -> impl Strategy<Value = Envelope> {
    prop_oneof![
        4 => (any::<u32>(), any::<u32>(), arb_comm(), any::<i32>(), prop::collection::vec(any::<u8>(), 0..512))
            .prop_map(|(s, d, c, t, p)| Envelope::new(s, d, c, t, p)),
        1 => (any::<u32>(), any::<u32>()).prop_map(|(s, d)| Envelope::marker(s, d)),
    ]
}

pub fn arb_transition() -> impl Strategy<Value = Transition> {
    prop_oneof![
        Just(Transition::Initial),
        Just(Transition::Grow),
        Just(Transition::Fork),
        any::<bool>().prop_map(|parents_low| Transition::SpawnMerge { parents_low }),
    ]
}

/// A structurally arbitrary view; the codec does not validate semantics.
pub fn arb_view() -> impl Strategy<Value = WorldView> {
    (
        arb_version(),
        any::<u32>(),
        any::<u32>(),
        arb_transition(),
        prop::collection::vec(arb_endpoint(), 0..8),
    )
        .prop_map(|(version, size, prev_size, transition, endpoints)| WorldView {
            version,
            size,
            endpoints,
            transition,
            prev_size,
        })
}

/// Histories that are valid by construction: a start size and a list of
/// (transition, added) steps.
pub fn arb_history() -> impl Strategy<Value = WorldHistory> {
    let step = (
        prop_oneof![
            Just(Transition::Grow),
            Just(Transition::Fork),
            any::<bool>().prop_map(|parents_low| Transition::SpawnMerge { parents_low }),
        ],
        1u32..5,
    );
    (1u32..6, prop::collection::vec(step, 0..6)).prop_map(|(n, steps)| {
        let ep = |r: u32| Endpoint::new("127.0.0.1", 20000 + r as u16);
        let mut h = WorldHistory::new(WorldView::initial((0..n).map(ep).collect())).unwrap();
        for (t, m) in steps {
            let size = h.latest().size;
            let m = if t == Transition::Fork { m.min(size) } else { m };
            let next = h.latest().successor(t, (size..size + m).map(ep).collect());
            h.commit_view(next).unwrap();
        }
        h
    })
}

fn arb_text() -> impl Strategy<Value = String> {
    "\\PC{0,24}"
}

fn arb_strings() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(arb_text(), 0..5)
}

fn arb_spec() -> impl Strategy<Value = LaunchSpec> {
    (
        any::<u32>(),
        any::<u32>(),
        arb_strings(),
        prop::collection::vec((arb_text(), arb_text()), 0..4),
    )
        .prop_map(|(rank, node, argv, env)| LaunchSpec {
            rank,
            node,
            argv,
            env,
        })
}

fn arb_origin() -> impl Strategy<Value = Origin> {
    prop_oneof![
        Just(Origin::Launched),
        Just(Origin::GrowNew),
        Just(Origin::Restored),
        Just(Origin::ForkChild),
        Just(Origin::SpawnedWorker),
    ]
}

fn arb_status() -> impl Strategy<Value = StatusReport> {
    let kind = prop_oneof![
        Just(PlanKind::Grow),
        Just(PlanKind::Fork),
        Just(PlanKind::SpawnMerge)
    ];
    let pending = prop::option::of((kind, any::<u32>(), any::<u32>(), any::<u32>()).prop_map(
        |(kind, m, joined, total)| PendingStatus {
            kind,
            m,
            joined,
            total,
        },
    ));
    let liveness = prop_oneof![
        Just(Liveness::Starting),
        Just(Liveness::Up),
        any::<i32>().prop_map(Liveness::Exited),
    ];
    let rank = (any::<u32>(), any::<u32>(), liveness).prop_map(|(rank, node, liveness)| RankStatus {
        rank,
        node,
        liveness,
    });
    (
        arb_version(),
        any::<u32>(),
        pending,
        any::<bool>(),
        prop::collection::vec(rank, 0..6),
    )
        .prop_map(
            |(version, size, pending, checkpoint_pending, ranks)| StatusReport {
                version,
                size,
                pending,
                checkpoint_pending,
                ranks,
            },
        )
}

fn arb_tier() -> impl Strategy<Value = LaunchTier> {
    prop_oneof![
        Just(LaunchTier::Controller),
        Just(LaunchTier::Head),
        Just(LaunchTier::Fault),
        Just(LaunchTier::Rank),
    ]
}

pub fn arb_control() -> impl Strategy<Value = ControlMsg> {
    let u = any::<u32>;
    let bytes = || prop::collection::vec(any::<u8>(), 0..256);
    prop_oneof![
        (u(), arb_endpoint(), arb_origin(), u()).prop_map(|(rank, endpoint, origin, pid)| ControlMsg::Join {
            rank,
            endpoint,
            origin,
            pid
        }),
        arb_history().prop_map(|history| ControlMsg::JoinAck { history }),
        u().prop_map(|m| ControlMsg::ResizeReq { m }),
        (u(), arb_strings()).prop_map(|(k, command)| ControlMsg::SpawnMergeReq { k, command }),
        (any::<bool>(), u()).prop_map(|(halt, timeout_ms)| ControlMsg::CheckpointReq { halt, timeout_ms }),
        (any::<bool>(), arb_text()).prop_map(|(ok, text)| ControlMsg::OpReply { ok, text }),
        (u(), u(), any::<bool>()).prop_map(|(m, caller, state_ready)| ControlMsg::ForkReq {
            m,
            caller,
            state_ready
        }),
        any::<i32>().prop_map(|code| ControlMsg::ForkRep { code }),
        (u(), arb_strings(), u(), u()).prop_map(|(k, command, root, caller)| ControlMsg::SpawnReq {
            k,
            command,
            root,
            caller
        }),
        (
            any::<bool>(),
            arb_version(),
            prop::collection::vec(u(), 0..6),
            arb_text()
        )
            .prop_map(|(ok, id, new_ranks, error)| ControlMsg::SpawnRep {
                ok,
                id,
                new_ranks,
                error
            }),
        (arb_version(), any::<bool>(), u()).prop_map(|(id, high, rank)| ControlMsg::MergeReq {
            id,
            high,
            rank
        }),
        (any::<bool>(), arb_comm(), arb_text()).prop_map(|(ok, comm, error)| ControlMsg::MergeRep {
            ok,
            comm,
            error
        }),
        (u(), any::<bool>()).prop_map(|(rank, quiesce)| ControlMsg::CkptReq { rank, quiesce }),
        (u(), bytes()).prop_map(|(rank, image)| ControlMsg::CkptImage { rank, image }),
        arb_view().prop_map(|view| ControlMsg::EpochCommit { view }),
        arb_version().prop_map(|version| ControlMsg::WorldResizedNotify { version }),
        arb_version().prop_map(|version| ControlMsg::PendingCleared { version }),
        (arb_comm(), u(), u()).prop_map(|(comm, seq, rank)| ControlMsg::BarrierEnter { comm, seq, rank }),
        (arb_comm(), u()).prop_map(|(comm, seq)| ControlMsg::BarrierRelease { comm, seq }),
        Just(ControlMsg::StatusReq),
        arb_status().prop_map(ControlMsg::StatusRep),
        u().prop_map(|rank| ControlMsg::Finalize { rank }),
        Just(ControlMsg::Halt),
        arb_text().prop_map(|text| ControlMsg::Error { text }),
        u().prop_map(|node| ControlMsg::HeadHello { node }),
        Just(ControlMsg::HeadAck),
        prop::collection::vec(arb_spec(), 0..4).prop_map(|specs| ControlMsg::SpawnFaults { specs }),
        u().prop_map(|rank| ControlMsg::FaultHello { rank }),
        arb_spec().prop_map(|spec| ControlMsg::FaultGo { spec }),
        (u(), u()).prop_map(|(rank, node)| ControlMsg::FaultRegistered { rank, node }),
        (u(), any::<i32>()).prop_map(|(rank, code)| ControlMsg::RankExit { rank, code }),
        (arb_tier(), u(), arb_text()).prop_map(|(tier, rank, reason)| ControlMsg::LaunchFailed {
            tier,
            rank,
            reason
        }),
        Just(ControlMsg::Shutdown),
    ]
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    prop_oneof![
        arb_envelope().prop_map(Message::Envelope),
        arb_control().prop_map(Message::Control),
    ]
}

pub fn arb_metadata() -> impl Strategy<Value = Metadata> {
    prop::collection::btree_map(arb_text(), arb_text(), 0..8)
}

pub fn arb_image() -> impl Strategy<Value = CheckpointImage> {
    (arb_metadata(), prop::collection::vec(any::<u8>(), 0..2048)).prop_map(|(metadata, payload)| {
        CheckpointImage {
            format_version: FORMAT_VERSION,
            metadata,
            payload,
        }
    })
}

pub fn empty_overrides() -> Metadata {
    BTreeMap::new()
}

// Job flows.

/// demo_relax arguments writing the result to `out` in the job directory.
pub fn relax_program(job: &Job, init: &str, iters: u32, int: bool, extra: &[&str]) -> Vec<String> {
    let init = format!("--init={init}");
    let mut p = strings(&[
        RELAX,
        "--iters",
        &iters.to_string(),
        &init,
        "--report-dir",
        &job.rep(),
    ]);
    p.push("--emit".into());
    p.push(job.path("out").display().to_string());
    if int {
        p.push("--int".into());
    }
    p.extend(strings(extra));
    p
}

pub fn read_out(job: &Job) -> String {
    std::fs::read_to_string(job.path("out")).unwrap_or_default()
}

/// Run to completion with no operator involvement.
pub fn run_plain(job: &Job, n: u32, nodes: u32, program: &[String]) -> Finished {
    finish(job.mrun(n, nodes, &[], program, &[]), JOB_TIMEOUT)
}

/// Outcome of an operator action taken while rank 0 is held.
pub struct Held {
    pub job: Finished,
    pub mctl: Output,
    pub status: String,
}

/// Launch with `--hold-at k`, wait for the hold, run `action`, release.
pub fn with_hold(job: &Job, n: u32, program: &[String], k: u32, action: impl FnOnce(&Job) -> Output) -> Held {
    let hold = job.path("hold");
    let mut program = program.to_vec();
    program.extend(strings(&[
        "--hold-at",
        &k.to_string(),
        "--hold-file",
        &hold.display().to_string(),
    ]));
    let child = job.mrun(n, 2, &[], &program, &[]);
    let mut reached = hold.clone().into_os_string();
    reached.push(".reached");
    let mut go = hold.into_os_string();
    go.push(".go");
    if !wait_for(Path::new(&reached), JOB_TIMEOUT) {
        let job = finish(child, Duration::from_millis(1));
        panic!("hold never reached: {}", job.stderr);
    }
    let mctl = action(job);
    let status = job.status();
    touch(Path::new(&go));
    Held {
        job: finish(child, JOB_TIMEOUT),
        mctl,
        status,
    }
}

/// Live `resize +m` while held after sweep k.
pub fn live_grow(job: &Job, n: u32, m: u32, program: &[String], k: u32) -> Held {
    with_hold(job, n, program, k, |job| {
        job.mctl_ready(&["resize", &format!("+{m}"), &job.jobid])
    })
}

/// Checkpoint with `--halt` while held after sweep k. The checkpoint only
/// completes once the hold is released, so mctl runs in the background.
pub fn checkpoint_halt(job: &Job, n: u32, program: &[String], k: u32) -> (Finished, Output) {
    let mut pending: Option<Child> = None;
    let held = with_hold(job, n, program, k, |job| {
        let child = Command::new(MCTL)
            .arg("--run-dir")
            .arg(job.run_dir())
            .args(["checkpoint", &job.jobid, "--halt"])
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn mctl");
        pending = Some(child);
        assert!(
            wait_status(job, "checkpoint pending", Duration::from_secs(20)),
            "checkpoint never registered"
        );
        job.mctl(&["status", &job.jobid])
    });
    let out = pending.unwrap().wait_with_output().expect("mctl checkpoint");
    (held.job, out)
}

/// Restart a checkpoint directory as `n` ranks under a fresh job id.
pub fn restart(job: &Job, jobid: &str, n: u32, program: &[String]) -> Finished {
    let mut cmd = Command::new(MRUN);
    cmd.current_dir(job.dir.path())
        .args(["-n", &n.to_string(), "--nodes", "2", "--jobid", jobid])
        .arg("--run-dir")
        .arg(job.run_dir())
        .arg("--ckpt-dir")
        .arg(job.path("ckpt2"))
        .arg("--restart")
        .arg(job.ckpt_dir())
        .arg("--")
        .args(program)
        .process_group(0)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    finish(cmd.spawn().expect("spawn mrun"), JOB_TIMEOUT)
}

pub struct GrowTrial {
    pub code: Option<i32>,
    pub stderr: String,
    pub mctl: Vec<Output>,
    pub status: String,
    pub reports: Vec<Report>,
}

/// Ring traffic on n ranks while the operator grows the world by each of
/// `steps` in turn; rank 0 lingers at the end so status can be sampled.
pub fn ring_grow(n: u32, steps: &[u32], seed: u64, load: u32) -> GrowTrial {
    let job = Job::new(&format!("ring{seed}"));
    let total = n + steps.iter().sum::<u32>();
    let linger = job.path("linger");
    let program = strings(&[
        PROBE,
        "--report-dir",
        &job.rep(),
        "ring",
        "--until-size",
        &total.to_string(),
        "--seed",
        &seed.to_string(),
        "--load",
        &load.to_string(),
        "--linger-file",
        &linger.display().to_string(),
    ]);
    let child = job.mrun(n, 2, &[], &program, &[]);
    let mut mctl = Vec::new();
    for (i, m) in steps.iter().enumerate() {
        mctl.push(job.mctl_ready(&["resize", &format!("+{m}"), &job.jobid]));
        wait_status(&job, &format!("version v{} ", i + 1), Duration::from_secs(30));
    }
    let mut reached = linger.clone().into_os_string();
    reached.push(".reached");
    let mut go = linger.into_os_string();
    go.push(".go");
    wait_for(Path::new(&reached), Duration::from_secs(30));
    let status = job.status();
    touch(Path::new(&go));
    let done = finish(child, JOB_TIMEOUT);
    GrowTrial {
        code: done.code,
        stderr: done.stderr,
        mctl,
        status,
        reports: job.reports(total),
    }
}

/// Problems with a finished grow trial, empty when it is clean.
pub fn grow_violations(t: &GrowTrial, n: u32, total: u32, versions: u32) -> Vec<String> {
    let mut v = Vec::new();
    if t.code != Some(0) {
        v.push(format!(
            "mrun exited {:?}: {}",
            t.code,
            t.stderr.lines().last().unwrap_or("")
        ));
    }
    for out in &t.mctl {
        if !out.status.success() {
            v.push(format!(
                "mctl refused: {}",
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
    }
    let want = format!("version v{versions} size {total} pending none");
    if !t.status.contains(&want) {
        v.push(format!(
            "status {:?}, wanted {want:?}",
            t.status.lines().next().unwrap_or("")
        ));
    }
    for (r, rep) in t.reports.iter().enumerate() {
        let r = r as u32;
        if rep.get("size") != Some(&total.to_string()) || rep.get("version") != Some(&format!("v{versions}"))
        {
            v.push(format!(
                "rank {r} ended at size {:?} version {:?}",
                rep.get("size"),
                rep.get("version")
            ));
        }
        if r < n && rep.parse_key::<u32>("resized") != Some(versions) {
            v.push(format!(
                "old rank {r} saw WORLD_RESIZED {:?} times",
                rep.get("resized")
            ));
        }
        if rep.get("gaps") != Some("0") || rep.get("dups") != Some("0") {
            v.push(format!(
                "rank {r} gaps {:?} dups {:?}",
                rep.get("gaps"),
                rep.get("dups")
            ));
        }
    }
    v
}

pub fn random_f64s(rng: &mut impl rand::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_i64s(rng: &mut impl rand::Rng, n: usize) -> Vec<i64> {
    (0..n).map(|_| rng.gen_range(-1000..=1000)).collect()
}
