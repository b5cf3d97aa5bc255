//! The controller: one per job. Owns the world history, serves barriers,
//! and drives every epoch change.
//!
//! [`Controller`] is a plain state machine fed with [`Event`]s; it answers
//! with [`Effect`]s for the shell in [`run`] to carry out.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::barrier::BarrierService;
use super::hub::{ConnId, Hub, HubEvent};
use super::plan::{place, plan_grow, GrowPlan};
use crate::checkpoint::{self, write_atomic, CheckpointError, CheckpointImage, Manifest};
use crate::runtime::RuntimeEnv;
use crate::wire::{
    ControlMsg, LaunchSpec, LaunchTier, Liveness, Origin, PendingStatus, PlanKind, RankStatus, StatusReport,
    COMMIT_SEQ,
};
use crate::world::{CommRef, Endpoint, Family, Rank, Transition, VersionTag, WorldHistory, WorldView};

const DEFAULT_CKPT_TIMEOUT: Duration = Duration::from_secs(30);
const SHUTDOWN_GRACE: Duration = Duration::from_secs(5);

#[derive(Clone, Debug)]
pub struct ControllerConfig {
    pub jobid: String,
    pub nodes: u32,
    /// Initial world size (for a restart: the size to grow to).
    pub n: u32,
    pub program: Vec<String>,
    pub ckpt_dir: PathBuf,
    pub run_dir: PathBuf,
    pub restart: Option<PathBuf>,
    pub connect_timeout: Duration,
    pub startup_timeout: Duration,
    /// Where ranks reach this controller.
    pub endpoint: Endpoint,
}

#[derive(Debug)]
pub enum Event {
    Message(ConnId, ControlMsg),
    Closed(ConnId),
    HeadExited { node: u32, code: i32 },
    HeadSpawnFailed { node: u32, reason: String },
    Tick,
}

#[derive(Debug, PartialEq)]
pub enum Effect {
    Send(ConnId, ControlMsg),
    SpawnHead(u32),
    Exit(i32),
}

/// A checkpoint directory ready to be restarted from.
#[derive(Clone, Debug)]
pub struct RestartInfo {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub shape: String,
}

/// Validate a checkpoint directory: manifest, every image, and the recorded
/// history.
pub fn load_restart(dir: &Path) -> Result<RestartInfo, CheckpointError> {
    let manifest = Manifest::read(dir)?;
    let mut shape = None;
    for r in 0..manifest.size {
        let path = manifest
            .image_path(dir, r)
            .ok_or_else(|| CheckpointError::Manifest(format!("no image for rank {r}")))?;
        let image = CheckpointImage::read(&path)?;
        let s = image
            .get(checkpoint::KEY_HISTORY)
            .ok_or_else(|| CheckpointError::BadMetadata(checkpoint::KEY_HISTORY.into()))?
            .to_string();
        if shape.get_or_insert_with(|| s.clone()) != &s {
            return Err(CheckpointError::Manifest(format!(
                "image for rank {r} records a different history"
            )));
        }
    }
    let shape = shape.ok_or_else(|| CheckpointError::Manifest("no images".into()))?;
    let dummy = vec![Endpoint::new("0.0.0.0", 0); manifest.size as usize];
    let history = WorldHistory::from_shape(&shape, &dummy)
        .map_err(|e| CheckpointError::Manifest(format!("bad history {shape:?}: {e}")))?;
    if history.latest_version() != manifest.version || history.latest().size != manifest.size {
        return Err(CheckpointError::Manifest(format!(
            "history {shape:?} does not end at {} size {}",
            manifest.version, manifest.size
        )));
    }
    Ok(RestartInfo {
        dir: dir.to_path_buf(),
        manifest,
        shape,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Peer {
    Head(u32),
    Rank(Rank),
    Client,
}

#[derive(Debug)]
struct RankEntry {
    node: u32,
    conn: Option<ConnId>,
    endpoint: Option<Endpoint>,
    liveness: Liveness,
    finalized: bool,
    /// Never started because its launch failed during a plan that was then
    /// rolled back; does not count towards the job's exit code.
    discarded: bool,
    /// Launched for a plan rolled back at this version; told so if it joins late.
    cleared: Option<VersionTag>,
}

#[derive(Debug, Default)]
struct HeadEntry {
    conn: Option<ConnId>,
    exited: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Driver {
    /// mctl or restart: old ranks commit at their next WORLD barrier.
    Operator,
    Fork,
    /// comm_spawn + intercomm_merge from the application.
    AppSpawn,
}

#[derive(Debug)]
struct Pending {
    kind: PlanKind,
    driver: Driver,
    version: VersionTag,
    plan: GrowPlan,
    old: Vec<Rank>,
    argv: Vec<String>,
    /// Old ranks commit when they all enter this WORLD barrier.
    commit_seq: Option<u32>,
    /// New ranks waiting in the commit barrier.
    entered: BTreeSet<Rank>,
    merge_high: BTreeMap<Rank, bool>,
    images: BTreeMap<Rank, PathBuf>,
    launched: bool,
    spawn_replied: bool,
    notified: bool,
}

#[derive(Debug)]
enum CkptPhase {
    Waiting,
    Capturing {
        key: CommRef,
        seq: u32,
        written: BTreeSet<Rank>,
    },
}

#[derive(Debug)]
struct CkptOp {
    client: ConnId,
    halt: bool,
    deadline: Instant,
    timeout: Duration,
    phase: CkptPhase,
}

pub struct Controller {
    cfg: ControllerConfig,
    restart: Option<RestartInfo>,
    now: Instant,
    started: Instant,
    heads: BTreeMap<u32, HeadEntry>,
    conns: HashMap<ConnId, Peer>,
    ranks: BTreeMap<Rank, RankEntry>,
    history: Option<WorldHistory>,
    initial: u32,
    initial_launched: bool,
    barriers: BarrierService,
    pending: Option<Pending>,
    fork_reqs: BTreeMap<Rank, (u32, bool)>,
    spawn_reqs: BTreeMap<Rank, (u32, Vec<String>, Rank)>,
    ckpt: Option<CkptOp>,
    effects: Vec<Effect>,
    failure: Option<String>,
    shutdown_at: Option<Instant>,
    exited: bool,
    /// First nonzero rank exit code, passed on as the job's.
    rank_code: Option<i32>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig, now: Instant) -> Result<Controller, String> {
        if cfg.nodes == 0 || cfg.n == 0 {
            return Err("need at least one node and one rank".into());
        }
        let restart = match &cfg.restart {
            Some(dir) => Some(load_restart(dir).map_err(|e| e.to_string())?),
            None => None,
        };
        let initial = match &restart {
            Some(r) => {
                if cfg.n < r.manifest.size {
                    return Err(format!(
                        "cannot restart {} ranks as {}: shrinking is not supported",
                        r.manifest.size, cfg.n
                    ));
                }
                r.manifest.size
            }
            None => cfg.n,
        };
        let mut c = Controller {
            heads: (0..cfg.nodes).map(|i| (i, HeadEntry::default())).collect(),
            cfg,
            restart,
            now,
            started: now,
            conns: HashMap::new(),
            ranks: BTreeMap::new(),
            history: None,
            initial,
            initial_launched: false,
            barriers: BarrierService::new(),
            pending: None,
            fork_reqs: BTreeMap::new(),
            spawn_reqs: BTreeMap::new(),
            ckpt: None,
            effects: Vec::new(),
            failure: None,
            shutdown_at: None,
            exited: false,
            rank_code: None,
        };
        for node in 0..c.cfg.nodes {
            c.effects.push(Effect::SpawnHead(node));
        }
        Ok(c)
    }

    pub fn take_effects(&mut self) -> Vec<Effect> {
        std::mem::take(&mut self.effects)
    }

    pub fn history(&self) -> Option<&WorldHistory> {
        self.history.as_ref()
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    pub fn handle(&mut self, ev: Event, now: Instant) {
        self.now = now;
        match ev {
            Event::Message(conn, msg) => self.on_message(conn, msg),
            Event::Closed(conn) => self.on_closed(conn),
            Event::HeadExited { node, code } => self.on_head_exited(node, code),
            Event::HeadSpawnFailed { node, reason } => {
                if let Some(h) = self.heads.get_mut(&node) {
                    h.exited = true;
                }
                self.fail(format!("LaunchFailed(head): node {node}: {reason}"));
            }
            Event::Tick => self.on_tick(),
        }
        self.maybe_exit();
    }

    pub fn status(&self) -> StatusReport {
        let (version, size) = match &self.history {
            Some(h) => (h.latest_version(), h.latest().size),
            None => (VersionTag::INITIAL, self.initial),
        };
        let pending = self.pending.as_ref().map(|p| {
            let old_in = match (p.driver, p.commit_seq) {
                (Driver::Operator, Some(seq)) => {
                    let key = CommRef::at(Family::World, self.history_ref().latest_version());
                    let entered = self.barriers.entered(key, seq);
                    p.old.iter().filter(|r| entered.contains(r)).count()
                }
                (Driver::AppSpawn, _) => p.old.iter().filter(|r| p.merge_high.contains_key(r)).count(),
                _ => p.old.len(),
            };
            let new_in = match p.kind {
                PlanKind::SpawnMerge => p
                    .plan
                    .new_ranks
                    .iter()
                    .filter(|r| p.merge_high.contains_key(r))
                    .count(),
                _ => p.entered.len(),
            };
            PendingStatus {
                kind: p.kind,
                m: p.plan.m,
                joined: (old_in + new_in) as u32,
                total: (p.old.len() + p.plan.new_ranks.len()) as u32,
            }
        });
        StatusReport {
            version,
            size,
            pending,
            checkpoint_pending: self.ckpt.is_some(),
            ranks: self
                .ranks
                .iter()
                .map(|(&rank, e)| RankStatus {
                    rank,
                    node: e.node,
                    liveness: e.liveness,
                })
                .collect(),
        }
    }

    fn history_ref(&self) -> &WorldHistory {
        self.history.as_ref().expect("world assembled")
    }

    fn world_key(&self) -> CommRef {
        CommRef::at(Family::World, self.history_ref().latest_version())
    }

    fn send(&mut self, conn: ConnId, msg: ControlMsg) {
        self.effects.push(Effect::Send(conn, msg));
    }

    fn send_rank(&mut self, rank: Rank, msg: ControlMsg) {
        if let Some(conn) = self.ranks.get(&rank).and_then(|e| e.conn) {
            self.send(conn, msg);
        }
    }

    fn alive(&self, rank: Rank) -> bool {
        self.ranks
            .get(&rank)
            .is_some_and(|e| !matches!(e.liveness, Liveness::Exited(_)) && !e.finalized)
    }

    fn latest_ranks(&self) -> Vec<Rank> {
        self.history_ref().latest().ranks()
    }

    fn loads(&self) -> Vec<u32> {
        let mut loads = vec![0; self.cfg.nodes as usize];
        for e in self.ranks.values() {
            if !matches!(e.liveness, Liveness::Exited(_)) {
                loads[e.node as usize] += 1;
            }
        }
        loads
    }

    fn config_path(&self, rank: Rank) -> PathBuf {
        self.cfg
            .run_dir
            .join(&self.cfg.jobid)
            .join(format!("rank-{rank}.config"))
    }

    fn rank_env(
        &self,
        rank: Rank,
        world_size: u32,
        epoch: VersionTag,
        pending: bool,
        origin: Origin,
        restore: Option<PathBuf>,
    ) -> RuntimeEnv {
        RuntimeEnv {
            rank,
            world_size,
            controller: self.cfg.endpoint.clone(),
            epoch,
            pending,
            origin,
            restore,
            jobid: self.cfg.jobid.clone(),
            config: Some(self.config_path(rank)),
            connect_timeout: self.cfg.connect_timeout,
        }
    }

    /// Hand the specs to the heads of their nodes.
    fn launch(&mut self, specs: Vec<LaunchSpec>) {
        let mut by_node: BTreeMap<u32, Vec<LaunchSpec>> = BTreeMap::new();
        for spec in specs {
            self.ranks.insert(
                spec.rank,
                RankEntry {
                    node: spec.node,
                    conn: None,
                    endpoint: None,
                    liveness: Liveness::Starting,
                    finalized: false,
                    discarded: false,
                    cleared: None,
                },
            );
            by_node.entry(spec.node).or_default().push(spec);
        }
        for (node, specs) in by_node {
            match self.heads.get(&node).and_then(|h| h.conn) {
                Some(conn) => self.send(conn, ControlMsg::SpawnFaults { specs }),
                None => {
                    for s in specs {
                        self.on_launch_failed(LaunchTier::Head, s.rank, format!("node {node} has no head"));
                    }
                }
            }
        }
    }

    fn write_configs(&self) {
        let view = self.history_ref().latest();
        let table: String = view
            .endpoints
            .iter()
            .enumerate()
            .map(|(r, ep)| format!("{r} {} {} {}\n", ep.host, ep.port, view.version.0))
            .collect();
        for r in view.ranks() {
            if let Err(e) = write_atomic(&self.config_path(r), table.as_bytes()) {
                tracing::warn!("cannot write config for rank {r}: {e}");
            }
        }
    }

    fn on_message(&mut self, conn: ConnId, msg: ControlMsg) {
        match msg {
            ControlMsg::HeadHello { node } => self.on_head_hello(conn, node),
            ControlMsg::FaultRegistered { rank, node } => {
                tracing::debug!(rank, node, "fault daemon registered");
            }
            ControlMsg::RankExit { rank, code } => self.on_rank_exit(rank, code),
            ControlMsg::LaunchFailed { tier, rank, reason } => self.on_launch_failed(tier, rank, reason),
            ControlMsg::Join {
                rank,
                endpoint,
                origin,
                pid,
            } => self.on_join(conn, rank, endpoint, origin, pid),
            ControlMsg::BarrierEnter { comm, seq, rank } => self.on_barrier_enter(conn, comm, seq, rank),
            ControlMsg::Finalize { rank } => self.on_finalize(rank),
            ControlMsg::ForkReq {
                m,
                caller,
                state_ready,
            } => self.on_fork_req(conn, caller, m, state_ready),
            ControlMsg::CkptImage { rank, image } => self.on_image(rank, image),
            ControlMsg::SpawnReq {
                k,
                command,
                root,
                caller,
            } => self.on_spawn_req(conn, caller, k, command, root),
            ControlMsg::MergeReq { id, high, rank } => self.on_merge_req(conn, id, high, rank),
            ControlMsg::ResizeReq { m } => {
                self.conns.insert(conn, Peer::Client);
                self.on_operator(conn, PlanKind::Grow, m, Vec::new());
            }
            ControlMsg::SpawnMergeReq { k, command } => {
                self.conns.insert(conn, Peer::Client);
                self.on_operator(conn, PlanKind::SpawnMerge, k, command);
            }
            ControlMsg::CheckpointReq { halt, timeout_ms } => {
                self.conns.insert(conn, Peer::Client);
                self.on_checkpoint_req(conn, halt, timeout_ms);
            }
            ControlMsg::StatusReq => {
                self.conns.entry(conn).or_insert(Peer::Client);
                let report = self.status();
                self.send(conn, ControlMsg::StatusRep(report));
            }
            other => {
                tracing::warn!(conn, "unexpected control message {:#x}", other.kind());
            }
        }
    }

    fn on_head_hello(&mut self, conn: ConnId, node: u32) {
        let Some(head) = self.heads.get_mut(&node) else {
            self.send(
                conn,
                ControlMsg::Error {
                    text: format!("unknown node {node}"),
                },
            );
            return;
        };
        head.conn = Some(conn);
        self.conns.insert(conn, Peer::Head(node));
        self.send(conn, ControlMsg::HeadAck);
        if !self.initial_launched && self.heads.values().all(|h| h.conn.is_some()) {
            self.initial_launched = true;
            self.launch_initial();
        }
    }

    fn launch_initial(&mut self) {
        let mut loads = vec![0; self.cfg.nodes as usize];
        let mut specs = Vec::new();
        for r in 0..self.initial {
            let node = place(&mut loads);
            let env = match &self.restart {
                Some(info) => {
                    let image = info.manifest.image_path(&info.dir, r).expect("validated");
                    self.rank_env(
                        r,
                        self.initial,
                        info.manifest.version,
                        false,
                        Origin::Restored,
                        Some(image),
                    )
                }
                None => self.rank_env(
                    r,
                    self.initial,
                    VersionTag::INITIAL,
                    false,
                    Origin::Launched,
                    None,
                ),
            };
            specs.push(LaunchSpec {
                rank: r,
                node,
                argv: self.cfg.program.clone(),
                env: env.to_pairs(),
            });
        }
        self.launch(specs);
    }

    fn on_join(&mut self, conn: ConnId, rank: Rank, endpoint: Endpoint, origin: Origin, pid: u32) {
        let Some(entry) = self.ranks.get_mut(&rank) else {
            self.send(
                conn,
                ControlMsg::Error {
                    text: format!("rank {rank} was not launched by this job"),
                },
            );
            return;
        };
        if entry.conn.is_some() {
            self.send(
                conn,
                ControlMsg::Error {
                    text: format!("rank {rank} already joined"),
                },
            );
            return;
        }
        entry.conn = Some(conn);
        entry.endpoint = Some(endpoint);
        entry.liveness = Liveness::Up;
        self.conns.insert(conn, Peer::Rank(rank));
        tracing::debug!(rank, pid, origin = origin.as_str(), "rank joined");

        if self.history.is_none() {
            self.try_assemble();
            return;
        }
        let history = self.history_ref().clone();
        self.send(conn, ControlMsg::JoinAck { history });
        if let Some(version) = self.ranks[&rank].cleared {
            self.send(conn, ControlMsg::PendingCleared { version });
            return;
        }
        let ready_to_reply = self.pending.as_ref().is_some_and(|p| {
            p.driver == Driver::AppSpawn
                && !p.spawn_replied
                && p.plan
                    .new_ranks
                    .iter()
                    .all(|r| self.ranks.get(r).is_some_and(|e| e.conn.is_some()))
        });
        if ready_to_reply {
            let p = self.pending.as_mut().expect("checked");
            p.spawn_replied = true;
            let (version, new_ranks, old) = (p.version, p.plan.new_ranks.clone(), p.old.clone());
            for r in old {
                self.send_rank(
                    r,
                    ControlMsg::SpawnRep {
                        ok: true,
                        id: version,
                        new_ranks: new_ranks.clone(),
                        error: String::new(),
                    },
                );
            }
        }
    }

    /// Build the first view once every initial rank has joined.
    fn try_assemble(&mut self) {
        let endpoints: Option<Vec<Endpoint>> = (0..self.initial)
            .map(|r| self.ranks.get(&r).and_then(|e| e.endpoint.clone()))
            .collect();
        let Some(endpoints) = endpoints else { return };
        let history = match &self.restart {
            Some(info) => WorldHistory::from_shape(&info.shape, &endpoints),
            None => WorldHistory::new(WorldView::initial(endpoints)),
        };
        let history = match history {
            Ok(h) => h,
            Err(e) => return self.fail(format!("cannot assemble world: {e}")),
        };
        tracing::info!(size = self.initial, version = %history.latest_version(), "world assembled");
        self.history = Some(history.clone());
        for r in 0..self.initial {
            self.send_rank(
                r,
                ControlMsg::JoinAck {
                    history: history.clone(),
                },
            );
        }
        self.write_configs();
        if self.restart.is_some() && self.cfg.n > self.initial {
            let m = self.cfg.n - self.initial;
            if let Err(e) = self.start_plan(PlanKind::Grow, Driver::Operator, m, Vec::new()) {
                self.fail(format!("restart grow: {e}"));
            }
        }
    }

    fn start_plan(
        &mut self,
        kind: PlanKind,
        driver: Driver,
        m: u32,
        argv: Vec<String>,
    ) -> Result<VersionTag, String> {
        if self.stale_ranks() {
            return Err("ResizeInProgress: ranks of a rolled-back plan are still exiting".into());
        }
        let n = self.history_ref().latest().size;
        let plan = plan_grow(n, &self.loads(), kind, m, self.pending.as_ref().map(|p| p.kind))
            .map_err(|e| e.to_string())?;
        let version = self.history_ref().latest_version().next();
        let old: Vec<Rank> = self.latest_ranks();
        let commit_seq = (driver == Driver::Operator).then(|| self.barriers.next_seq(self.world_key()));
        let argv = if argv.is_empty() {
            self.cfg.program.clone()
        } else {
            argv
        };
        self.pending = Some(Pending {
            kind,
            driver,
            version,
            plan,
            old: old.clone(),
            argv,
            commit_seq,
            entered: BTreeSet::new(),
            merge_high: BTreeMap::new(),
            images: BTreeMap::new(),
            launched: false,
            spawn_replied: false,
            notified: false,
        });
        tracing::info!(%kind, m, %version, "plan started");
        if driver == Driver::Operator {
            self.notify_old();
        }
        match kind {
            PlanKind::Fork => {
                let sources = self.pending.as_ref().expect("set").plan.clone_sources.clone();
                for p in sources {
                    self.send_rank(
                        p,
                        ControlMsg::CkptReq {
                            rank: p,
                            quiesce: false,
                        },
                    );
                }
            }
            _ => self.launch_pending(),
        }
        Ok(version)
    }

    fn stale_ranks(&self) -> bool {
        self.ranks
            .values()
            .any(|e| e.cleared.is_some() && !matches!(e.liveness, Liveness::Exited(_)))
    }

    fn notify_old(&mut self) {
        let Some(p) = self.pending.as_mut() else { return };
        if p.notified {
            return;
        }
        p.notified = true;
        let (version, old) = (p.version, p.old.clone());
        for r in old {
            if self.alive(r) {
                self.send_rank(r, ControlMsg::WorldResizedNotify { version });
            }
        }
    }

    fn launch_pending(&mut self) {
        let Some(p) = self.pending.as_mut() else { return };
        p.launched = true;
        let (kind, version, plan, argv, images) = (
            p.kind,
            p.version,
            p.plan.clone(),
            p.argv.clone(),
            p.images.clone(),
        );
        let size = plan.new_ranks.last().map_or(0, |r| r + 1);
        let specs = plan
            .new_ranks
            .iter()
            .enumerate()
            .map(|(i, &rank)| {
                let env = match kind {
                    PlanKind::Grow => self.rank_env(rank, size, version, true, Origin::GrowNew, None),
                    PlanKind::Fork => {
                        let src = plan.clone_sources[i];
                        self.rank_env(
                            rank,
                            size,
                            version,
                            true,
                            Origin::ForkChild,
                            images.get(&src).cloned(),
                        )
                    }
                    PlanKind::SpawnMerge => {
                        self.rank_env(rank, size, version, false, Origin::SpawnedWorker, None)
                    }
                };
                LaunchSpec {
                    rank,
                    node: plan.placements[&rank],
                    argv: if kind == PlanKind::SpawnMerge {
                        argv.clone()
                    } else {
                        self.cfg.program.clone()
                    },
                    env: env.to_pairs(),
                }
            })
            .collect();
        self.launch(specs);
    }

    fn on_barrier_enter(&mut self, conn: ConnId, comm: CommRef, seq: u32, rank: Rank) {
        if self.history.is_none() {
            self.send(
                conn,
                ControlMsg::Error {
                    text: "world not assembled".into(),
                },
            );
            return;
        }
        if seq == COMMIT_SEQ {
            let ok = self.pending.as_mut().is_some_and(|p| {
                comm == CommRef::at(Family::World, p.version)
                    && p.plan.new_ranks.contains(&rank)
                    && p.kind != PlanKind::SpawnMerge
                    && p.entered.insert(rank)
            });
            if !ok {
                self.send(
                    conn,
                    ControlMsg::Error {
                        text: format!("StrayEnter: rank {rank} has no pending commit on {comm}"),
                    },
                );
                return;
            }
            self.try_commit();
            return;
        }
        let members = match self.history_ref().membership(comm) {
            Ok(m) => m,
            Err(e) => {
                self.send(
                    conn,
                    ControlMsg::Error {
                        text: format!("StrayEnter: {e}"),
                    },
                );
                return;
            }
        };
        if let Err(e) = self.barriers.enter(comm, seq, rank, &members) {
            tracing::warn!("{e}");
            self.send(conn, ControlMsg::Error { text: e.to_string() });
            return;
        }
        self.try_release(comm);
    }

    fn try_release(&mut self, comm: CommRef) {
        let Some(history) = &self.history else { return };
        let Ok(members) = history.membership(comm) else {
            return;
        };
        while let Some(seq) = self.barriers.ready(comm, &members) {
            let is_world = comm == self.world_key();
            if is_world && self.pending.as_ref().is_some_and(|p| p.commit_seq == Some(seq)) {
                self.try_commit();
                return;
            }
            if is_world
                && matches!(
                    self.ckpt,
                    Some(CkptOp {
                        phase: CkptPhase::Waiting,
                        ..
                    })
                )
            {
                self.begin_capture(comm, seq, &members);
                return;
            }
            self.release(comm, seq, &members);
        }
    }

    fn release(&mut self, comm: CommRef, seq: u32, members: &[Rank]) {
        self.barriers.mark_released(comm, seq);
        for &r in members {
            self.send_rank(r, ControlMsg::BarrierRelease { comm, seq });
        }
    }

    fn try_commit(&mut self) {
        let Some(p) = &self.pending else { return };
        let all = |set: &dyn Fn(Rank) -> bool, ranks: &[Rank]| ranks.iter().all(|&r| set(r));
        let old_in_barrier = || match p.commit_seq {
            Some(seq) => {
                let key = CommRef::at(Family::World, self.history_ref().latest_version());
                self.barriers.is_full(key, seq, &p.old)
            }
            None => false,
        };
        let new_ranks = &p.plan.new_ranks;
        let ready = match (p.kind, p.driver) {
            (PlanKind::Grow, _) => all(&|r| p.entered.contains(&r), new_ranks) && old_in_barrier(),
            (PlanKind::Fork, _) => all(&|r| p.entered.contains(&r), new_ranks),
            (PlanKind::SpawnMerge, Driver::AppSpawn) => {
                p.spawn_replied
                    && all(&|r| p.merge_high.contains_key(&r), new_ranks)
                    && all(&|r| p.merge_high.contains_key(&r), &p.old)
            }
            (PlanKind::SpawnMerge, _) => {
                all(&|r| p.merge_high.contains_key(&r), new_ranks) && old_in_barrier()
            }
        };
        if ready {
            self.commit();
        }
    }

    fn commit(&mut self) {
        let p = self.pending.take().expect("pending plan");
        let base = self.history_ref().latest().clone();
        let transition = match p.kind {
            PlanKind::Grow => Transition::Grow,
            PlanKind::Fork => Transition::Fork,
            PlanKind::SpawnMerge => {
                let group_high = |ranks: &[Rank]| -> bool {
                    ranks
                        .iter()
                        .any(|r| p.merge_high.get(r).copied().unwrap_or(false))
                };
                let parents_high = group_high(&p.old);
                let children_high = group_high(&p.plan.new_ranks);
                Transition::SpawnMerge {
                    parents_low: !(parents_high && !children_high),
                }
            }
        };
        let added: Vec<Endpoint> = p
            .plan
            .new_ranks
            .iter()
            .map(|r| self.ranks[r].endpoint.clone().expect("joined"))
            .collect();
        let view = base.successor(transition, added);
        if let Err(e) = self
            .history
            .as_mut()
            .expect("assembled")
            .commit_view(view.clone())
        {
            tracing::error!("commit of {} failed: {e}", p.version);
            self.pending = Some(p);
            self.abort(format!("commit failed: {e}"));
            return;
        }
        tracing::info!(version = %view.version, size = view.size, "epoch committed");
        if !p.notified {
            for &r in &p.old {
                if self.alive(r) {
                    self.send_rank(
                        r,
                        ControlMsg::WorldResizedNotify {
                            version: view.version,
                        },
                    );
                }
            }
        }
        for r in view.ranks() {
            self.send_rank(r, ControlMsg::EpochCommit { view: view.clone() });
        }
        let base_key = CommRef::at(Family::World, base.version);
        let new_key = CommRef::at(Family::World, view.version);
        if let Some(seq) = p.commit_seq {
            self.barriers.mark_released(base_key, seq);
            for &r in &p.old {
                self.send_rank(r, ControlMsg::BarrierRelease { comm: base_key, seq });
            }
        }
        let merged = CommRef::at(Family::Merged(view.version), view.version);
        match p.kind {
            PlanKind::Grow | PlanKind::Fork => {
                if p.kind == PlanKind::Fork {
                    for &r in &p.old {
                        self.send_rank(
                            r,
                            ControlMsg::ForkRep {
                                code: p.plan.m as i32,
                            },
                        );
                    }
                }
                for &r in &p.plan.new_ranks {
                    self.send_rank(
                        r,
                        ControlMsg::BarrierRelease {
                            comm: new_key,
                            seq: COMMIT_SEQ,
                        },
                    );
                }
            }
            PlanKind::SpawnMerge => {
                let targets: Vec<Rank> = p.merge_high.keys().copied().collect();
                for r in targets {
                    self.send_rank(
                        r,
                        ControlMsg::MergeRep {
                            ok: true,
                            comm: merged,
                            error: String::new(),
                        },
                    );
                }
            }
        }
        self.write_configs();
    }

    /// Roll back the pending plan; the old world carries on unchanged.
    fn abort(&mut self, reason: String) {
        let Some(p) = self.pending.take() else { return };
        tracing::warn!(version = %p.version, "plan aborted: {reason}");
        for &r in p.old.iter().chain(&p.plan.new_ranks) {
            if self.alive(r) {
                self.send_rank(r, ControlMsg::PendingCleared { version: p.version });
            }
        }
        // New ranks still running leave on their own; how they exit is ours, not theirs.
        for r in &p.plan.new_ranks {
            if let Some(e) = self.ranks.get_mut(r) {
                if !matches!(e.liveness, Liveness::Exited(_)) {
                    e.discarded = true;
                    e.cleared = Some(p.version);
                }
            }
        }
        match (p.kind, p.driver) {
            (PlanKind::Fork, _) => {
                for &r in &p.old {
                    self.send_rank(r, ControlMsg::ForkRep { code: -3 });
                }
            }
            (PlanKind::SpawnMerge, Driver::AppSpawn) if !p.spawn_replied => {
                for &r in &p.old {
                    self.send_rank(
                        r,
                        ControlMsg::SpawnRep {
                            ok: false,
                            id: p.version,
                            new_ranks: Vec::new(),
                            error: reason.clone(),
                        },
                    );
                }
            }
            _ => {}
        }
        if p.kind == PlanKind::SpawnMerge {
            for &r in p.merge_high.keys() {
                self.send_rank(
                    r,
                    ControlMsg::MergeRep {
                        ok: false,
                        comm: CommRef::NULL,
                        error: reason.clone(),
                    },
                );
            }
        }
        if p.commit_seq.is_some() {
            let key = self.world_key();
            self.try_release(key);
        }
    }

    fn on_finalize(&mut self, rank: Rank) {
        if let Some(e) = self.ranks.get_mut(&rank) {
            e.finalized = true;
        }
        self.on_rank_gone(rank);
    }

    /// A rank can no longer take part in collectives.
    fn on_rank_gone(&mut self, rank: Rank) {
        let involved = self
            .pending
            .as_ref()
            .is_some_and(|p| p.old.contains(&rank) || p.plan.new_ranks.contains(&rank));
        if involved {
            let p = self.pending.as_ref().expect("checked");
            let reached = p
                .plan
                .new_ranks
                .iter()
                .filter(|r| p.entered.contains(r) || p.merge_high.contains_key(r))
                .count();
            let text = format!(
                "SpawnShortfall: {reached} of {} new ranks reached the commit; rank {rank} left",
                p.plan.m
            );
            self.abort(text);
        }
        if !self.fork_reqs.is_empty() {
            self.check_fork();
        }
        if !self.spawn_reqs.is_empty() {
            self.check_spawn();
        }
    }

    fn on_rank_exit(&mut self, rank: Rank, code: i32) {
        let Some(e) = self.ranks.get_mut(&rank) else {
            return;
        };
        if matches!(e.liveness, Liveness::Exited(_)) {
            return;
        }
        let was_member = self.history.as_ref().is_some_and(|h| rank < h.latest().size);
        let finalized = e.finalized;
        let discarded = e.discarded;
        e.liveness = Liveness::Exited(code);
        tracing::info!(rank, code, "rank exited");
        self.on_rank_gone(rank);
        if code != 0 && !discarded {
            self.rank_code.get_or_insert(code);
            if (was_member || self.history.is_none()) && !finalized {
                self.fail(format!("rank {rank} exited with code {code}"));
            }
        }
        self.maybe_shutdown();
    }

    fn on_launch_failed(&mut self, tier: LaunchTier, rank: Rank, reason: String) {
        let in_plan = self
            .pending
            .as_ref()
            .is_some_and(|p| p.plan.new_ranks.contains(&rank));
        if let Some(e) = self.ranks.get_mut(&rank) {
            e.liveness = Liveness::Exited(127);
            e.discarded = in_plan;
        }
        let text = format!("LaunchFailed({tier}): rank {rank}: {reason}");
        tracing::error!("{text}");
        if in_plan {
            let p = self.pending.as_ref().expect("checked");
            let started = p
                .plan
                .new_ranks
                .iter()
                .filter(|r| self.ranks.get(r).is_some_and(|e| e.conn.is_some()))
                .count();
            let msg = format!("SpawnFailed: {started} of {} started ({text})", p.plan.m);
            self.abort(msg);
        } else {
            self.fail(text);
        }
        self.maybe_shutdown();
    }

    fn on_fork_req(&mut self, conn: ConnId, caller: Rank, m: u32, state_ready: bool) {
        if self.history.is_none() || !self.latest_ranks().contains(&caller) {
            self.send(
                conn,
                ControlMsg::Error {
                    text: format!("rank {caller} is not in the current world"),
                },
            );
            return;
        }
        self.fork_reqs.insert(caller, (m, state_ready));
        self.check_fork();
    }

    fn check_fork(&mut self) {
        let members = self.latest_ranks();
        let missing: Vec<Rank> = members
            .iter()
            .copied()
            .filter(|r| !self.fork_reqs.contains_key(r))
            .collect();
        if !missing.is_empty() {
            if missing.iter().any(|&r| !self.alive(r)) {
                self.finish_fork(-3);
            }
            return;
        }
        let ms: BTreeSet<u32> = self.fork_reqs.values().map(|(m, _)| *m).collect();
        if ms.len() > 1 {
            return self.finish_fork(-1);
        }
        let m = *ms.iter().next().expect("non-empty");
        let n = members.len() as u32;
        if m == 0 || m > n {
            return self.finish_fork(-2);
        }
        if (0..m).any(|src| !self.fork_reqs[&src].1) {
            return self.finish_fork(-3);
        }
        if self.pending.is_some() {
            self.abort("preempted by a fork".into());
        }
        // Children reuse the rank numbers of rolled-back ranks; wait until those are gone.
        if self.stale_ranks() {
            return;
        }
        self.fork_reqs.clear();
        if let Err(e) = self.start_plan(PlanKind::Fork, Driver::Fork, m, Vec::new()) {
            tracing::error!("fork plan: {e}");
            for r in members {
                self.send_rank(r, ControlMsg::ForkRep { code: -3 });
            }
        }
    }

    fn finish_fork(&mut self, code: i32) {
        let callers: Vec<Rank> = std::mem::take(&mut self.fork_reqs).into_keys().collect();
        tracing::warn!(code, "fork refused");
        for r in callers {
            self.send_rank(r, ControlMsg::ForkRep { code });
        }
    }

    fn on_image(&mut self, rank: Rank, image: Vec<u8>) {
        if let Some(CkptOp {
            phase: CkptPhase::Capturing { .. },
            ..
        }) = &self.ckpt
        {
            return self.on_world_image(rank, image);
        }
        let Some(p) = self.pending.as_mut() else { return };
        if p.kind != PlanKind::Fork || !p.plan.clone_sources.contains(&rank) {
            return;
        }
        let path = self
            .cfg
            .ckpt_dir
            .join(format!("fork-{}", p.version))
            .join(checkpoint::image_file_name(rank));
        if let Err(e) = write_atomic(&path, &image) {
            return self.abort(format!("cannot write fork image {}: {e}", path.display()));
        }
        p.images.insert(rank, path);
        if p.images.len() == p.plan.clone_sources.len() && !p.launched {
            self.launch_pending();
        }
    }

    fn on_spawn_req(&mut self, conn: ConnId, caller: Rank, k: u32, command: Vec<String>, root: Rank) {
        if self.history.is_none() || !self.latest_ranks().contains(&caller) {
            self.send(
                conn,
                ControlMsg::Error {
                    text: format!("rank {caller} is not in the current world"),
                },
            );
            return;
        }
        self.spawn_reqs.insert(caller, (k, command, root));
        self.check_spawn();
    }

    fn check_spawn(&mut self) {
        let members = self.latest_ranks();
        let missing: Vec<Rank> = members
            .iter()
            .copied()
            .filter(|r| !self.spawn_reqs.contains_key(r))
            .collect();
        if !missing.is_empty() {
            if missing.iter().any(|&r| !self.alive(r)) {
                self.refuse_spawn("NotCollective: a member left before calling spawn".into());
            }
            return;
        }
        let args: BTreeSet<_> = self.spawn_reqs.values().cloned().collect();
        if args.len() > 1 {
            return self.refuse_spawn("NotCollective: spawn arguments differ across callers".into());
        }
        let (k, command, _root) = args.into_iter().next().expect("non-empty");
        if self.pending.is_some() || self.ckpt.is_some() {
            return self.refuse_spawn("ResizeInProgress".into());
        }
        if k == 0 {
            return self.refuse_spawn("maxprocs must be positive".into());
        }
        self.spawn_reqs.clear();
        if let Err(e) = self.start_plan(PlanKind::SpawnMerge, Driver::AppSpawn, k, command) {
            for r in members {
                self.send_rank(
                    r,
                    ControlMsg::SpawnRep {
                        ok: false,
                        id: VersionTag(0),
                        new_ranks: Vec::new(),
                        error: e.clone(),
                    },
                );
            }
        }
    }

    fn refuse_spawn(&mut self, error: String) {
        let callers: Vec<Rank> = std::mem::take(&mut self.spawn_reqs).into_keys().collect();
        for r in callers {
            self.send_rank(
                r,
                ControlMsg::SpawnRep {
                    ok: false,
                    id: VersionTag(0),
                    new_ranks: Vec::new(),
                    error: error.clone(),
                },
            );
        }
    }

    fn on_merge_req(&mut self, conn: ConnId, id: VersionTag, high: bool, rank: Rank) {
        let accepted = self.pending.as_mut().is_some_and(|p| {
            let member =
                p.plan.new_ranks.contains(&rank) || (p.driver == Driver::AppSpawn && p.old.contains(&rank));
            p.kind == PlanKind::SpawnMerge && p.version == id && member && {
                p.merge_high.insert(rank, high);
                true
            }
        });
        if !accepted {
            self.send(
                conn,
                ControlMsg::MergeRep {
                    ok: false,
                    comm: CommRef::NULL,
                    error: format!("NotCollective: no pending intercommunicator {id} for rank {rank}"),
                },
            );
            return;
        }
        self.try_commit();
    }

    fn on_operator(&mut self, conn: ConnId, kind: PlanKind, m: u32, command: Vec<String>) {
        let refuse = if self.history.is_none() {
            Some("job is still starting".to_string())
        } else if let Some(p) = &self.pending {
            Some(format!(
                "ResizeInProgress: a {} to {} is pending",
                p.kind, p.version
            ))
        } else if self.ckpt.is_some() {
            Some("ResizeInProgress: a checkpoint is pending".to_string())
        } else {
            None
        };
        if let Some(text) = refuse {
            self.send(conn, ControlMsg::OpReply { ok: false, text });
            return;
        }
        match self.start_plan(kind, Driver::Operator, m, command) {
            Ok(v) => {
                let text = format!("{kind} m={m} pending {v}");
                self.send(conn, ControlMsg::OpReply { ok: true, text });
            }
            Err(text) => self.send(conn, ControlMsg::OpReply { ok: false, text }),
        }
    }

    fn on_checkpoint_req(&mut self, conn: ConnId, halt: bool, timeout_ms: u32) {
        let refuse = if self.history.is_none() {
            Some("job is still starting".to_string())
        } else if self.pending.is_some() {
            Some("ResizeInProgress: cannot checkpoint during a pending epoch".to_string())
        } else if self.ckpt.is_some() {
            Some("a checkpoint is already pending".to_string())
        } else {
            None
        };
        if let Some(text) = refuse {
            self.send(conn, ControlMsg::OpReply { ok: false, text });
            return;
        }
        let timeout = if timeout_ms == 0 {
            DEFAULT_CKPT_TIMEOUT
        } else {
            Duration::from_millis(timeout_ms as u64)
        };
        self.ckpt = Some(CkptOp {
            client: conn,
            halt,
            deadline: self.now + timeout,
            timeout,
            phase: CkptPhase::Waiting,
        });
        let key = self.world_key();
        self.try_release(key);
    }

    fn begin_capture(&mut self, key: CommRef, seq: u32, members: &[Rank]) {
        let op = self.ckpt.as_mut().expect("checkpoint pending");
        op.phase = CkptPhase::Capturing {
            key,
            seq,
            written: BTreeSet::new(),
        };
        tracing::info!(%key, seq, "capturing world checkpoint");
        for &r in members {
            self.send_rank(
                r,
                ControlMsg::CkptReq {
                    rank: r,
                    quiesce: true,
                },
            );
        }
    }

    fn on_world_image(&mut self, rank: Rank, image: Vec<u8>) {
        let path = self.cfg.ckpt_dir.join(checkpoint::image_file_name(rank));
        let write = write_atomic(&path, &image);
        let size = self.history_ref().latest().size;
        let version = self.history_ref().latest_version();
        let op = self.ckpt.as_mut().expect("capturing");
        let CkptPhase::Capturing { key, seq, written } = &mut op.phase else {
            return;
        };
        if let Err(e) = write {
            let (client, key, seq) = (op.client, *key, *seq);
            self.ckpt = None;
            self.send(
                client,
                ControlMsg::OpReply {
                    ok: false,
                    text: format!("cannot write {}: {e}", path.display()),
                },
            );
            let members = self.latest_ranks();
            self.release(key, seq, &members);
            return;
        }
        written.insert(rank);
        if written.len() < size as usize {
            return;
        }
        let (key, seq, client, halt) = (*key, *seq, op.client, op.halt);
        self.ckpt = None;
        let manifest = Manifest {
            version,
            size,
            images: (0..size).map(|r| (r, checkpoint::image_file_name(r))).collect(),
        };
        let dir = self.cfg.ckpt_dir.clone();
        let result = manifest.write(&dir);
        let members = self.latest_ranks();
        match result {
            Ok(()) => {
                let text = format!(
                    "checkpoint {version} size {size} written to {}{}",
                    dir.display(),
                    if halt { "; halting" } else { "" }
                );
                self.send(client, ControlMsg::OpReply { ok: true, text });
                if halt {
                    for r in members {
                        self.send_rank(r, ControlMsg::Halt);
                    }
                    return;
                }
            }
            Err(e) => {
                self.send(
                    client,
                    ControlMsg::OpReply {
                        ok: false,
                        text: format!("manifest: {e}"),
                    },
                );
            }
        }
        self.release(key, seq, &members);
        self.try_release(key);
    }

    fn on_closed(&mut self, conn: ConnId) {
        match self.conns.remove(&conn) {
            Some(Peer::Head(node)) => {
                if let Some(h) = self.heads.get_mut(&node) {
                    h.conn = None;
                }
                if self.shutdown_at.is_none() {
                    self.fail(format!("head of node {node} disconnected"));
                }
            }
            Some(Peer::Rank(rank)) => {
                if let Some(e) = self.ranks.get_mut(&rank) {
                    e.conn = None;
                }
            }
            Some(Peer::Client) | None => {
                if let Some(op) = &self.ckpt {
                    if op.client == conn && matches!(op.phase, CkptPhase::Waiting) {
                        self.ckpt = None;
                    }
                }
            }
        }
    }

    fn on_head_exited(&mut self, node: u32, code: i32) {
        if let Some(h) = self.heads.get_mut(&node) {
            h.exited = true;
        }
        if code != 0 {
            self.fail(format!("head of node {node} exited with code {code}"));
        } else if self.shutdown_at.is_none() {
            self.fail(format!("head of node {node} exited early"));
        }
    }

    fn on_tick(&mut self) {
        if let Some(op) = &self.ckpt {
            if matches!(op.phase, CkptPhase::Waiting) && self.now >= op.deadline {
                let text = format!(
                    "QuiesceTimeout: not every rank reached a WORLD barrier within {} ms",
                    op.timeout.as_millis()
                );
                let client = op.client;
                self.ckpt = None;
                self.send(client, ControlMsg::OpReply { ok: false, text });
            }
        }
        if !self.initial_launched
            && self.shutdown_at.is_none()
            && self.now.duration_since(self.started) > self.cfg.startup_timeout
        {
            let missing: Vec<u32> = self
                .heads
                .iter()
                .filter(|(_, h)| h.conn.is_none())
                .map(|(n, _)| *n)
                .collect();
            self.fail(format!("LaunchFailed(head): nodes {missing:?} never reported"));
        }
    }

    fn fail(&mut self, reason: String) {
        if self.failure.is_none() {
            tracing::error!("job failed: {reason}");
            self.failure = Some(reason);
        }
        self.begin_shutdown();
    }

    fn maybe_shutdown(&mut self) {
        let all_done = self.initial_launched
            && !self.ranks.is_empty()
            && self.pending.is_none()
            && self
                .ranks
                .values()
                .all(|e| matches!(e.liveness, Liveness::Exited(_)));
        if all_done {
            self.begin_shutdown();
        }
    }

    fn begin_shutdown(&mut self) {
        if self.shutdown_at.is_some() {
            return;
        }
        self.shutdown_at = Some(self.now);
        let heads: Vec<ConnId> = self.heads.values().filter_map(|h| h.conn).collect();
        for conn in heads {
            self.send(conn, ControlMsg::Shutdown);
        }
    }

    pub fn exit_code(&self) -> i32 {
        let ranks_ok = self
            .ranks
            .values()
            .all(|e| e.discarded || matches!(e.liveness, Liveness::Exited(0)));
        match (ranks_ok, self.rank_code) {
            (true, _) if self.failure.is_none() => 0,
            (_, Some(code)) if self.daemon_ok() => code,
            _ => 1,
        }
    }

    /// Nothing but ranks went wrong.
    fn daemon_ok(&self) -> bool {
        self.failure.as_deref().is_none_or(|f| f.starts_with("rank "))
    }

    fn maybe_exit(&mut self) {
        if self.exited {
            return;
        }
        let Some(at) = self.shutdown_at else { return };
        let heads_gone = self.heads.values().all(|h| h.exited || h.conn.is_none());
        if heads_gone || self.now.duration_since(at) > SHUTDOWN_GRACE {
            self.exited = true;
            let code = self.exit_code();
            self.effects.push(Effect::Exit(code));
        }
    }
}

/// Control endpoint file for `jobid`.
pub fn ctl_file(run_dir: &Path, jobid: &str) -> PathBuf {
    run_dir.join(format!("{jobid}.ctl"))
}

/// Executables the controller needs to start the lower tiers.
#[derive(Clone, Debug)]
pub struct DaemonExes {
    pub head: PathBuf,
    pub fault: PathBuf,
}

/// Run a controller until the job ends; returns the job's exit code.
pub fn run(mut cfg: ControllerConfig, exes: DaemonExes) -> i32 {
    let hub = match Hub::bind() {
        Ok(h) => h,
        Err(e) => {
            tracing::error!("LaunchFailed(controller): cannot listen: {e}");
            return 1;
        }
    };
    cfg.endpoint = hub.endpoint().clone();
    let ctl = ctl_file(&cfg.run_dir, &cfg.jobid);
    if let Err(e) = write_atomic(&ctl, format!("{}\n", cfg.endpoint).as_bytes()) {
        tracing::error!("LaunchFailed(controller): {}: {e}", ctl.display());
        return 1;
    }
    if let Err(e) = fs::create_dir_all(&cfg.ckpt_dir) {
        tracing::warn!("cannot create {}: {e}", cfg.ckpt_dir.display());
    }
    let endpoint = cfg.endpoint.clone();
    let jobid = cfg.jobid.clone();
    let mut core = match Controller::new(cfg, Instant::now()) {
        Ok(c) => c,
        Err(e) => {
            tracing::error!("{e}");
            let _ = fs::remove_file(&ctl);
            return 1;
        }
    };
    tracing::info!(%endpoint, jobid, "controller listening");
    let mut queue: Vec<Event> = Vec::new();
    let code = 'outer: loop {
        for effect in core.take_effects() {
            match effect {
                Effect::Send(conn, msg) => {
                    hub.send(conn, msg);
                }
                Effect::SpawnHead(node) => {
                    let spawned = Command::new(&exes.head)
                        .arg("head")
                        .args(["--node", &node.to_string()])
                        .args(["--controller", &endpoint.to_string()])
                        .arg("--fault-exe")
                        .arg(&exes.fault)
                        .stdin(Stdio::null())
                        .spawn();
                    match spawned {
                        Ok(child) => hub.watch_child(node as u64, child),
                        Err(e) => queue.push(Event::HeadSpawnFailed {
                            node,
                            reason: format!("{}: {e}", exes.head.display()),
                        }),
                    }
                }
                Effect::Exit(code) => break 'outer code,
            }
        }
        let ev = if let Some(ev) = queue.pop() {
            ev
        } else {
            match hub.recv_timeout(Duration::from_millis(50)) {
                Some(HubEvent::Message(conn, msg)) => Event::Message(conn, msg),
                Some(HubEvent::Closed(conn)) => Event::Closed(conn),
                Some(HubEvent::Exited { tag, code }) => Event::HeadExited {
                    node: tag as u32,
                    code,
                },
                None => Event::Tick,
            }
        };
        core.handle(ev, Instant::now());
    };
    if let Some(reason) = core.failure() {
        eprintln!("elastic: {reason}");
    }
    let _ = fs::remove_file(&ctl);
    code
}
