//! The library linked into application processes.
//!
//! All point-to-point traffic uses global ranks over a direct TCP mesh; the
//! controller serves barriers and drives epoch changes. Control messages are
//! only acted upon from inside runtime calls, so the application never sees
//! its world change behind its back.

mod env;
mod mailbox;

pub use env::*;

use std::collections::{HashMap, HashSet, VecDeque};
use std::io;
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::checkpoint::{self, CheckpointError, CheckpointImage, Hook, HookPhase, HookRegistry, Metadata};
use crate::wire::{
    self, ControlMsg, Decoder, Encoder, Envelope, LinkWriter, Message, Origin, WireFamily, COMMIT_SEQ,
};
use crate::world::{CommRef, Endpoint, Family, Rank, VersionTag, WorldError, WorldHistory, WorldView};
use mailbox::Shared;

static PROCESS_INIT: AtomicBool = AtomicBool::new(false);

const WAIT_SLICE: Duration = Duration::from_millis(50);

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("runtime is not initialized")]
    NotInitialized,
    #[error("runtime already initialized in this process")]
    DuplicateInit,
    #[error("bad launch environment: {0}")]
    Env(String),
    #[error("timed out connecting to {0}")]
    ConnectTimeout(String),
    #[error("rank {rank} is not a member of {comm}")]
    RankOutOfRange { rank: Rank, comm: CommRef },
    #[error("rank {0} cannot message itself")]
    SelfMessage(Rank),
    #[error("operation on a NULL communicator")]
    NullCommunicator,
    #[error(transparent)]
    World(WorldError),
    #[error("disconnected: {0}")]
    Disconnected(String),
    #[error("spawn failed: {0}")]
    SpawnFailed(String),
    #[error("not collective: {0}")]
    NotCollective(String),
    #[error("pending epoch {0} was aborted")]
    Aborted(VersionTag),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<WorldError> for RuntimeError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::NullCommunicator => RuntimeError::NullCommunicator,
            other => RuntimeError::World(other),
        }
    }
}

impl From<wire::WireError> for RuntimeError {
    fn from(e: wire::WireError) -> Self {
        match e {
            wire::WireError::ConnectTimeout(ep) | wire::WireError::Refused(ep) => {
                RuntimeError::ConnectTimeout(ep)
            }
            other => RuntimeError::Disconnected(other.to_string()),
        }
    }
}

pub type RtResult<T> = Result<T, RuntimeError>;

/// Outcome of a successful runtime call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The world has changed (or is about to) since this rank last looked.
    WorldResized,
}

/// Bridge between the calling group and a freshly spawned group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterComm {
    /// Epoch the merge of this intercommunicator will commit.
    pub id: VersionTag,
    pub local: Vec<Rank>,
    pub remote: Vec<Rank>,
}

/// Image payload: the registered state followed by envelopes that had been
/// received but not yet consumed.
pub fn encode_rank_payload(state: &[u8], inflight: &[Envelope]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.bytes(state).u32(inflight.len() as u32);
    for env in inflight {
        env.encode_into(&mut enc);
    }
    enc.finish()
}

pub fn decode_rank_payload(bytes: &[u8]) -> Result<(Vec<u8>, Vec<Envelope>), CheckpointError> {
    let mut dec = Decoder::new(bytes);
    let state = dec.bytes()?;
    let n = dec.u32()?;
    dec.bounded(n, 21)?;
    let inflight = (0..n)
        .map(|_| Envelope::decode_from(&mut dec))
        .collect::<Result<Vec<_>, _>>()?;
    dec.finish()?;
    Ok((state, inflight))
}

/// Per-process runtime handle.
pub struct Runtime {
    env: RuntimeEnv,
    hooks: HookRegistry,
    active: Option<Active>,
    finalized: bool,
}

struct Active {
    env: RuntimeEnv,
    rank: Rank,
    history: WorldHistory,
    ctl: LinkWriter,
    shared: Arc<Shared>,
    peers: HashMap<Rank, LinkWriter>,
    notices: VecDeque<VersionTag>,
    seqs: HashMap<CommRef, u32>,
    released: HashSet<(CommRef, u32)>,
    replies: VecDeque<ControlMsg>,
    cleared: HashSet<VersionTag>,
    user_state: Option<Vec<u8>>,
    inherited: Option<Vec<u8>>,
    fork_child: bool,
    parent: Option<InterComm>,
    hooks: HookRegistry,
}

impl Runtime {
    pub fn new(env: RuntimeEnv) -> Runtime {
        Runtime {
            env,
            hooks: HookRegistry::new(),
            active: None,
            finalized: false,
        }
    }

    pub fn from_env() -> RtResult<Runtime> {
        RuntimeEnv::from_env()
            .map(Runtime::new)
            .map_err(RuntimeError::Env)
    }

    /// Join the job. Ranks created by a pending epoch stay here until that
    /// epoch commits.
    pub fn init(&mut self) -> RtResult<()> {
        if self.active.is_some() || self.finalized {
            return Err(RuntimeError::DuplicateInit);
        }
        if PROCESS_INIT.swap(true, Ordering::SeqCst) {
            return Err(RuntimeError::DuplicateInit);
        }
        let hooks = std::mem::take(&mut self.hooks);
        match Active::start(self.env.clone(), hooks) {
            Ok(active) => {
                self.active = Some(active);
                Ok(())
            }
            Err(e) => {
                PROCESS_INIT.store(false, Ordering::SeqCst);
                Err(e)
            }
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.active.is_some()
    }

    fn active(&mut self) -> RtResult<&mut Active> {
        if self.finalized {
            return Err(RuntimeError::Disconnected("runtime was finalized".into()));
        }
        self.active.as_mut().ok_or(RuntimeError::NotInitialized)
    }

    pub fn rank(&self) -> Rank {
        self.env.rank
    }

    pub fn origin(&self) -> Origin {
        self.env.origin
    }

    pub fn jobid(&self) -> &str {
        &self.env.jobid
    }

    /// Size of the latest committed world this rank knows about.
    pub fn size(&self) -> u32 {
        match &self.active {
            Some(a) => a.history.latest().size,
            None => self.env.world_size,
        }
    }

    pub fn version(&self) -> VersionTag {
        match &self.active {
            Some(a) => a.history.latest_version(),
            None => self.env.epoch,
        }
    }

    pub fn history(&self) -> Option<&WorldHistory> {
        self.active.as_ref().map(|a| &a.history)
    }

    pub fn world(&self) -> Option<&WorldView> {
        self.active.as_ref().map(|a| a.history.latest())
    }

    /// Process pending control traffic without blocking.
    pub fn poll(&mut self) -> RtResult<()> {
        self.active()?.pump()
    }

    pub fn membership(&mut self, comm: CommRef) -> RtResult<Vec<Rank>> {
        let a = self.active()?;
        a.pump()?;
        Ok(a.history.membership(comm)?)
    }

    pub fn send(&mut self, dst: Rank, tag: i32, payload: &[u8], comm: CommRef) -> RtResult<Status> {
        self.active()?.send(dst, tag, payload, comm)
    }

    pub fn recv(&mut self, src: Rank, tag: i32, comm: CommRef) -> RtResult<(Vec<u8>, Status)> {
        self.active()?.recv(src, tag, comm)
    }

    pub fn barrier(&mut self, comm: CommRef) -> RtResult<Status> {
        self.active()?.barrier(comm)
    }

    /// NULL until a spawn-merge has committed, then the latest merged world.
    pub fn resized_world(&mut self) -> CommRef {
        match self.active() {
            Ok(a) => {
                let _ = a.pump();
                a.history
                    .last_merge(a.history.latest_version())
                    .map(|v| CommRef::at(Family::ResizedWorld, v.version))
                    .unwrap_or(CommRef::NULL)
            }
            Err(_) => CommRef::NULL,
        }
    }

    pub fn comm_parents(&mut self) -> CommRef {
        self.fork_family(Family::Parents)
    }

    pub fn comm_children(&mut self) -> CommRef {
        self.fork_family(Family::Children)
    }

    fn fork_family(&mut self, family: Family) -> CommRef {
        match self.active() {
            Ok(a) => {
                let _ = a.pump();
                a.history
                    .last_fork(a.history.latest_version())
                    .map(|v| CommRef::at(family, v.version))
                    .unwrap_or(CommRef::NULL)
            }
            Err(_) => CommRef::NULL,
        }
    }

    /// Collective over `comm`, which must span the whole current world.
    pub fn comm_spawn(
        &mut self,
        command: &[String],
        maxprocs: u32,
        root: Rank,
        comm: CommRef,
    ) -> RtResult<InterComm> {
        self.active()?.comm_spawn(command, maxprocs, root, comm)
    }

    /// The intercommunicator to the spawning group, for spawned workers.
    pub fn parent_comm(&self) -> Option<InterComm> {
        self.active.as_ref().and_then(|a| a.parent.clone())
    }

    pub fn intercomm_merge(&mut self, inter: &InterComm, high: bool) -> RtResult<CommRef> {
        self.active()?.intercomm_merge(inter, high)
    }

    /// Clone the first `m` ranks. Returns `m` in existing ranks, 0 in the new
    /// ones, and -1 (mismatched m), -2 (m out of range) or -3 (spawn or
    /// restore failure) everywhere on error.
    pub fn fork(&mut self, m: u32) -> RtResult<i32> {
        self.active()?.fork(m)
    }

    pub fn register_state(&mut self, blob: Vec<u8>) -> RtResult<()> {
        self.active()?.user_state = Some(blob);
        Ok(())
    }

    pub fn replace_state(&mut self, blob: Vec<u8>) -> RtResult<()> {
        self.register_state(blob)
    }

    pub fn state(&self) -> Option<&[u8]> {
        self.active.as_ref()?.user_state.as_deref()
    }

    /// State this process was restored with, if it came from an image.
    pub fn inherited_state(&self) -> Option<&[u8]> {
        self.active.as_ref()?.inherited.as_deref()
    }

    pub fn register_hook(&mut self, phase: HookPhase, hook: Hook) {
        match &mut self.active {
            Some(a) => a.hooks.register_hook(phase, hook),
            None => self.hooks.register_hook(phase, hook),
        }
    }

    /// Leave the job. Calling it again is a no-op.
    pub fn finalize(&mut self) -> RtResult<()> {
        if self.finalized {
            return Ok(());
        }
        let Some(mut a) = self.active.take() else {
            return Err(RuntimeError::NotInitialized);
        };
        self.finalized = true;
        let _ = a
            .ctl
            .send(&Message::Control(ControlMsg::Finalize { rank: a.rank }));
        a.ctl.close();
        for (_, w) in a.peers.drain() {
            w.close();
        }
        Ok(())
    }
}

impl Active {
    fn start(env: RuntimeEnv, mut hooks: HookRegistry) -> RtResult<Active> {
        let mut user_state = None;
        let mut inflight = Vec::new();
        let mut metadata = Metadata::new();
        if let Some(path) = &env.restore {
            let image = CheckpointImage::read(path)?;
            let mut overrides = Metadata::new();
            overrides.insert(checkpoint::KEY_RANK.into(), env.rank.to_string());
            overrides.insert(checkpoint::KEY_WORLD_SIZE.into(), env.world_size.to_string());
            overrides.insert(checkpoint::KEY_EPOCH.into(), env.epoch.0.to_string());
            overrides.insert(
                checkpoint::KEY_PENDING.into(),
                if env.pending { "1" } else { "0" }.into(),
            );
            let restored = checkpoint::restore(&image, &overrides)?;
            let (mut state, envs) = decode_rank_payload(&restored.state)?;
            metadata = restored.metadata;
            hooks.run(HookPhase::Restart, &mut metadata, &mut state);
            user_state = Some(state);
            inflight = envs;
        }

        let listener = TcpListener::bind("127.0.0.1:0")?;
        let endpoint = Endpoint::new("127.0.0.1", listener.local_addr()?.port());
        let shared = Arc::new(Shared::default());
        for env in inflight {
            shared.push_envelope(env);
        }
        mailbox::spawn_acceptor(listener, Arc::clone(&shared));

        let (reader, mut ctl) = wire::connect(&env.controller, env.connect_timeout)?.split()?;
        mailbox::spawn_controller_reader(reader, Arc::clone(&shared));
        ctl.send(&Message::Control(ControlMsg::Join {
            rank: env.rank,
            endpoint,
            origin: env.origin,
            pid: std::process::id(),
        }))?;

        let placeholder = WorldHistory::new(WorldView::initial(vec![
            Endpoint::new("0.0.0.0", 0);
            env.world_size as usize
        ]))?;
        let mut active = Active {
            rank: env.rank,
            history: placeholder,
            ctl,
            shared,
            peers: HashMap::new(),
            notices: VecDeque::new(),
            seqs: HashMap::new(),
            released: HashSet::new(),
            replies: VecDeque::new(),
            cleared: HashSet::new(),
            inherited: user_state.clone(),
            user_state,
            fork_child: env.origin == Origin::ForkChild,
            parent: None,
            hooks,
            env,
        };

        active.history = active.wait_for(|a| {
            Ok(a.take_reply(|m| matches!(m, ControlMsg::JoinAck { .. }))
                .map(|m| match m {
                    ControlMsg::JoinAck { history } => history,
                    _ => unreachable!(),
                }))
        })?;

        let mut state = active.user_state.clone().unwrap_or_default();
        if metadata.is_empty() {
            metadata = active.metadata();
        }
        active.hooks.run(HookPhase::Init, &mut metadata, &mut state);

        if active.env.origin == Origin::SpawnedWorker {
            let prev = active.history.latest().size;
            active.parent = Some(InterComm {
                id: active.env.epoch,
                local: (prev..active.env.world_size).collect(),
                remote: (0..prev).collect(),
            });
        }
        if active.env.pending {
            active.wait_commit(active.env.epoch)?;
        }
        tracing::debug!(
            rank = active.rank,
            version = %active.history.latest_version(),
            "initialized"
        );
        Ok(active)
    }

    fn wait_commit(&mut self, epoch: VersionTag) -> RtResult<()> {
        let key = CommRef::at(Family::World, epoch);
        self.ctl.send(&Message::Control(ControlMsg::BarrierEnter {
            comm: key,
            seq: COMMIT_SEQ,
            rank: self.rank,
        }))?;
        self.wait_for(|a| {
            if a.cleared.contains(&epoch) {
                return Err(RuntimeError::Aborted(epoch));
            }
            if a.history.latest_version() >= epoch && a.released.remove(&(key, COMMIT_SEQ)) {
                return Ok(Some(()));
            }
            Ok(None)
        })
    }

    fn metadata(&self) -> Metadata {
        let latest = self.history.latest();
        let mut m = Metadata::new();
        m.insert(checkpoint::KEY_RANK.into(), self.rank.to_string());
        m.insert(checkpoint::KEY_WORLD_SIZE.into(), latest.size.to_string());
        m.insert(checkpoint::KEY_EPOCH.into(), latest.version.0.to_string());
        m.insert(checkpoint::KEY_PENDING.into(), "0".into());
        m.insert(checkpoint::KEY_CONTROLLER.into(), self.env.controller.to_string());
        m.insert(
            checkpoint::KEY_CONFIG.into(),
            self.env
                .config
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        m.insert(checkpoint::KEY_JOBID.into(), self.env.jobid.clone());
        m.insert(checkpoint::KEY_HISTORY.into(), self.history.shape());
        m
    }

    fn send_ctl(&mut self, msg: ControlMsg) -> RtResult<()> {
        self.ctl
            .send(&Message::Control(msg))
            .map_err(|e| RuntimeError::Disconnected(format!("controller: {e}")))
    }

    /// Act on every queued control message.
    fn pump(&mut self) -> RtResult<()> {
        loop {
            let msgs: Vec<ControlMsg> = self.shared.lock().control.drain(..).collect();
            if msgs.is_empty() {
                return Ok(());
            }
            for msg in msgs {
                self.handle_control(msg)?;
            }
        }
    }

    fn handle_control(&mut self, msg: ControlMsg) -> RtResult<()> {
        match msg {
            ControlMsg::WorldResizedNotify { version } => {
                if version > self.history.latest_version() && !self.notices.contains(&version) {
                    self.notices.push_back(version);
                }
            }
            ControlMsg::PendingCleared { version } => {
                self.notices.retain(|v| *v != version);
                self.cleared.insert(version);
            }
            ControlMsg::EpochCommit { view } => {
                let latest = self.history.latest_version();
                if view.version > latest {
                    let v = view.version;
                    self.history
                        .commit_view(view)
                        .map_err(|e| RuntimeError::Disconnected(format!("cannot commit {v}: {e}")))?;
                    tracing::debug!(rank = self.rank, version = %v, "epoch committed");
                }
            }
            ControlMsg::BarrierRelease { comm, seq } => {
                self.released.insert((comm, seq));
            }
            ControlMsg::CkptReq { quiesce, .. } => self.capture(quiesce)?,
            ControlMsg::Halt => {
                tracing::info!(rank = self.rank, "halted after checkpoint");
                self.ctl.close();
                std::process::exit(0);
            }
            reply @ (ControlMsg::JoinAck { .. }
            | ControlMsg::ForkRep { .. }
            | ControlMsg::SpawnRep { .. }
            | ControlMsg::MergeRep { .. }
            | ControlMsg::Error { .. }) => self.replies.push_back(reply),
            other => tracing::debug!("ignoring control message {:#x}", other.kind()),
        }
        Ok(())
    }

    fn take_reply(&mut self, pred: impl Fn(&ControlMsg) -> bool) -> Option<ControlMsg> {
        let idx = self.replies.iter().position(pred)?;
        self.replies.remove(idx)
    }

    fn take_error(&mut self) -> RtResult<()> {
        match self.take_reply(|m| matches!(m, ControlMsg::Error { .. })) {
            Some(ControlMsg::Error { text }) => Err(RuntimeError::Rejected(text)),
            _ => Ok(()),
        }
    }

    /// Block until `poll` yields a value, acting on control traffic meanwhile.
    fn wait_for<T>(&mut self, mut poll: impl FnMut(&mut Active) -> RtResult<Option<T>>) -> RtResult<T> {
        loop {
            let seen = self.shared.lock().generation;
            self.pump()?;
            if let Some(v) = poll(self)? {
                return Ok(v);
            }
            let inbox = self.shared.lock();
            if !inbox.control.is_empty() {
                continue;
            }
            if inbox.controller_closed {
                return Err(RuntimeError::Disconnected("controller link closed".into()));
            }
            drop(inbox);
            self.shared.wait_past(seen, WAIT_SLICE);
        }
    }

    fn take_status(&mut self) -> Status {
        match self.notices.pop_front() {
            Some(_) => Status::WorldResized,
            None => Status::Ok,
        }
    }

    /// Membership of `comm`, checking that `me` and `peer` belong to it.
    fn members_with(&self, comm: CommRef, peer: Option<Rank>) -> RtResult<Vec<Rank>> {
        let members = self.history.membership(comm)?;
        for r in std::iter::once(self.rank).chain(peer) {
            if !members.contains(&r) {
                return Err(RuntimeError::RankOutOfRange { rank: r, comm });
            }
        }
        Ok(members)
    }

    fn peer(&mut self, dst: Rank) -> RtResult<&mut LinkWriter> {
        if !self.peers.contains_key(&dst) {
            let ep = self
                .history
                .endpoint(dst)
                .cloned()
                .ok_or(RuntimeError::RankOutOfRange {
                    rank: dst,
                    comm: CommRef::world(),
                })?;
            let (_, w) = wire::connect(&ep, self.env.connect_timeout)?.split()?;
            self.peers.insert(dst, w);
        }
        Ok(self.peers.get_mut(&dst).expect("just inserted"))
    }

    fn write_envelope(&mut self, env: Envelope) -> RtResult<()> {
        let dst = env.dst;
        let msg = Message::Envelope(env);
        let res = self.peer(dst)?.send(&msg);
        res.map_err(|e| {
            self.peers.remove(&dst);
            RuntimeError::Disconnected(format!("rank {dst}: {e}"))
        })
    }

    fn send(&mut self, dst: Rank, tag: i32, payload: &[u8], comm: CommRef) -> RtResult<Status> {
        if comm.is_null() {
            return Err(RuntimeError::NullCommunicator);
        }
        self.pump()?;
        self.members_with(comm, Some(dst))?;
        if dst == self.rank {
            return Err(RuntimeError::SelfMessage(dst));
        }
        let concrete = self.history.resolve_default_version(comm);
        self.write_envelope(Envelope::new(self.rank, dst, concrete, tag, payload.to_vec()))?;
        Ok(self.take_status())
    }

    fn recv(&mut self, src: Rank, tag: i32, comm: CommRef) -> RtResult<(Vec<u8>, Status)> {
        if comm.is_null() {
            return Err(RuntimeError::NullCommunicator);
        }
        self.pump()?;
        self.members_with(comm, Some(src))?;
        if src == self.rank {
            return Err(RuntimeError::SelfMessage(src));
        }
        let (family, id) = wire_family(comm);
        let payload = self.wait_for(|a| {
            let latest = a.history.latest_version();
            let shared = Arc::clone(&a.shared);
            let mut inbox = shared.lock();
            let idx = inbox.envelopes.iter().position(|e| {
                e.src == src
                    && e.tag == tag
                    && e.family == family
                    && (family != WireFamily::Merged || Some(e.version) == id)
            });
            if let Some(idx) = idx {
                let visible = inbox.envelopes[idx]
                    .required_version()
                    .is_none_or(|v| v <= latest);
                if visible {
                    return Ok(inbox.envelopes.remove(idx).map(|e| e.payload));
                }
                return Ok(None);
            }
            if inbox.closed_peers.contains(&src) {
                return Err(RuntimeError::Disconnected(format!("rank {src} closed its link")));
            }
            Ok(None)
        })?;
        Ok((payload, self.take_status()))
    }

    fn barrier(&mut self, comm: CommRef) -> RtResult<Status> {
        if comm.is_null() {
            return Err(RuntimeError::NullCommunicator);
        }
        self.pump()?;
        self.members_with(comm, None)?;
        let key = self.history.resolve_default_version(comm);
        let seq = {
            let s = self.seqs.entry(key).or_insert(0);
            *s += 1;
            *s
        };
        self.send_ctl(ControlMsg::BarrierEnter {
            comm: key,
            seq,
            rank: self.rank,
        })?;
        self.wait_for(|a| {
            a.take_error()?;
            Ok(a.released.remove(&(key, seq)).then_some(()))
        })?;
        Ok(self.take_status())
    }

    fn comm_spawn(
        &mut self,
        command: &[String],
        maxprocs: u32,
        root: Rank,
        comm: CommRef,
    ) -> RtResult<InterComm> {
        if comm.is_null() {
            return Err(RuntimeError::NullCommunicator);
        }
        self.pump()?;
        let members = self.members_with(comm, Some(root))?;
        if members != self.history.latest().ranks() {
            return Err(RuntimeError::NotCollective(
                "spawn must be called over the whole current world".into(),
            ));
        }
        self.send_ctl(ControlMsg::SpawnReq {
            k: maxprocs,
            command: command.to_vec(),
            root,
            caller: self.rank,
        })?;
        let rep = self.wait_for(|a| {
            a.take_error()?;
            Ok(a.take_reply(|m| matches!(m, ControlMsg::SpawnRep { .. })))
        })?;
        match rep {
            ControlMsg::SpawnRep {
                ok: true,
                id,
                new_ranks,
                ..
            } => Ok(InterComm {
                id,
                local: members,
                remote: new_ranks,
            }),
            ControlMsg::SpawnRep { error, .. } => Err(RuntimeError::SpawnFailed(error)),
            _ => unreachable!(),
        }
    }

    fn intercomm_merge(&mut self, inter: &InterComm, high: bool) -> RtResult<CommRef> {
        self.pump()?;
        self.send_ctl(ControlMsg::MergeReq {
            id: inter.id,
            high,
            rank: self.rank,
        })?;
        let rep = self.wait_for(|a| {
            a.take_error()?;
            Ok(a.take_reply(|m| matches!(m, ControlMsg::MergeRep { .. })))
        })?;
        match rep {
            ControlMsg::MergeRep { ok: true, comm, .. } => {
                if let CommRef::Comm {
                    family: Family::Merged(id),
                    ..
                } = comm
                {
                    // The commit precedes the reply on the control link.
                    debug_assert!(self.history.latest_version() >= id);
                }
                Ok(comm)
            }
            ControlMsg::MergeRep { error, .. } => Err(RuntimeError::NotCollective(error)),
            _ => unreachable!(),
        }
    }

    fn fork(&mut self, m: u32) -> RtResult<i32> {
        if self.fork_child {
            self.fork_child = false;
            return Ok(0);
        }
        self.pump()?;
        self.send_ctl(ControlMsg::ForkReq {
            m,
            caller: self.rank,
            state_ready: self.user_state.is_some(),
        })?;
        let rep = self.wait_for(|a| {
            a.take_error()?;
            Ok(a.take_reply(|m| matches!(m, ControlMsg::ForkRep { .. })))
        })?;
        match rep {
            ControlMsg::ForkRep { code } => Ok(code),
            _ => unreachable!(),
        }
    }

    /// Answer a `CkptReq`. With `quiesce`, first flush every link to this
    /// rank with a marker so the image carries all in-flight envelopes.
    fn capture(&mut self, quiesce: bool) -> RtResult<()> {
        let mut state = self.user_state.clone().unwrap_or_default();
        let mut meta = self.metadata();
        self.hooks.run(HookPhase::PreCheckpoint, &mut meta, &mut state);
        let inflight = if quiesce { self.quiesce()? } else { Vec::new() };
        let image = CheckpointImage {
            format_version: checkpoint::FORMAT_VERSION,
            metadata: meta,
            payload: encode_rank_payload(&state, &inflight),
        };
        self.send_ctl(ControlMsg::CkptImage {
            rank: self.rank,
            image: image.encode(),
        })
    }

    fn quiesce(&mut self) -> RtResult<Vec<Envelope>> {
        let peers: Vec<Rank> = self
            .history
            .latest()
            .ranks()
            .into_iter()
            .filter(|r| *r != self.rank)
            .collect();
        for &p in &peers {
            self.write_envelope(Envelope::marker(self.rank, p))?;
        }
        loop {
            let seen = {
                let mut inbox = self.shared.lock();
                let done = peers.iter().all(|p| {
                    inbox.closed_peers.contains(p)
                        || inbox.envelopes.iter().any(|e| e.is_marker() && e.src == *p)
                });
                if done {
                    inbox.envelopes.retain(|e| !e.is_marker());
                    return Ok(inbox.envelopes.iter().cloned().collect());
                }
                if inbox.controller_closed {
                    return Err(RuntimeError::Disconnected("controller link closed".into()));
                }
                inbox.generation
            };
            self.shared.wait_past(seen, WAIT_SLICE);
        }
    }
}

/// Wire family and, for merged communicators, the id to match on.
fn wire_family(comm: CommRef) -> (WireFamily, Option<u32>) {
    let (family, version) = wire::comm_to_wire(comm);
    (family, (family == WireFamily::Merged).then_some(version))
}
