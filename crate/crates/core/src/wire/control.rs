//! Control messages exchanged between ranks, daemons and operator clients.
//!
//! Request/response pairing:
//!
//! | request            | response                      |
//! |--------------------|-------------------------------|
//! | `Join`             | `JoinAck`                     |
//! | `ResizeReq`, `SpawnMergeReq`, `CheckpointReq` | `OpReply` |
//! | `ForkReq`          | `ForkRep`                     |
//! | `SpawnReq`         | `SpawnRep`                    |
//! | `MergeReq`         | `MergeRep`                    |
//! | `CkptReq`          | `CkptImage`                   |
//! | `BarrierEnter`     | `BarrierRelease`              |
//! | `StatusReq`        | `StatusRep`                   |
//! | `HeadHello`        | `HeadAck`                     |
//! | `FaultHello`       | `FaultGo`                     |
//!
//! Fire-and-forget: `WorldResizedNotify`, `PendingCleared`, `EpochCommit`,
//! `Finalize`, `Halt`, `Error`, `SpawnFaults`, `FaultRegistered`,
//! `RankExit`, `LaunchFailed`, `Shutdown`. `BarrierRelease` doubles as the
//! barrier response and is never acknowledged.

use std::fmt;

use super::envelope::{decode_comm, encode_comm};
use super::{Decoder, Encoder, Frame, WireError, WireResult};
use crate::world::{CommRef, Endpoint, Rank, Transition, VersionTag, WorldHistory, WorldView};

/// How a rank process came to exist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    /// Part of the initial launch.
    Launched,
    /// Fresh process added by a grow; blocks in init until the commit.
    GrowNew,
    /// Restored from a whole-world checkpoint.
    Restored,
    /// Restored from a clone source's image during a fork.
    ForkChild,
    /// Started by a spawn; joins the world through an intercommunicator merge.
    SpawnedWorker,
}

impl Origin {
    pub fn code(self) -> u8 {
        match self {
            Origin::Launched => 0,
            Origin::GrowNew => 1,
            Origin::Restored => 2,
            Origin::ForkChild => 3,
            Origin::SpawnedWorker => 4,
        }
    }

    pub fn from_code(code: u8) -> WireResult<Origin> {
        Ok(match code {
            0 => Origin::Launched,
            1 => Origin::GrowNew,
            2 => Origin::Restored,
            3 => Origin::ForkChild,
            4 => Origin::SpawnedWorker,
            c => return Err(WireError::MalformedFrame(format!("bad origin {c}"))),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Launched => "launched",
            Origin::GrowNew => "grow",
            Origin::Restored => "restored",
            Origin::ForkChild => "fork",
            Origin::SpawnedWorker => "spawned",
        }
    }

    pub fn parse(s: &str) -> Option<Origin> {
        Some(match s {
            "launched" => Origin::Launched,
            "grow" => Origin::GrowNew,
            "restored" => Origin::Restored,
            "fork" => Origin::ForkChild,
            "spawned" => Origin::SpawnedWorker,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PlanKind {
    Grow,
    Fork,
    SpawnMerge,
}

impl PlanKind {
    fn code(self) -> u8 {
        match self {
            PlanKind::Grow => 0,
            PlanKind::Fork => 1,
            PlanKind::SpawnMerge => 2,
        }
    }

    fn from_code(code: u8) -> WireResult<PlanKind> {
        Ok(match code {
            0 => PlanKind::Grow,
            1 => PlanKind::Fork,
            2 => PlanKind::SpawnMerge,
            c => return Err(WireError::MalformedFrame(format!("bad plan kind {c}"))),
        })
    }
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanKind::Grow => "GROW",
            PlanKind::Fork => "FORK",
            PlanKind::SpawnMerge => "SPAWN_MERGE",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LaunchTier {
    Controller,
    Head,
    Fault,
    Rank,
}

impl LaunchTier {
    fn code(self) -> u8 {
        match self {
            LaunchTier::Controller => 0,
            LaunchTier::Head => 1,
            LaunchTier::Fault => 2,
            LaunchTier::Rank => 3,
        }
    }

    fn from_code(code: u8) -> WireResult<LaunchTier> {
        Ok(match code {
            0 => LaunchTier::Controller,
            1 => LaunchTier::Head,
            2 => LaunchTier::Fault,
            3 => LaunchTier::Rank,
            c => return Err(WireError::MalformedFrame(format!("bad tier {c}"))),
        })
    }
}

impl fmt::Display for LaunchTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LaunchTier::Controller => "controller",
            LaunchTier::Head => "head",
            LaunchTier::Fault => "fault",
            LaunchTier::Rank => "rank",
        })
    }
}

/// Everything a fault daemon needs to start one rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LaunchSpec {
    pub rank: Rank,
    pub node: u32,
    /// argv; the first element is the executable.
    pub argv: Vec<String>,
    pub env: Vec<(String, String)>,
}

impl LaunchSpec {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.u32(self.rank).u32(self.node).strs(&self.argv);
        enc.u32(self.env.len() as u32);
        for (k, v) in &self.env {
            enc.str(k).str(v);
        }
    }

    fn decode_from(dec: &mut Decoder<'_>) -> WireResult<LaunchSpec> {
        let rank = dec.u32()?;
        let node = dec.u32()?;
        let argv = dec.strs()?;
        let n = dec.u32()?;
        dec.bounded(n, 8)?;
        let env = (0..n)
            .map(|_| Ok((dec.str()?, dec.str()?)))
            .collect::<WireResult<_>>()?;
        Ok(LaunchSpec {
            rank,
            node,
            argv,
            env,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Liveness {
    Starting,
    Up,
    Exited(i32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankStatus {
    pub rank: Rank,
    pub node: u32,
    pub liveness: Liveness,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingStatus {
    pub kind: PlanKind,
    pub m: u32,
    /// Participants (old and new) that reached the commit point.
    pub joined: u32,
    pub total: u32,
}

/// Controller summary returned by `StatusRep`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatusReport {
    pub version: VersionTag,
    pub size: u32,
    pub pending: Option<PendingStatus>,
    pub checkpoint_pending: bool,
    pub ranks: Vec<RankStatus>,
}

impl fmt::Display for StatusReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "version {} size {} pending ", self.version, self.size)?;
        match &self.pending {
            None => write!(f, "none")?,
            Some(p) => write!(f, "{} m={} joined {}/{}", p.kind, p.m, p.joined, p.total)?,
        }
        if self.checkpoint_pending {
            write!(f, " checkpoint pending")?;
        }
        write!(f, "\nranks")?;
        for r in &self.ranks {
            match r.liveness {
                Liveness::Starting => write!(f, " {}:starting", r.rank)?,
                Liveness::Up => write!(f, " {}:up", r.rank)?,
                Liveness::Exited(code) => write!(f, " {}:exited({code})", r.rank)?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ControlMsg {
    Join {
        rank: Rank,
        endpoint: Endpoint,
        origin: Origin,
        pid: u32,
    },
    JoinAck {
        history: WorldHistory,
    },
    ResizeReq {
        m: u32,
    },
    SpawnMergeReq {
        k: u32,
        command: Vec<String>,
    },
    CheckpointReq {
        halt: bool,
        timeout_ms: u32,
    },
    OpReply {
        ok: bool,
        text: String,
    },
    ForkReq {
        m: u32,
        caller: Rank,
        state_ready: bool,
    },
    ForkRep {
        code: i32,
    },
    SpawnReq {
        k: u32,
        command: Vec<String>,
        root: Rank,
        caller: Rank,
    },
    SpawnRep {
        ok: bool,
        id: VersionTag,
        new_ranks: Vec<Rank>,
        error: String,
    },
    MergeReq {
        id: VersionTag,
        high: bool,
        rank: Rank,
    },
    MergeRep {
        ok: bool,
        comm: CommRef,
        error: String,
    },
    CkptReq {
        rank: Rank,
        /// Quiesce links first (whole-world checkpoint) rather than just
        /// capturing the rank's state (fork).
        quiesce: bool,
    },
    CkptImage {
        rank: Rank,
        image: Vec<u8>,
    },
    EpochCommit {
        view: WorldView,
    },
    WorldResizedNotify {
        version: VersionTag,
    },
    PendingCleared {
        version: VersionTag,
    },
    BarrierEnter {
        comm: CommRef,
        seq: u32,
        rank: Rank,
    },
    BarrierRelease {
        comm: CommRef,
        seq: u32,
    },
    StatusReq,
    StatusRep(StatusReport),
    Finalize {
        rank: Rank,
    },
    Halt,
    Error {
        text: String,
    },
    HeadHello {
        node: u32,
    },
    HeadAck,
    SpawnFaults {
        specs: Vec<LaunchSpec>,
    },
    FaultHello {
        rank: Rank,
    },
    FaultGo {
        spec: LaunchSpec,
    },
    FaultRegistered {
        rank: Rank,
        node: u32,
    },
    RankExit {
        rank: Rank,
        code: i32,
    },
    LaunchFailed {
        tier: LaunchTier,
        rank: Rank,
        reason: String,
    },
    Shutdown,
}

fn encode_view(enc: &mut Encoder, view: &WorldView) {
    enc.u32(view.version.0)
        .u32(view.size)
        .u32(view.prev_size)
        .u8(view.transition.code());
    enc.u32(view.endpoints.len() as u32);
    for ep in &view.endpoints {
        enc.str(&ep.host).u16(ep.port);
    }
}

fn decode_view(dec: &mut Decoder<'_>) -> WireResult<WorldView> {
    let version = VersionTag(dec.u32()?);
    let size = dec.u32()?;
    let prev_size = dec.u32()?;
    let code = dec.u8()?;
    let transition = Transition::from_code(code)
        .ok_or_else(|| WireError::MalformedFrame(format!("bad transition {code}")))?;
    let n = dec.u32()?;
    dec.bounded(n, 6)?;
    let endpoints = (0..n)
        .map(|_| Ok(Endpoint::new(dec.str()?, dec.u16()?)))
        .collect::<WireResult<_>>()?;
    Ok(WorldView {
        version,
        size,
        endpoints,
        transition,
        prev_size,
    })
}

fn encode_status(enc: &mut Encoder, s: &StatusReport) {
    enc.u32(s.version.0).u32(s.size);
    match &s.pending {
        None => {
            enc.u8(0);
        }
        Some(p) => {
            enc.u8(1).u8(p.kind.code()).u32(p.m).u32(p.joined).u32(p.total);
        }
    }
    enc.bool(s.checkpoint_pending);
    enc.u32(s.ranks.len() as u32);
    for r in &s.ranks {
        enc.u32(r.rank).u32(r.node);
        match r.liveness {
            Liveness::Starting => enc.u8(0).i32(0),
            Liveness::Up => enc.u8(1).i32(0),
            Liveness::Exited(code) => enc.u8(2).i32(code),
        };
    }
}

fn decode_status(dec: &mut Decoder<'_>) -> WireResult<StatusReport> {
    let version = VersionTag(dec.u32()?);
    let size = dec.u32()?;
    let pending = match dec.u8()? {
        0 => None,
        1 => Some(PendingStatus {
            kind: PlanKind::from_code(dec.u8()?)?,
            m: dec.u32()?,
            joined: dec.u32()?,
            total: dec.u32()?,
        }),
        b => return Err(WireError::MalformedFrame(format!("bad pending flag {b}"))),
    };
    let checkpoint_pending = dec.bool()?;
    let n = dec.u32()?;
    dec.bounded(n, 13)?;
    let ranks = (0..n)
        .map(|_| {
            let rank = dec.u32()?;
            let node = dec.u32()?;
            let tag = dec.u8()?;
            let code = dec.i32()?;
            let liveness = match tag {
                0 => Liveness::Starting,
                1 => Liveness::Up,
                2 => Liveness::Exited(code),
                b => return Err(WireError::MalformedFrame(format!("bad liveness {b}"))),
            };
            Ok(RankStatus { rank, node, liveness })
        })
        .collect::<WireResult<_>>()?;
    Ok(StatusReport {
        version,
        size,
        pending,
        checkpoint_pending,
        ranks,
    })
}

impl ControlMsg {
    pub fn kind(&self) -> u8 {
        use ControlMsg::*;
        match self {
            Join { .. } => 0x10,
            JoinAck { .. } => 0x11,
            ResizeReq { .. } => 0x12,
            SpawnMergeReq { .. } => 0x13,
            CheckpointReq { .. } => 0x14,
            OpReply { .. } => 0x15,
            ForkReq { .. } => 0x16,
            ForkRep { .. } => 0x17,
            SpawnReq { .. } => 0x18,
            SpawnRep { .. } => 0x19,
            MergeReq { .. } => 0x1A,
            MergeRep { .. } => 0x1B,
            CkptReq { .. } => 0x1C,
            CkptImage { .. } => 0x1D,
            EpochCommit { .. } => 0x1E,
            WorldResizedNotify { .. } => 0x1F,
            PendingCleared { .. } => 0x20,
            BarrierEnter { .. } => 0x21,
            BarrierRelease { .. } => 0x22,
            StatusReq => 0x23,
            StatusRep(_) => 0x24,
            Finalize { .. } => 0x25,
            Halt => 0x26,
            Error { .. } => 0x27,
            HeadHello { .. } => 0x30,
            HeadAck => 0x31,
            SpawnFaults { .. } => 0x32,
            FaultHello { .. } => 0x33,
            FaultGo { .. } => 0x34,
            FaultRegistered { .. } => 0x35,
            RankExit { .. } => 0x36,
            LaunchFailed { .. } => 0x37,
            Shutdown => 0x38,
        }
    }

    pub fn to_frame(&self) -> Frame {
        use ControlMsg::*;
        let mut enc = Encoder::new();
        match self {
            Join {
                rank,
                endpoint,
                origin,
                pid,
            } => {
                enc.u32(*rank)
                    .str(&endpoint.host)
                    .u16(endpoint.port)
                    .u8(origin.code())
                    .u32(*pid);
            }
            JoinAck { history } => {
                enc.u32(history.len() as u32);
                for v in history.views() {
                    encode_view(&mut enc, v);
                }
            }
            ResizeReq { m } => {
                enc.u32(*m);
            }
            SpawnMergeReq { k, command } => {
                enc.u32(*k).strs(command);
            }
            CheckpointReq { halt, timeout_ms } => {
                enc.bool(*halt).u32(*timeout_ms);
            }
            OpReply { ok, text } => {
                enc.bool(*ok).str(text);
            }
            ForkReq {
                m,
                caller,
                state_ready,
            } => {
                enc.u32(*m).u32(*caller).bool(*state_ready);
            }
            ForkRep { code } => {
                enc.i32(*code);
            }
            SpawnReq {
                k,
                command,
                root,
                caller,
            } => {
                enc.u32(*k).strs(command).u32(*root).u32(*caller);
            }
            SpawnRep {
                ok,
                id,
                new_ranks,
                error,
            } => {
                enc.bool(*ok).u32(id.0).u32s(new_ranks).str(error);
            }
            MergeReq { id, high, rank } => {
                enc.u32(id.0).bool(*high).u32(*rank);
            }
            MergeRep { ok, comm, error } => {
                enc.bool(*ok);
                encode_comm(&mut enc, *comm);
                enc.str(error);
            }
            CkptReq { rank, quiesce } => {
                enc.u32(*rank).bool(*quiesce);
            }
            CkptImage { rank, image } => {
                enc.u32(*rank).bytes(image);
            }
            EpochCommit { view } => encode_view(&mut enc, view),
            WorldResizedNotify { version } | PendingCleared { version } => {
                enc.u32(version.0);
            }
            BarrierEnter { comm, seq, rank } => {
                encode_comm(&mut enc, *comm);
                enc.u32(*seq).u32(*rank);
            }
            BarrierRelease { comm, seq } => {
                encode_comm(&mut enc, *comm);
                enc.u32(*seq);
            }
            StatusReq | Halt | HeadAck | Shutdown => {}
            StatusRep(report) => encode_status(&mut enc, report),
            Finalize { rank } | FaultHello { rank } => {
                enc.u32(*rank);
            }
            Error { text } => {
                enc.str(text);
            }
            HeadHello { node } => {
                enc.u32(*node);
            }
            SpawnFaults { specs } => {
                enc.u32(specs.len() as u32);
                for s in specs {
                    s.encode_into(&mut enc);
                }
            }
            FaultGo { spec } => spec.encode_into(&mut enc),
            FaultRegistered { rank, node } => {
                enc.u32(*rank).u32(*node);
            }
            RankExit { rank, code } => {
                enc.u32(*rank).i32(*code);
            }
            LaunchFailed { tier, rank, reason } => {
                enc.u8(tier.code()).u32(*rank).str(reason);
            }
        }
        Frame {
            kind: self.kind(),
            body: enc.finish(),
        }
    }

    pub fn from_frame(frame: &Frame) -> WireResult<ControlMsg> {
        use ControlMsg::*;
        let mut dec = Decoder::new(&frame.body);
        let msg = match frame.kind {
            0x10 => Join {
                rank: dec.u32()?,
                endpoint: Endpoint::new(dec.str()?, dec.u16()?),
                origin: Origin::from_code(dec.u8()?)?,
                pid: dec.u32()?,
            },
            0x11 => {
                let n = dec.u32()?;
                dec.bounded(n, 17)?;
                let views = (0..n)
                    .map(|_| decode_view(&mut dec))
                    .collect::<WireResult<Vec<_>>>()?;
                let history = WorldHistory::from_views(views)
                    .map_err(|e| WireError::MalformedFrame(format!("bad history: {e}")))?;
                JoinAck { history }
            }
            0x12 => ResizeReq { m: dec.u32()? },
            0x13 => SpawnMergeReq {
                k: dec.u32()?,
                command: dec.strs()?,
            },
            0x14 => CheckpointReq {
                halt: dec.bool()?,
                timeout_ms: dec.u32()?,
            },
            0x15 => OpReply {
                ok: dec.bool()?,
                text: dec.str()?,
            },
            0x16 => ForkReq {
                m: dec.u32()?,
                caller: dec.u32()?,
                state_ready: dec.bool()?,
            },
            0x17 => ForkRep { code: dec.i32()? },
            0x18 => SpawnReq {
                k: dec.u32()?,
                command: dec.strs()?,
                root: dec.u32()?,
                caller: dec.u32()?,
            },
            0x19 => SpawnRep {
                ok: dec.bool()?,
                id: VersionTag(dec.u32()?),
                new_ranks: dec.u32s()?,
                error: dec.str()?,
            },
            0x1A => MergeReq {
                id: VersionTag(dec.u32()?),
                high: dec.bool()?,
                rank: dec.u32()?,
            },
            0x1B => MergeRep {
                ok: dec.bool()?,
                comm: decode_comm(&mut dec)?,
                error: dec.str()?,
            },
            0x1C => CkptReq {
                rank: dec.u32()?,
                quiesce: dec.bool()?,
            },
            0x1D => CkptImage {
                rank: dec.u32()?,
                image: dec.bytes()?,
            },
            0x1E => EpochCommit {
                view: decode_view(&mut dec)?,
            },
            0x1F => WorldResizedNotify {
                version: VersionTag(dec.u32()?),
            },
            0x20 => PendingCleared {
                version: VersionTag(dec.u32()?),
            },
            0x21 => BarrierEnter {
                comm: decode_comm(&mut dec)?,
                seq: dec.u32()?,
                rank: dec.u32()?,
            },
            0x22 => BarrierRelease {
                comm: decode_comm(&mut dec)?,
                seq: dec.u32()?,
            },
            0x23 => StatusReq,
            0x24 => StatusRep(decode_status(&mut dec)?),
            0x25 => Finalize { rank: dec.u32()? },
            0x26 => Halt,
            0x27 => Error { text: dec.str()? },
            0x30 => HeadHello { node: dec.u32()? },
            0x31 => HeadAck,
            0x32 => {
                let n = dec.u32()?;
                dec.bounded(n, 16)?;
                let specs = (0..n)
                    .map(|_| LaunchSpec::decode_from(&mut dec))
                    .collect::<WireResult<_>>()?;
                SpawnFaults { specs }
            }
            0x33 => FaultHello { rank: dec.u32()? },
            0x34 => FaultGo {
                spec: LaunchSpec::decode_from(&mut dec)?,
            },
            0x35 => FaultRegistered {
                rank: dec.u32()?,
                node: dec.u32()?,
            },
            0x36 => RankExit {
                rank: dec.u32()?,
                code: dec.i32()?,
            },
            0x37 => LaunchFailed {
                tier: LaunchTier::from_code(dec.u8()?)?,
                rank: dec.u32()?,
                reason: dec.str()?,
            },
            0x38 => Shutdown,
            other => return Err(WireError::UnknownKind(other)),
        };
        dec.finish()?;
        Ok(msg)
    }
}
