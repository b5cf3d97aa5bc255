use super::{Decoder, Encoder, WireError, WireResult};
use crate::world::{CommRef, Family, Rank, VersionSel, VersionTag};

/// `version` value meaning "latest committed" on the wire.
pub const LATEST_SENTINEL: u32 = 0xFFFF_FFFF;

/// Communicator family byte. `Marker` is runtime-internal and only used to
/// flush links while quiescing for a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WireFamily {
    World,
    Parents,
    Children,
    ResizedWorld,
    Merged,
    Null,
    Marker,
}

impl WireFamily {
    pub fn code(self) -> u8 {
        match self {
            WireFamily::World => 0,
            WireFamily::Parents => 1,
            WireFamily::Children => 2,
            WireFamily::ResizedWorld => 3,
            WireFamily::Merged => 4,
            WireFamily::Null => 0xFE,
            WireFamily::Marker => 0xFF,
        }
    }

    pub fn from_code(code: u8) -> WireResult<WireFamily> {
        Ok(match code {
            0 => WireFamily::World,
            1 => WireFamily::Parents,
            2 => WireFamily::Children,
            3 => WireFamily::ResizedWorld,
            4 => WireFamily::Merged,
            0xFE => WireFamily::Null,
            0xFF => WireFamily::Marker,
            c => {
                return Err(WireError::MalformedFrame(format!(
                    "unknown communicator family {c}"
                )))
            }
        })
    }
}

/// `(family, version)` pair for a communicator. For `MERGED(id)` the version
/// field carries the id.
pub fn comm_to_wire(comm: CommRef) -> (WireFamily, u32) {
    let sel = |v: VersionSel| match v {
        VersionSel::Latest => LATEST_SENTINEL,
        VersionSel::At(t) => t.0,
    };
    match comm {
        CommRef::Null => (WireFamily::Null, LATEST_SENTINEL),
        CommRef::Comm { family, version } => match family {
            Family::World => (WireFamily::World, sel(version)),
            Family::Parents => (WireFamily::Parents, sel(version)),
            Family::Children => (WireFamily::Children, sel(version)),
            Family::ResizedWorld => (WireFamily::ResizedWorld, sel(version)),
            Family::Merged(id) => (WireFamily::Merged, id.0),
        },
    }
}

pub fn comm_from_wire(family: WireFamily, version: u32) -> WireResult<CommRef> {
    let sel = if version == LATEST_SENTINEL {
        VersionSel::Latest
    } else {
        VersionSel::At(VersionTag(version))
    };
    Ok(match family {
        WireFamily::Null => CommRef::Null,
        WireFamily::World => CommRef::Comm {
            family: Family::World,
            version: sel,
        },
        WireFamily::Parents => CommRef::Comm {
            family: Family::Parents,
            version: sel,
        },
        WireFamily::Children => CommRef::Comm {
            family: Family::Children,
            version: sel,
        },
        WireFamily::ResizedWorld => CommRef::Comm {
            family: Family::ResizedWorld,
            version: sel,
        },
        WireFamily::Merged => {
            if version == LATEST_SENTINEL {
                return Err(WireError::MalformedFrame("MERGED without an id".into()));
            }
            CommRef::at(Family::Merged(VersionTag(version)), VersionTag(version))
        }
        WireFamily::Marker => return Err(WireError::MalformedFrame("marker is not a communicator".into())),
    })
}

pub(crate) fn encode_comm(enc: &mut Encoder, comm: CommRef) {
    let (family, version) = comm_to_wire(comm);
    enc.u8(family.code()).u32(version);
}

pub(crate) fn decode_comm(dec: &mut Decoder<'_>) -> WireResult<CommRef> {
    let family = WireFamily::from_code(dec.u8()?)?;
    let version = dec.u32()?;
    comm_from_wire(family, version)
}

/// Point-to-point payload between two ranks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub src: Rank,
    pub dst: Rank,
    pub family: WireFamily,
    /// Concrete epoch or [`LATEST_SENTINEL`].
    pub version: u32,
    pub tag: i32,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn new(src: Rank, dst: Rank, comm: CommRef, tag: i32, payload: Vec<u8>) -> Envelope {
        let (family, version) = comm_to_wire(comm);
        Envelope {
            src,
            dst,
            family,
            version,
            tag,
            payload,
        }
    }

    pub fn marker(src: Rank, dst: Rank) -> Envelope {
        Envelope {
            src,
            dst,
            family: WireFamily::Marker,
            version: LATEST_SENTINEL,
            tag: 0,
            payload: Vec::new(),
        }
    }

    pub fn is_marker(&self) -> bool {
        self.family == WireFamily::Marker
    }

    pub fn comm(&self) -> WireResult<CommRef> {
        comm_from_wire(self.family, self.version)
    }

    /// Epoch the receiver must have committed before this envelope is visible.
    pub fn required_version(&self) -> Option<VersionTag> {
        (self.version != LATEST_SENTINEL).then_some(VersionTag(self.version))
    }

    pub fn encode_into(&self, enc: &mut Encoder) {
        enc.u32(self.src)
            .u32(self.dst)
            .u8(self.family.code())
            .u32(self.version)
            .i32(self.tag)
            .bytes(&self.payload);
    }

    pub fn decode_from(dec: &mut Decoder<'_>) -> WireResult<Envelope> {
        Ok(Envelope {
            src: dec.u32()?,
            dst: dec.u32()?,
            family: WireFamily::from_code(dec.u8()?)?,
            version: dec.u32()?,
            tag: dec.i32()?,
            payload: dec.bytes()?,
        })
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc);
        enc.finish()
    }

    pub fn decode_body(body: &[u8]) -> WireResult<Envelope> {
        let mut dec = Decoder::new(body);
        let env = Envelope::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(env)
    }
}
