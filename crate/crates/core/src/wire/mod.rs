//! Length-prefixed binary framing shared by application envelopes and daemon
//! control traffic.
//!
//! Every frame is `len: u32 LE | kind: u8 | body`, where `len` counts the kind
//! byte plus the body. All integers are little-endian and fixed width;
//! strings and byte strings carry a `u32` length prefix.

mod codec;
mod control;
mod envelope;
mod link;

pub use codec::{Decoder, Encoder};
pub use control::{
    ControlMsg, LaunchSpec, LaunchTier, Liveness, Origin, PendingStatus, PlanKind, RankStatus, StatusReport,
};
pub use envelope::{comm_from_wire, comm_to_wire, Envelope, WireFamily, LATEST_SENTINEL};
pub use link::{connect, Link, LinkReader, LinkWriter};

use std::io::{self, Read, Write};

use thiserror::Error;

/// Frames above this size are refused unless a different cap is configured.
pub const DEFAULT_MAX_FRAME: u32 = 64 * 1024 * 1024;

pub const KIND_ENVELOPE: u8 = 0x01;

/// Barrier sequence number a joining rank uses to enter the commit barrier
/// of the epoch it is waiting for.
pub const COMMIT_SEQ: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error("frame of {len} bytes exceeds the {cap} byte cap")]
    Oversize { len: u32, cap: u32 },
    #[error("timed out connecting to {0}")]
    ConnectTimeout(String),
    #[error("connection to {0} refused")]
    Refused(String),
    #[error("link closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type WireResult<T> = Result<T, WireError>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.body.len());
        out.extend_from_slice(&(1 + self.body.len() as u32).to_le_bytes());
        out.push(self.kind);
        out.extend_from_slice(&self.body);
        out
    }

    /// Decode one frame from the front of `buf`, returning it and the number
    /// of bytes consumed.
    pub fn decode(buf: &[u8], cap: u32) -> WireResult<(Frame, usize)> {
        if buf.len() < 4 {
            return Err(WireError::MalformedFrame(format!(
                "{} bytes is too short for a length prefix",
                buf.len()
            )));
        }
        let len = u32::from_le_bytes(buf[..4].try_into().unwrap());
        check_len(len, cap)?;
        let end = 4 + len as usize;
        if buf.len() < end {
            return Err(WireError::MalformedFrame(format!(
                "declared length {len} but only {} bytes follow",
                buf.len() - 4
            )));
        }
        Ok((
            Frame {
                kind: buf[4],
                body: buf[5..end].to_vec(),
            },
            end,
        ))
    }
}

fn check_len(len: u32, cap: u32) -> WireResult<()> {
    if len == 0 {
        return Err(WireError::MalformedFrame("zero-length frame".into()));
    }
    if len > cap {
        return Err(WireError::Oversize { len, cap });
    }
    Ok(())
}

/// Read a frame from a stream. `Ok(None)` means the peer closed cleanly
/// between frames.
pub fn read_frame<R: Read>(r: &mut R, cap: u32) -> WireResult<Option<Frame>> {
    let mut len_buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len_buf[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(WireError::MalformedFrame(
                    "stream ended inside a length prefix".into(),
                ))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len_buf);
    check_len(len, cap)?;
    let mut rest = vec![0u8; len as usize];
    r.read_exact(&mut rest).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            WireError::MalformedFrame(format!("stream ended inside a {len} byte frame"))
        } else {
            WireError::Io(e)
        }
    })?;
    let kind = rest[0];
    rest.remove(0);
    Ok(Some(Frame { kind, body: rest }))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> WireResult<()> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

/// Anything that can travel on a link.
#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Envelope(Envelope),
    Control(ControlMsg),
}

impl Message {
    pub fn to_frame(&self) -> Frame {
        match self {
            Message::Envelope(env) => Frame {
                kind: KIND_ENVELOPE,
                body: env.encode_body(),
            },
            Message::Control(msg) => msg.to_frame(),
        }
    }

    pub fn from_frame(frame: &Frame) -> WireResult<Message> {
        if frame.kind == KIND_ENVELOPE {
            Envelope::decode_body(&frame.body).map(Message::Envelope)
        } else {
            ControlMsg::from_frame(frame).map(Message::Control)
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        self.to_frame().encode()
    }

    pub fn decode(buf: &[u8]) -> WireResult<Message> {
        let (frame, used) = Frame::decode(buf, DEFAULT_MAX_FRAME)?;
        if used != buf.len() {
            return Err(WireError::MalformedFrame(format!(
                "{} trailing bytes after frame",
                buf.len() - used
            )));
        }
        Message::from_frame(&frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_frame_is_malformed() {
        // declared length 10, only 6 bytes of body on the wire
        let mut buf = 10u32.to_le_bytes().to_vec();
        buf.extend_from_slice(&[0x12, 1, 2, 3, 4, 5]);
        assert!(matches!(
            Frame::decode(&buf, DEFAULT_MAX_FRAME),
            Err(WireError::MalformedFrame(_))
        ));
        let mut cursor = io::Cursor::new(buf);
        assert!(matches!(
            read_frame(&mut cursor, DEFAULT_MAX_FRAME),
            Err(WireError::MalformedFrame(_))
        ));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let frame = Frame {
            kind: 0xEE,
            body: vec![],
        };
        assert!(matches!(
            Message::decode(&frame.encode()),
            Err(WireError::UnknownKind(0xEE))
        ));
    }

    #[test]
    fn oversize_is_rejected_before_reading_body() {
        let buf = (1u32 << 20).to_le_bytes();
        let mut cursor = io::Cursor::new(buf.to_vec());
        assert!(matches!(
            read_frame(&mut cursor, 1024),
            Err(WireError::Oversize { len, cap: 1024 }) if len == 1 << 20
        ));
    }

    #[test]
    fn clean_eof_between_frames() {
        let mut cursor = io::Cursor::new(Vec::<u8>::new());
        assert!(read_frame(&mut cursor, DEFAULT_MAX_FRAME).unwrap().is_none());
    }

    #[test]
    fn length_counts_kind_byte() {
        let frame = Frame {
            kind: 7,
            body: vec![9, 9, 9],
        };
        let bytes = frame.encode();
        assert_eq!(&bytes[..4], &4u32.to_le_bytes());
        assert_eq!(bytes[4], 7);
    }
}
