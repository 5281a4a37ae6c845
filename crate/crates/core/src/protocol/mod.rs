//! Messages exchanged between device and server, their wire encoding, and
//! the two state machines.
//!
//! Framing: `u8 tag`, `u32 payload length`, payload. All integers are
//! little-endian.

mod client;
mod server;

pub use client::{client_loop, naive_client_loop, receive_init, ClientConfig, ClientLink, ClientOutcome};
pub use server::{server_loop, Server, ServerEvent, ServerTransport};

use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::model::{ModelError, WeightDelta};
use crate::scheduler::MetricRangeError;
use crate::videogen::Frame;
use crate::wire::{DecodeError, Reader};

pub const HEADER_LEN: usize = 5;
/// Largest payload a peer will accept.
pub const MAX_PAYLOAD: usize = 1 << 28;

/// How the device obtains its predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Adaptive key frames with online distillation.
    ShadowTutor,
    /// Every frame is labelled by the server.
    Naive,
    /// Key frames at a constant stride.
    FixedStride(usize),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::ShadowTutor => f.write_str("shadowtutor"),
            Strategy::Naive => f.write_str("naive"),
            Strategy::FixedStride(s) => write!(f, "fixed-stride:{s}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;

    /// `shadowtutor`, `naive`, `fixed-stride` (stride 8) or `fixed-stride:N`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shadowtutor" => Ok(Strategy::ShadowTutor),
            "naive" => Ok(Strategy::Naive),
            "fixed-stride" => Ok(Strategy::FixedStride(8)),
            _ => s
                .strip_prefix("fixed-stride:")
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n > 0)
                .map(Strategy::FixedStride)
                .ok_or_else(|| format!("unknown strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Tag {
    InitStudent = 1,
    KeyFrame = 2,
    StudentUpdate = 3,
    NaiveFrame = 4,
    NaivePrediction = 5,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Full checkpoint image of the starting student.
    InitStudent { checkpoint: Vec<u8> },
    KeyFrame { index: u64, frame: Frame },
    StudentUpdate { metric: f32, delta: WeightDelta },
    NaiveFrame { index: u64, frame: Frame },
    /// Teacher class ids, row-major, for the frame with this index.
    NaivePrediction { index: u64, labels: Vec<u8> },
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricRangeError),
    #[error("peer closed the connection")]
    Closed,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unexpected {0} message")]
    Unexpected(&'static str),
}

impl Message {
    pub fn tag(&self) -> Tag {
        match self {
            Message::InitStudent { .. } => Tag::InitStudent,
            Message::KeyFrame { .. } => Tag::KeyFrame,
            Message::StudentUpdate { .. } => Tag::StudentUpdate,
            Message::NaiveFrame { .. } => Tag::NaiveFrame,
            Message::NaivePrediction { .. } => Tag::NaivePrediction,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.tag() {
            Tag::InitStudent => "InitStudent",
            Tag::KeyFrame => "KeyFrame",
            Tag::StudentUpdate => "StudentUpdate",
            Tag::NaiveFrame => "NaiveFrame",
            Tag::NaivePrediction => "NaivePrediction",
        }
    }

    pub fn payload_len(&self) -> usize {
        match self {
            Message::InitStudent { checkpoint } => checkpoint.len(),
            Message::KeyFrame { frame, .. } | Message::NaiveFrame { frame, .. } => 8 + 5 + frame.byte_len(),
            Message::StudentUpdate { delta, .. } => 4 + delta.encoded_len(),
            Message::NaivePrediction { labels, .. } => 8 + labels.len(),
        }
    }

    /// Header plus payload.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.tag() as u8);
        out.extend_from_slice(&(self.payload_len() as u32).to_le_bytes());
        match self {
            Message::InitStudent { checkpoint } => out.extend_from_slice(checkpoint),
            Message::KeyFrame { index, frame } | Message::NaiveFrame { index, frame } => {
                out.extend_from_slice(&index.to_le_bytes());
                out.extend_from_slice(&(frame.height() as u16).to_le_bytes());
                out.extend_from_slice(&(frame.width() as u16).to_le_bytes());
                out.push(frame.channels() as u8);
                out.extend_from_slice(frame.pixels());
            }
            Message::StudentUpdate { metric, delta } => {
                out.extend_from_slice(&metric.to_le_bytes());
                delta.encode(&mut out);
            }
            Message::NaivePrediction { index, labels } => {
                out.extend_from_slice(&index.to_le_bytes());
                out.extend_from_slice(labels);
            }
        }
        debug_assert_eq!(out.len(), self.encoded_len());
        out
    }

    /// Decodes exactly one framed message occupying all of `buf`.
    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(buf);
        let tag = r.u8()?;
        let declared = r.u32()? as usize;
        let actual = r.remaining();
        if actual < declared {
            return Err(DecodeError::Truncated { needed: declared, available: actual });
        }
        if actual > declared {
            return Err(DecodeError::LengthMismatch { declared, actual });
        }
        Self::decode_payload(tag, r.bytes(declared)?)
    }

    fn decode_payload(tag: u8, payload: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(payload);
        let msg = match tag {
            1 => return Ok(Message::InitStudent { checkpoint: payload.to_vec() }),
            2 | 4 => {
                let index = r.u64()?;
                let (h, w, c) = (r.u16()? as usize, r.u16()? as usize, r.u8()? as usize);
                let pixels = r.bytes(r.remaining())?.to_vec();
                let frame = Frame::new(h, w, c, pixels).map_err(|e| DecodeError::Invalid(e.to_string()))?;
                if tag == 2 {
                    Message::KeyFrame { index, frame }
                } else {
                    Message::NaiveFrame { index, frame }
                }
            }
            3 => {
                let metric = r.f32()?;
                let delta = WeightDelta::decode(&mut r)?;
                Message::StudentUpdate { metric, delta }
            }
            5 => {
                let index = r.u64()?;
                Message::NaivePrediction { index, labels: r.bytes(r.remaining())?.to_vec() }
            }
            other => return Err(DecodeError::UnknownTag(other)),
        };
        r.finish()?;
        Ok(msg)
    }
}

/// Writes one framed message.
pub fn write_message<W: Write>(out: &mut W, msg: &Message) -> io::Result<Vec<u8>> {
    let bytes = msg.encode();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(bytes)
}

/// Reads one framed message; `Ok(None)` on a clean end of stream between
/// messages.
pub fn read_message<R: Read>(input: &mut R) -> Result<Option<(Message, Vec<u8>)>, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match input.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(DecodeError::Truncated { needed: HEADER_LEN, available: got }.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(header[1..5].try_into().expect("4 bytes")) as usize;
    if !(1..=5).contains(&header[0]) {
        return Err(DecodeError::UnknownTag(header[0]).into());
    }
    if len > MAX_PAYLOAD {
        return Err(DecodeError::Invalid(format!("payload of {len} bytes exceeds limit")).into());
    }
    let mut buf = header.to_vec();
    buf.resize(HEADER_LEN + len, 0);
    input.read_exact(&mut buf[HEADER_LEN..]).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Decode(DecodeError::Truncated { needed: len, available: 0 }),
        _ => ProtocolError::Io(e),
    })?;
    let msg = Message::decode(&buf)?;
    Ok(Some((msg, buf)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeltaEntry;

    fn frame4() -> Frame {
        Frame::new(4, 4, 3, (0..48).collect()).unwrap()
    }

    fn samples() -> Vec<Message> {
        vec![
            Message::InitStudent { checkpoint: b"STUT\x01\x00".to_vec() },
            Message::KeyFrame { index: 7, frame: frame4() },
            Message::StudentUpdate {
                metric: 0.8125,
                delta: WeightDelta { entries: vec![DeltaEntry { id: 9, dims: vec![3], values: vec![1.0, -0.5, 2.0] }] },
            },
            Message::NaiveFrame { index: u64::MAX, frame: frame4() },
            Message::NaivePrediction { index: 3, labels: vec![0, 1, 2, 3] },
        ]
    }

    #[test]
    fn strategy_names() {
        for s in [Strategy::ShadowTutor, Strategy::Naive, Strategy::FixedStride(16)] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("fixed-stride".parse::<Strategy>().unwrap(), Strategy::FixedStride(8));
        assert!("fixed-stride:0".parse::<Strategy>().is_err());
    }

    #[test]
    fn round_trip_every_variant() {
        for m in samples() {
            let bytes = m.encode();
            assert_eq!(bytes.len(), m.encoded_len());
            assert_eq!(Message::decode(&bytes).unwrap(), m);
            let (back, raw) = read_message(&mut &bytes[..]).unwrap().unwrap();
            assert_eq!(back, m);
            assert_eq!(raw, bytes);
        }
    }

    #[test]
    fn keyframe_length_arithmetic() {
        let m = Message::KeyFrame { index: 0, frame: frame4() };
        assert_eq!(m.payload_len(), 8 + 2 + 2 + 1 + 48);
        assert_eq!(m.encode().len(), 5 + 61);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let mut bytes = samples()[2].encode();
        assert!(matches!(Message::decode(&bytes[..bytes.len() - 2]), Err(DecodeError::Truncated { .. })));
        bytes.push(0);
        assert!(matches!(Message::decode(&bytes), Err(DecodeError::LengthMismatch { .. })));
        let mut unknown = samples()[0].encode();
        unknown[0] = 9;
        assert_eq!(Message::decode(&unknown), Err(DecodeError::UnknownTag(9)));
    }

    #[test]
    fn truncated_update_in_payload() {
        // header claims a shorter payload than the delta needs
        let full = samples()[2].encode();
        let mut cut = full[..full.len() - 4].to_vec();
        let len = (cut.len() - HEADER_LEN) as u32;
        cut[1..5].copy_from_slice(&len.to_le_bytes());
        assert!(matches!(Message::decode(&cut), Err(DecodeError::Truncated { .. })));
    }

    #[test]
    fn stream_end_and_truncation() {
        assert!(read_message(&mut &[][..]).unwrap().is_none());
        let bytes = samples()[1].encode();
        assert!(read_message(&mut &bytes[..3]).is_err());
        assert!(read_message(&mut &bytes[..20]).is_err());
    }
}
