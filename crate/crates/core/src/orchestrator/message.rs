//! Protocol messages and their frame codec.
//!
//! ```text
//! u8 variant tag | u32 sender | u32 receiver | u64 payload length | payload
//! ```
//!
//! All integers are big-endian. Report payloads use the BUDS report codec;
//! model payloads list the architecture followed by the flat parameters as
//! f64 bit patterns.

use std::fmt;

use thiserror::Error;

use crate::ara::FedWeights;
use crate::buds::{decode_report, encode_report, BudsError, ShuffledReport};
use crate::learn::{Architecture, ModelParams};

/// Node address; the server is [`SERVER`], clients use their user id.
pub type NodeId = u32;

pub const SERVER: NodeId = 0;

pub const HEADER_LEN: usize = 17;

#[derive(Debug, Error, PartialEq)]
#[error("malformed frame at byte {offset}: {message}")]
pub struct FrameError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    ReadyQuery,
    ReadyAck,
    BudgetBroadcast(usize),
    ClusterAssign { cluster_id: usize, head_id: NodeId },
    DataReport(ShuffledReport),
    ModelDownload(ModelParams),
    WeightReport(ShuffledReport),
    GlobalUpdate(FedWeights),
}

/// Payload variant without its contents, used for counting and logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    ReadyQuery,
    ReadyAck,
    BudgetBroadcast,
    ClusterAssign,
    DataReport,
    ModelDownload,
    WeightReport,
    GlobalUpdate,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::ReadyQuery,
        MessageKind::ReadyAck,
        MessageKind::BudgetBroadcast,
        MessageKind::ClusterAssign,
        MessageKind::DataReport,
        MessageKind::ModelDownload,
        MessageKind::WeightReport,
        MessageKind::GlobalUpdate,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::ReadyQuery => MessageKind::ReadyQuery,
            Payload::ReadyAck => MessageKind::ReadyAck,
            Payload::BudgetBroadcast(_) => MessageKind::BudgetBroadcast,
            Payload::ClusterAssign { .. } => MessageKind::ClusterAssign,
            Payload::DataReport(_) => MessageKind::DataReport,
            Payload::ModelDownload(_) => MessageKind::ModelDownload,
            Payload::WeightReport(_) => MessageKind::WeightReport,
            Payload::GlobalUpdate(_) => MessageKind::GlobalUpdate,
        }
    }
}

/// A delivered message. The timestamp is the simulated delivery time and
/// is assigned by the network, not carried on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: NodeId,
    pub receiver: NodeId,
    pub timestamp: f64,
    pub payload: Payload,
}

pub fn encode_frame(sender: NodeId, receiver: NodeId, payload: &Payload) -> Vec<u8> {
    let body = encode_payload(payload);
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.push(payload.kind().tag());
    out.extend_from_slice(&sender.to_be_bytes());
    out.extend_from_slice(&receiver.to_be_bytes());
    out.extend_from_slice(&(body.len() as u64).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decodes one complete frame; trailing bytes are an error.
pub fn decode_frame(bytes: &[u8]) -> Result<(NodeId, NodeId, Payload), FrameError> {
    let err = |offset, message: &str| FrameError {
        offset,
        message: message.into(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(err(bytes.len(), "truncated header"));
    }
    let kind = MessageKind::from_tag(bytes[0]).ok_or_else(|| err(0, "unknown variant tag"))?;
    let sender = u32::from_be_bytes(bytes[1..5].try_into().unwrap());
    let receiver = u32::from_be_bytes(bytes[5..9].try_into().unwrap());
    let len = u64::from_be_bytes(bytes[9..17].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if (body.len() as u64) < len {
        return Err(err(bytes.len(), "truncated payload"));
    }
    if body.len() as u64 > len {
        return Err(err(
            HEADER_LEN + len as usize,
            "trailing bytes after payload",
        ));
    }
    let payload = decode_payload(kind, body).map_err(|e| FrameError {
        offset: HEADER_LEN + e.offset,
        message: e.message,
    })?;
    Ok((sender, receiver, payload))
}

/// Reads the payload length from a frame header.
pub fn frame_payload_len(header: &[u8; HEADER_LEN]) -> u64 {
    u64::from_be_bytes(header[9..17].try_into().unwrap())
}

fn encode_payload(payload: &Payload) -> Vec<u8> {
    let mut out = Vec::new();
    match payload {
        Payload::ReadyQuery | Payload::ReadyAck => {}
        Payload::BudgetBroadcast(k) => out.extend_from_slice(&(*k as u64).to_be_bytes()),
        Payload::ClusterAssign {
            cluster_id,
            head_id,
        } => {
            out.extend_from_slice(&(*cluster_id as u64).to_be_bytes());
            out.extend_from_slice(&head_id.to_be_bytes());
        }
        Payload::DataReport(r) | Payload::WeightReport(r) => out = encode_report(r),
        Payload::ModelDownload(model) => {
            let arch = &model.arch;
            out.extend_from_slice(&(arch.input as u64).to_be_bytes());
            out.extend_from_slice(&(arch.hidden.len() as u32).to_be_bytes());
            for h in &arch.hidden {
                out.extend_from_slice(&(*h as u64).to_be_bytes());
            }
            out.extend_from_slice(&(arch.classes as u64).to_be_bytes());
            put_floats(&mut out, &model.flatten());
        }
        Payload::GlobalUpdate(w) => {
            out.extend_from_slice(&w.total_examples.to_be_bytes());
            put_floats(&mut out, &w.params);
        }
    }
    out
}

fn put_floats(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u64).to_be_bytes());
    for v in values {
        out.extend_from_slice(&v.to_bits().to_be_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.bytes.len() - self.pos < n {
            return Err(FrameError {
                offset: self.bytes.len(),
                message: "truncated payload".into(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, FrameError> {
        let at = self.pos;
        usize::try_from(self.u64()?).map_err(|_| FrameError {
            offset: at,
            message: "value does not fit usize".into(),
        })
    }

    fn floats(&mut self) -> Result<Vec<f64>, FrameError> {
        let at = self.pos;
        let n = self.usize()?;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err(FrameError {
                offset: at,
                message: format!("{n} floats exceed payload"),
            });
        }
        (0..n).map(|_| Ok(f64::from_bits(self.u64()?))).collect()
    }

    fn finish<T>(self, value: T) -> Result<T, FrameError> {
        if self.pos != self.bytes.len() {
            return Err(FrameError {
                offset: self.pos,
                message: "trailing bytes in payload".into(),
            });
        }
        Ok(value)
    }
}

fn decode_payload(kind: MessageKind, bytes: &[u8]) -> Result<Payload, FrameError> {
    let mut r = Reader { bytes, pos: 0 };
    let payload = match kind {
        MessageKind::ReadyQuery => Payload::ReadyQuery,
        MessageKind::ReadyAck => Payload::ReadyAck,
        MessageKind::BudgetBroadcast => Payload::BudgetBroadcast(r.usize()?),
        MessageKind::ClusterAssign => Payload::ClusterAssign {
            cluster_id: r.usize()?,
            head_id: r.u32()?,
        },
        MessageKind::DataReport | MessageKind::WeightReport => {
            let report = decode_report(bytes).map_err(|e| match e {
                BudsError::Decode { offset, message } => FrameError { offset, message },
                other => FrameError {
                    offset: 0,
                    message: other.to_string(),
                },
            })?;
            return Ok(if kind == MessageKind::DataReport {
                Payload::DataReport(report)
            } else {
                Payload::WeightReport(report)
            });
        }
        MessageKind::ModelDownload => {
            let input = r.usize()?;
            let at = r.pos;
            let n_hidden = r.u32()? as usize;
            if n_hidden > (bytes.len() - r.pos) / 8 {
                return Err(FrameError {
                    offset: at,
                    message: "hidden layer count exceeds payload".into(),
                });
            }
            let hidden = (0..n_hidden)
                .map(|_| r.usize())
                .collect::<Result<Vec<_>, _>>()?;
            let classes = r.usize()?;
            let arch = Architecture {
                input,
                hidden,
                classes,
            };
            let at = r.pos;
            let flat = r.floats()?;
            let model = ModelParams::unflatten(&arch, &flat).map_err(|e| FrameError {
                offset: at,
                message: e.to_string(),
            })?;
            Payload::ModelDownload(model)
        }
        MessageKind::GlobalUpdate => {
            let total_examples = r.u64()?;
            let params = r.floats()?;
            Payload::GlobalUpdate(FedWeights {
                params,
                total_examples,
            })
        }
    };
    r.finish(payload)
}
