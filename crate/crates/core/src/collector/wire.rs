//! Length-prefixed frames: 4-byte big-endian payload length, version byte,
//! kind byte, payload. Typed payloads are compact JSON with sorted keys.

use serde::{Deserialize, Serialize};

use super::ConsolidatedRecord;

pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 6;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 0,
    Batch = 1,
    Ack = 2,
    Bye = 3,
}

impl MessageKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => Self::Hello,
            1 => Self::Batch,
            2 => Self::Ack,
            3 => Self::Bye,
            _ => return None,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("payload of {len} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    LengthOverflow { len: usize },
    #[error("unknown protocol version {0:#04x}")]
    UnknownVersion(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("truncated frame: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("peer closed the connection")]
    Closed,
    #[error("timed out waiting for a frame")]
    TimedOut,
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
}

/// A raw frame. `version` is always [`VERSION`] for frames built here; it is
/// kept so decoded frames re-encode to the same bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub version: u8,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(kind: MessageKind, payload: Vec<u8>) -> Self {
        Self {
            version: VERSION,
            kind,
            payload,
        }
    }
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let len = msg.payload.len();
    if len > MAX_PAYLOAD {
        return Err(WireError::LengthOverflow { len });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + len);
    out.extend_from_slice(&(len as u32).to_be_bytes());
    out.push(msg.version);
    out.push(msg.kind as u8);
    out.extend_from_slice(&msg.payload);
    Ok(out)
}

/// Validate a header and return the payload length.
fn parse_header(h: &[u8]) -> Result<(usize, MessageKind), WireError> {
    let len = u32::from_be_bytes([h[0], h[1], h[2], h[3]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::LengthOverflow { len });
    }
    if h[4] != VERSION {
        return Err(WireError::UnknownVersion(h[4]));
    }
    let kind = MessageKind::from_byte(h[5]).ok_or(WireError::UnknownKind(h[5]))?;
    Ok((len, kind))
}

fn check_payload(p: &[u8]) -> Result<(), WireError> {
    if p.is_empty() {
        return Ok(());
    }
    serde_json::from_slice::<serde_json::Value>(p)
        .map(|_| ())
        .map_err(|e| WireError::MalformedPayload(e.to_string()))
}

/// Decode the frame at the start of `buf`, if complete. Returns the frame and
/// the number of bytes it used.
pub fn decode_prefix(buf: &[u8]) -> Result<Option<(WireMessage, usize)>, WireError> {
    if buf.len() < HEADER_LEN {
        return Ok(None);
    }
    let (len, kind) = parse_header(&buf[..HEADER_LEN])?;
    let end = HEADER_LEN + len;
    if buf.len() < end {
        return Ok(None);
    }
    let payload = &buf[HEADER_LEN..end];
    check_payload(payload)?;
    Ok(Some((
        WireMessage {
            version: buf[4],
            kind,
            payload: payload.to_vec(),
        },
        end,
    )))
}

/// Decode exactly one frame.
pub fn decode(bytes: &[u8]) -> Result<WireMessage, WireError> {
    match decode_prefix(bytes)? {
        Some((m, used)) if used == bytes.len() => Ok(m),
        Some((_, used)) => Err(WireError::TrailingBytes(bytes.len() - used)),
        None => {
            let needed = if bytes.len() < HEADER_LEN {
                HEADER_LEN
            } else {
                HEADER_LEN + u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize
            };
            Err(WireError::Truncated {
                needed,
                got: bytes.len(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HelloBody {
    agent_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BatchBody {
    seq: u64,
    records: Vec<ConsolidatedRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AckBody {
    seq: u64,
    accepted: u64,
    duplicates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ByeBody {
    records: u64,
}

/// Typed protocol messages.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        agent_id: String,
    },
    Batch {
        seq: u64,
        records: Vec<ConsolidatedRecord>,
    },
    Ack {
        seq: u64,
        accepted: u64,
        duplicates: u64,
    },
    /// Sent by the agent with the number of records it delivered, echoed by the
    /// collector with the number it stored for the session.
    Bye {
        records: u64,
    },
}

/// Compact JSON with object keys in sorted order.
fn canonical<S: Serialize>(body: &S) -> Vec<u8> {
    // serde_json's default map is ordered, so going through Value sorts keys
    let v = serde_json::to_value(body).expect("protocol bodies serialize");
    serde_json::to_vec(&v).expect("values serialize")
}

fn parse<'a, D: Deserialize<'a>>(p: &'a [u8]) -> Result<D, WireError> {
    serde_json::from_slice(p).map_err(|e| WireError::MalformedPayload(e.to_string()))
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Hello { .. } => MessageKind::Hello,
            Message::Batch { .. } => MessageKind::Batch,
            Message::Ack { .. } => MessageKind::Ack,
            Message::Bye { .. } => MessageKind::Bye,
        }
    }

    pub fn to_wire(&self) -> WireMessage {
        let payload = match self {
            Message::Hello { agent_id } => canonical(&HelloBody {
                agent_id: agent_id.clone(),
            }),
            Message::Batch { seq, records } => canonical(&BatchBody {
                seq: *seq,
                records: records.clone(),
            }),
            Message::Ack {
                seq,
                accepted,
                duplicates,
            } => canonical(&AckBody {
                seq: *seq,
                accepted: *accepted,
                duplicates: *duplicates,
            }),
            Message::Bye { records } => canonical(&ByeBody { records: *records }),
        };
        WireMessage::new(self.kind(), payload)
    }

    pub fn from_wire(w: &WireMessage) -> Result<Self, WireError> {
        if w.version != VERSION {
            return Err(WireError::UnknownVersion(w.version));
        }
        Ok(match w.kind {
            MessageKind::Hello => {
                let b: HelloBody = parse(&w.payload)?;
                Message::Hello { agent_id: b.agent_id }
            }
            MessageKind::Batch => {
                let b: BatchBody = parse(&w.payload)?;
                Message::Batch {
                    seq: b.seq,
                    records: b.records,
                }
            }
            MessageKind::Ack => {
                let b: AckBody = parse(&w.payload)?;
                Message::Ack {
                    seq: b.seq,
                    accepted: b.accepted,
                    duplicates: b.duplicates,
                }
            }
            MessageKind::Bye => {
                let b: ByeBody = parse(&w.payload)?;
                Message::Bye { records: b.records }
            }
        })
    }
}
