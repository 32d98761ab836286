//! FDN1 framing used between the sampler and an external denoiser worker.
//!
//! ```text
//! frame   := "FDN1" | type: u8 | len: u32 LE | payload[len]
//! 0x01 HELLO      u32 T | u32 C | u32 H | u32 W | T x f32 beta
//! 0x02 HELLO_ACK  (empty)
//! 0x03 EPS_REQ    u32 t | C*H*W x f32 x_t
//! 0x04 EPS_RESP   C*H*W x f32 eps
//! 0x05 SHUTDOWN   (empty)
//! 0x7F ERROR      UTF-8 message
//! ```
//!
//! All integers and floats are little-endian; tensors are channel-major.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Shape;

pub const MAGIC: [u8; 4] = *b"FDN1";
pub const HEADER_LEN: usize = 9;
/// Upper bound on a payload; anything larger is treated as a corrupt header.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Hello = 0x01,
    HelloAck = 0x02,
    EpsReq = 0x03,
    EpsResp = 0x04,
    Shutdown = 0x05,
    Error = 0x7F,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => MsgType::Hello,
            0x02 => MsgType::HelloAck,
            0x03 => MsgType::EpsReq,
            0x04 => MsgType::EpsResp,
            0x05 => MsgType::Shutdown,
            0x7F => MsgType::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { shape: Shape, betas: Vec<f32> },
    HelloAck,
    EpsReq { t: u32, x_t: Vec<f32> },
    EpsResp { eps: Vec<f32> },
    Shutdown,
    Error(String),
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello { .. } => MsgType::Hello,
            Message::HelloAck => MsgType::HelloAck,
            Message::EpsReq { .. } => MsgType::EpsReq,
            Message::EpsResp { .. } => MsgType::EpsResp,
            Message::Shutdown => MsgType::Shutdown,
            Message::Error(_) => MsgType::Error,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        match self {
            Message::Hello { shape, betas } => {
                for v in [betas.len(), shape.channels, shape.height, shape.width] {
                    payload.extend_from_slice(&(v as u32).to_le_bytes());
                }
                put_f32s(&mut payload, betas);
            }
            Message::HelloAck | Message::Shutdown => {}
            Message::EpsReq { t, x_t } => {
                payload.extend_from_slice(&t.to_le_bytes());
                put_f32s(&mut payload, x_t);
            }
            Message::EpsResp { eps } => put_f32s(&mut payload, eps),
            Message::Error(msg) => payload.extend_from_slice(msg.as_bytes()),
        }
        let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
        frame.extend_from_slice(&MAGIC);
        frame.push(self.msg_type() as u8);
        frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        frame.extend_from_slice(&payload);
        frame
    }

    /// Parses a payload. Tensor payloads have no internal length field, so
    /// their element count is only checked for alignment here; callers match
    /// it against the handshaken shape.
    pub fn decode(kind: MsgType, payload: &[u8]) -> Result<Self> {
        Ok(match kind {
            MsgType::Hello => {
                if payload.len() < 16 {
                    return Err(proto(format!("HELLO payload of {} bytes", payload.len())));
                }
                let word = |i: usize| u32_at(payload, 4 * i) as usize;
                let (t, shape) = (word(0), Shape::new(word(1), word(2), word(3)));
                if payload.len() != 16 + 4 * t {
                    return Err(proto(format!(
                        "HELLO declares T={t} but carries {} bytes",
                        payload.len()
                    )));
                }
                Message::Hello {
                    shape,
                    betas: get_f32s(&payload[16..])?,
                }
            }
            MsgType::HelloAck => {
                expect_empty(kind, payload)?;
                Message::HelloAck
            }
            MsgType::EpsReq => {
                if payload.len() < 4 {
                    return Err(proto("EPS_REQ without timestep"));
                }
                Message::EpsReq {
                    t: u32_at(payload, 0),
                    x_t: get_f32s(&payload[4..])?,
                }
            }
            MsgType::EpsResp => Message::EpsResp {
                eps: get_f32s(payload)?,
            },
            MsgType::Shutdown => {
                expect_empty(kind, payload)?;
                Message::Shutdown
            }
            MsgType::Error => Message::Error(String::from_utf8_lossy(payload).into_owned()),
        })
    }
}

fn proto(msg: impl Into<String>) -> Error {
    Error::Protocol(msg.into())
}

fn expect_empty(kind: MsgType, payload: &[u8]) -> Result<()> {
    if !payload.is_empty() {
        return Err(proto(format!("{kind:?} with {}-byte payload", payload.len())));
    }
    Ok(())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_f32s(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(proto(format!("{} bytes is not a whole number of f32", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Reads one frame. `Ok(None)` means the stream ended cleanly before any
/// header byte; a partial frame is a protocol error.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Option<Message>> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match reader.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(proto(format!("stream ended after {filled} header bytes"))),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if header[..4] != MAGIC {
        return Err(proto(format!("bad magic {:02x?}", &header[..4])));
    }
    let kind = MsgType::from_byte(header[4])
        .ok_or_else(|| proto(format!("unknown message type 0x{:02x}", header[4])))?;
    let len = u32_at(&header, 5);
    if len > MAX_PAYLOAD {
        return Err(proto(format!("payload length {len} exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    reader.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            proto(format!("stream ended inside a {len}-byte {kind:?} payload"))
        } else {
            e.into()
        }
    })?;
    Message::decode(kind, &payload).map(Some)
}

pub fn write_frame<W: Write>(writer: &mut W, msg: &Message) -> Result<()> {
    writer.write_all(&msg.encode())?;
    writer.flush()?;
    Ok(())
}
