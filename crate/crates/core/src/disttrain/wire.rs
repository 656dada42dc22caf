//! Framed wire protocol between per-channel workers and the coordinator.
//!
//! Every frame is `magic "MRDX" | msg_type u8 | payload_len u64 LE |
//! payload`. All integers are little-endian; matrices travel as binary64 LE
//! in row-major order. Unknown message types, bad magic, and payload length
//! disagreements are protocol errors.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const WIRE_MAGIC: [u8; 4] = *b"MRDX";

/// Frames larger than this are rejected before allocation.
pub const MAX_PAYLOAD: u64 = 1 << 30;

pub const MSG_HELLO: u8 = 0x01;
pub const MSG_EPOCH: u8 = 0x02;
pub const MSG_EMB: u8 = 0x03;
pub const MSG_GRAD: u8 = 0x04;
pub const MSG_DONE: u8 = 0x05;
pub const MSG_SHUTDOWN: u8 = 0x06;
pub const MSG_ERR: u8 = 0x07;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad frame magic")]
    BadMagic,
    #[error("unknown message type 0x{0:02x}")]
    UnknownMsgType(u8),
    #[error("payload length mismatch: header says {declared}, content needs {required}")]
    PayloadLength { declared: u64, required: u64 },
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    PayloadTooLarge(u64),
    #[error("peer disconnected")]
    Disconnected,
    #[error("duplicate hello for channel {0}")]
    DuplicateChannel(u8),
    #[error("expected {expected}, got {got}")]
    UnexpectedMessage { expected: &'static str, got: &'static str },
    #[error("step mismatch: expected {expected}, got {got}")]
    StepMismatch { expected: u64, got: u64 },
    #[error("matrix geometry mismatch: expected {expected_rows}x{expected_dim}, got {rows}x{dim}")]
    GeometryMismatch { expected_rows: u32, expected_dim: u32, rows: u32, dim: u32 },
    #[error("frame text is not UTF-8")]
    NotUtf8,
    #[error("peer reported error: {0}")]
    Remote(String),
}

/// One protocol message.
#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Hello { channel_id: u8 },
    Epoch { epoch: u32, epoch_seed: u64, w_align: f64, w_rec: f64 },
    Emb { step: u64, rows: u32, dim: u32, data: Vec<f64> },
    Grad { step: u64, rows: u32, dim: u32, data: Vec<f64> },
    Done { step: u64 },
    Shutdown,
    Err { reason: String },
}

impl WireMessage {
    pub fn msg_type(&self) -> u8 {
        match self {
            WireMessage::Hello { .. } => MSG_HELLO,
            WireMessage::Epoch { .. } => MSG_EPOCH,
            WireMessage::Emb { .. } => MSG_EMB,
            WireMessage::Grad { .. } => MSG_GRAD,
            WireMessage::Done { .. } => MSG_DONE,
            WireMessage::Shutdown => MSG_SHUTDOWN,
            WireMessage::Err { .. } => MSG_ERR,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WireMessage::Hello { .. } => "HELLO",
            WireMessage::Epoch { .. } => "EPOCH",
            WireMessage::Emb { .. } => "EMB",
            WireMessage::Grad { .. } => "GRAD",
            WireMessage::Done { .. } => "DONE",
            WireMessage::Shutdown => "SHUTDOWN",
            WireMessage::Err { .. } => "ERR",
        }
    }
}

fn payload_of(msg: &WireMessage) -> Vec<u8> {
    match msg {
        WireMessage::Hello { channel_id } => vec![*channel_id],
        WireMessage::Epoch { epoch, epoch_seed, w_align, w_rec } => {
            let mut p = Vec::with_capacity(28);
            p.extend_from_slice(&epoch.to_le_bytes());
            p.extend_from_slice(&epoch_seed.to_le_bytes());
            p.extend_from_slice(&w_align.to_le_bytes());
            p.extend_from_slice(&w_rec.to_le_bytes());
            p
        }
        WireMessage::Emb { step, rows, dim, data } | WireMessage::Grad { step, rows, dim, data } => {
            let mut p = Vec::with_capacity(16 + data.len() * 8);
            p.extend_from_slice(&step.to_le_bytes());
            p.extend_from_slice(&rows.to_le_bytes());
            p.extend_from_slice(&dim.to_le_bytes());
            for v in data {
                p.extend_from_slice(&v.to_le_bytes());
            }
            p
        }
        WireMessage::Done { step } => step.to_le_bytes().to_vec(),
        WireMessage::Shutdown => Vec::new(),
        WireMessage::Err { reason } => reason.as_bytes().to_vec(),
    }
}

/// Serializes a message into one complete frame.
pub fn encode_frame(msg: &WireMessage) -> Vec<u8> {
    let payload = payload_of(msg);
    let mut frame = Vec::with_capacity(13 + payload.len());
    frame.extend_from_slice(&WIRE_MAGIC);
    frame.push(msg.msg_type());
    frame.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    frame.extend_from_slice(&payload);
    frame
}

struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.pos + n > self.bytes.len() {
            return Err(ProtocolError::PayloadLength {
                declared: self.bytes.len() as u64,
                required: (self.pos + n) as u64,
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ProtocolError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn finish(self) -> Result<(), ProtocolError> {
        if self.pos != self.bytes.len() {
            return Err(ProtocolError::PayloadLength {
                declared: self.bytes.len() as u64,
                required: self.pos as u64,
            });
        }
        Ok(())
    }
}

fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<WireMessage, ProtocolError> {
    let mut r = PayloadReader { bytes: payload, pos: 0 };
    let msg = match msg_type {
        MSG_HELLO => WireMessage::Hello { channel_id: r.u8()? },
        MSG_EPOCH => WireMessage::Epoch {
            epoch: r.u32()?,
            epoch_seed: r.u64()?,
            w_align: r.f64()?,
            w_rec: r.f64()?,
        },
        MSG_EMB | MSG_GRAD => {
            let step = r.u64()?;
            let rows = r.u32()?;
            let dim = r.u32()?;
            let count = rows as u64 * dim as u64;
            let required = 16 + count * 8;
            if payload.len() as u64 != required {
                return Err(ProtocolError::PayloadLength {
                    declared: payload.len() as u64,
                    required,
                });
            }
            let mut data = Vec::with_capacity(count as usize);
            for _ in 0..count {
                data.push(r.f64()?);
            }
            if msg_type == MSG_EMB {
                WireMessage::Emb { step, rows, dim, data }
            } else {
                WireMessage::Grad { step, rows, dim, data }
            }
        }
        MSG_DONE => WireMessage::Done { step: r.u64()? },
        MSG_SHUTDOWN => WireMessage::Shutdown,
        MSG_ERR => {
            let reason = String::from_utf8(payload.to_vec()).map_err(|_| ProtocolError::NotUtf8)?;
            r.pos = payload.len();
            WireMessage::Err { reason }
        }
        other => return Err(ProtocolError::UnknownMsgType(other)),
    };
    r.finish()?;
    Ok(msg)
}

/// Decodes one complete frame (header plus payload).
pub fn decode_frame(frame: &[u8]) -> Result<WireMessage, ProtocolError> {
    if frame.len() < 13 {
        return Err(ProtocolError::PayloadLength { declared: frame.len() as u64, required: 13 });
    }
    if frame[0..4] != WIRE_MAGIC {
        return Err(ProtocolError::BadMagic);
    }
    let msg_type = frame[4];
    let declared = u64::from_le_bytes(frame[5..13].try_into().unwrap());
    if declared > MAX_PAYLOAD {
        return Err(ProtocolError::PayloadTooLarge(declared));
    }
    let payload = &frame[13..];
    if payload.len() as u64 != declared {
        return Err(ProtocolError::PayloadLength {
            declared,
            required: payload.len() as u64,
        });
    }
    decode_payload(msg_type, payload)
}

/// Writes one frame to a byte stream.
pub fn write_frame<W: Write>(w: &mut W, msg: &WireMessage) -> Result<(), ProtocolError> {
    w.write_all(&encode_frame(msg))?;
    w.flush()?;
    Ok(())
}

/// Reads one frame from a byte stream, blocking until complete.
pub fn read_frame<R: Read>(r: &mut R) -> Result<WireMessage, ProtocolError> {
    let mut header = [0u8; 13];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            return Err(ProtocolError::Disconnected)
        }
        Err(e) => return Err(ProtocolError::Io(e)),
    }
    if header[0..4] != WIRE_MAGIC {
        return Err(ProtocolError::BadMagic);
    }
    let msg_type = header[4];
    let declared = u64::from_le_bytes(header[5..13].try_into().unwrap());
    if declared > MAX_PAYLOAD {
        return Err(ProtocolError::PayloadTooLarge(declared));
    }
    let mut payload = vec![0u8; declared as usize];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ProtocolError::Disconnected
        } else {
            ProtocolError::Io(e)
        }
    })?;
    decode_payload(msg_type, &payload)
}
