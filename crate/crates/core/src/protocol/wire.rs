//! Frame layout: `u32` LE length of everything after it, then magic `MXSP`,
//! version `u16` LE, message type `u8`, session id `u64` LE, patch index `u32` LE,
//! then the payload (MXSG tensors, or nothing).

use std::io::{self, Read, Write};

use super::ProtocolError;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LabelField, Tensor, Volume};

pub const WIRE_MAGIC: [u8; 4] = *b"MXSP";
pub const WIRE_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 8 + 4;
/// Upper bound on a frame body; larger prefixes are rejected before allocation.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    SegmentRequest = 0,
    SegmentResponse = 1,
    Error = 2,
    Hello = 3,
    Bye = 4,
    /// Mixed image followed by mixed labels; accepted only by servers started in training mode.
    TrainingRequest = 5,
}

impl TryFrom<u8> for MsgType {
    type Error = ProtocolError;

    fn try_from(v: u8) -> std::result::Result<Self, ProtocolError> {
        Ok(match v {
            0 => Self::SegmentRequest,
            1 => Self::SegmentResponse,
            2 => Self::Error,
            3 => Self::Hello,
            4 => Self::Bye,
            5 => Self::TrainingRequest,
            other => return Err(ProtocolError::UnknownType(other)),
        })
    }
}

/// Codes carried by `Error` messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    Malformed = 1,
    Backend = 2,
    Rejected = 3,
    Unexpected = 4,
}

impl ErrorCode {
    fn from_u16(v: u16) -> Option<Self> {
        [Self::Malformed, Self::Backend, Self::Rejected, Self::Unexpected].into_iter().find(|c| *c as u16 == v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub session_id: u64,
    pub patch_index: u32,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(msg_type: MsgType, session_id: u64, patch_index: u32, payload: Vec<u8>) -> Self {
        Self { msg_type, session_id, patch_index, payload }
    }

    pub fn hello(session_id: u64) -> Self {
        Self::new(MsgType::Hello, session_id, 0, Vec::new())
    }

    pub fn bye(session_id: u64) -> Self {
        Self::new(MsgType::Bye, session_id, 0, Vec::new())
    }

    /// Inference request: the payload is the mixed intensity patch and nothing else.
    pub fn segment_request<T: Scalar>(session_id: u64, patch_index: u32, x_mix: &Volume<T>) -> Self {
        Self::new(MsgType::SegmentRequest, session_id, patch_index, Tensor::from(x_mix).encode())
    }

    pub fn segment_response<T: Scalar>(session_id: u64, patch_index: u32, y: &LabelField<T>) -> Self {
        Self::new(MsgType::SegmentResponse, session_id, patch_index, Tensor::from(y).encode())
    }

    pub fn training_request<T: Scalar>(session_id: u64, patch_index: u32, x_mix: &Volume<T>, y_mix: &LabelField<T>) -> Self {
        let mut payload = Tensor::from(x_mix).encode();
        Tensor::from(y_mix).encode_into(&mut payload);
        Self::new(MsgType::TrainingRequest, session_id, patch_index, payload)
    }

    /// Error payload: one `u16` LE code then a UTF-8 message.
    pub fn error(session_id: u64, patch_index: u32, code: ErrorCode, message: &str) -> Self {
        let mut payload = (code as u16).to_le_bytes().to_vec();
        payload.extend_from_slice(message.as_bytes());
        Self::new(MsgType::Error, session_id, patch_index, payload)
    }

    pub fn error_info(&self) -> Option<(Option<ErrorCode>, String)> {
        if self.msg_type != MsgType::Error || self.payload.len() < 2 {
            return None;
        }
        let code = u16::from_le_bytes([self.payload[0], self.payload[1]]);
        Some((ErrorCode::from_u16(code), String::from_utf8_lossy(&self.payload[2..]).into_owned()))
    }

    /// All MXSG tensors in the payload, in order.
    pub fn tensors<T: Scalar>(&self) -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::new();
        let mut rest = &self.payload[..];
        while !rest.is_empty() {
            let (t, used) = Tensor::decode_prefix(rest).map_err(|e| ProtocolError::Payload(e.to_string()))?;
            out.push(t);
            rest = &rest[used..];
        }
        Ok(out)
    }

    fn single_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let mut ts = self.tensors()?;
        if ts.len() != 1 {
            return Err(ProtocolError::Payload(format!("expected one tensor, found {}", ts.len())).into());
        }
        Ok(ts.pop().expect("one tensor"))
    }

    pub fn volume<T: Scalar>(&self) -> Result<Volume<T>> {
        self.single_tensor()?.into_volume()
    }

    pub fn labels<T: Scalar>(&self) -> Result<LabelField<T>> {
        self.single_tensor()?.into_labels()
    }

    pub fn frame_len(&self) -> usize {
        4 + HEADER_LEN + self.payload.len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.reserve(self.frame_len());
        out.extend_from_slice(&((HEADER_LEN + self.payload.len()) as u32).to_le_bytes());
        out.extend_from_slice(&WIRE_MAGIC);
        out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.session_id.to_le_bytes());
        out.extend_from_slice(&self.patch_index.to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    /// Decodes a frame body (everything after the length prefix).
    pub fn decode_body(body: &[u8]) -> std::result::Result<Self, ProtocolError> {
        if body.len() < HEADER_LEN {
            return Err(ProtocolError::Truncated { needed: HEADER_LEN, have: body.len() });
        }
        let magic: [u8; 4] = body[..4].try_into().expect("4 bytes");
        if magic != WIRE_MAGIC {
            return Err(ProtocolError::BadMagic(magic));
        }
        let version = u16::from_le_bytes([body[4], body[5]]);
        if version != WIRE_VERSION {
            return Err(ProtocolError::Version(version));
        }
        let msg_type = MsgType::try_from(body[6])?;
        let session_id = u64::from_le_bytes(body[7..15].try_into().expect("8 bytes"));
        let patch_index = u32::from_le_bytes(body[15..19].try_into().expect("4 bytes"));
        Ok(Self { msg_type, session_id, patch_index, payload: body[HEADER_LEN..].to_vec() })
    }

    /// Decodes one complete frame; the buffer must hold exactly the prefixed length.
    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, ProtocolError> {
        if bytes.len() < 4 {
            return Err(ProtocolError::Truncated { needed: 4, have: bytes.len() });
        }
        let prefix = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        let body = &bytes[4..];
        if body.len() < prefix {
            return Err(ProtocolError::Truncated { needed: prefix, have: body.len() });
        }
        if body.len() > prefix || prefix < HEADER_LEN {
            return Err(ProtocolError::LengthMismatch { prefix, actual: body.len() });
        }
        Self::decode_body(body)
    }
}

/// Outcome of reading one frame from a stream.
#[derive(Debug)]
pub enum Received {
    Message(WireMessage),
    /// The frame was delimited correctly but its body is invalid; the stream stays aligned.
    Malformed(ProtocolError),
    Closed,
}

/// Reads one length-prefixed frame.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Received> {
    let mut prefix = [0u8; 4];
    match reader.read_exact(&mut prefix) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(Received::Closed),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_FRAME {
        return Err(Error::Protocol(ProtocolError::LengthMismatch { prefix: len, actual: MAX_FRAME }));
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body)?;
    Ok(match WireMessage::decode_body(&body) {
        Ok(m) => Received::Message(m),
        Err(e) => Received::Malformed(e),
    })
}

pub fn write_frame<W: Write>(writer: &mut W, msg: &WireMessage) -> Result<()> {
    writer.write_all(&msg.encode())?;
    Ok(())
}
