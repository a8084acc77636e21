//! Client-server transport.

mod client;
mod server;
mod wire;

pub use client::{client_segment_volume, exchange, ClientOptions, ClientSession, Decoder};
pub use server::{respond, serve, ServerHandle, ServerOptions, TrainingInbox};
pub use wire::{read_frame, write_frame, ErrorCode, MsgType, Received, WireMessage, HEADER_LEN, MAX_FRAME, WIRE_MAGIC, WIRE_VERSION};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("bad frame magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    Version(u16),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("length prefix {prefix} does not match frame body of {actual} bytes")]
    LengthMismatch { prefix: usize, actual: usize },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("malformed payload: {0}")]
    Payload(String),
}
