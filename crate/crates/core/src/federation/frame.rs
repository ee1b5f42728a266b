//! Protocol frames exchanged between edges and the server.
//!
//! ```text
//! magic "FIDS" | version u16 | msg_type u8 | device_id u32 | round u32
//! payload_len u64 | payload | crc32 u32 (IEEE, over the payload only)
//! ```
//!
//! All integers are big-endian.

use std::io::Read;

use crate::error::WireError;
use crate::gbdt::GbdtModel;

use super::ensemble::EnsembleModel;
use super::wire::{self, Reader};

pub const MAGIC: [u8; 4] = *b"FIDS";
pub const PROTOCOL_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4 + 8;
pub const TRAILER_LEN: usize = 4;
/// Largest payload a reader will allocate for.
pub const MAX_PAYLOAD_LEN: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    ModelUpdate = 1,
    GlobalModel = 2,
    Ack = 3,
    Shutdown = 4,
}

impl TryFrom<u8> for MsgType {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        match v {
            1 => Ok(Self::ModelUpdate),
            2 => Ok(Self::GlobalModel),
            3 => Ok(Self::Ack),
            4 => Ok(Self::Shutdown),
            other => Err(WireError::UnknownMsgType(other)),
        }
    }
}

impl MsgType {
    fn carries_payload(self) -> bool {
        matches!(self, Self::ModelUpdate | Self::GlobalModel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelEnvelope {
    pub msg_type: MsgType,
    pub device_id: u32,
    pub round: u32,
    pub payload: Vec<u8>,
}

impl ModelEnvelope {
    pub fn model_update(device_id: u32, round: u32, model: &GbdtModel) -> Self {
        Self { msg_type: MsgType::ModelUpdate, device_id, round, payload: wire::serialize_model(model) }
    }

    pub fn global_model(device_id: u32, round: u32, ensemble: &EnsembleModel) -> Self {
        Self {
            msg_type: MsgType::GlobalModel,
            device_id,
            round,
            payload: wire::serialize_ensemble(ensemble),
        }
    }

    pub fn ack(device_id: u32, round: u32) -> Self {
        Self { msg_type: MsgType::Ack, device_id, round, payload: Vec::new() }
    }

    pub fn shutdown(device_id: u32, round: u32) -> Self {
        Self { msg_type: MsgType::Shutdown, device_id, round, payload: Vec::new() }
    }

    pub fn decode_model(&self) -> Result<GbdtModel, WireError> {
        if self.msg_type != MsgType::ModelUpdate {
            return Err(WireError::InvalidValue(format!("{:?} does not carry a model", self.msg_type)));
        }
        wire::deserialize_model(&self.payload)
    }

    pub fn decode_ensemble(&self) -> Result<EnsembleModel, WireError> {
        if self.msg_type != MsgType::GlobalModel {
            return Err(WireError::InvalidValue(format!(
                "{:?} does not carry an ensemble",
                self.msg_type
            )));
        }
        wire::deserialize_ensemble(&self.payload)
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + TRAILER_LEN
    }
}

/// Encodes one frame.
///
/// Panics if an `Ack` or `Shutdown` envelope carries a payload.
pub fn encode_frame(env: &ModelEnvelope) -> Vec<u8> {
    assert!(
        env.msg_type.carries_payload() || env.payload.is_empty(),
        "{:?} frames carry no payload",
        env.msg_type
    );
    let mut out = Vec::with_capacity(env.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&PROTOCOL_VERSION.to_be_bytes());
    out.push(env.msg_type as u8);
    out.extend_from_slice(&env.device_id.to_be_bytes());
    out.extend_from_slice(&env.round.to_be_bytes());
    out.extend_from_slice(&(env.payload.len() as u64).to_be_bytes());
    out.extend_from_slice(&env.payload);
    out.extend_from_slice(&crc32fast::hash(&env.payload).to_be_bytes());
    out
}

struct Header {
    msg_type: MsgType,
    device_id: u32,
    round: u32,
    payload_len: u64,
}

fn parse_header(r: &mut Reader<'_>) -> Result<Header, WireError> {
    let magic = r.array::<4>()?;
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != PROTOCOL_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let msg_type = MsgType::try_from(r.u8()?)?;
    let device_id = r.u32()?;
    let round = r.u32()?;
    let payload_len = r.u64()?;
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(WireError::PayloadTooLarge(payload_len));
    }
    if !msg_type.carries_payload() && payload_len != 0 {
        return Err(WireError::InvalidValue(format!("{msg_type:?} frame with a payload")));
    }
    Ok(Header { msg_type, device_id, round, payload_len })
}

fn check_crc(payload: &[u8], expected: u32) -> Result<(), WireError> {
    let actual = crc32fast::hash(payload);
    if actual != expected {
        return Err(WireError::CrcMismatch { expected, actual });
    }
    Ok(())
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<ModelEnvelope, WireError> {
    let mut r = Reader::new(bytes);
    let h = parse_header(&mut r)?;
    let payload = r.take(h.payload_len as usize)?.to_vec();
    let crc = r.u32()?;
    r.finish()?;
    check_crc(&payload, crc)?;
    Ok(ModelEnvelope { msg_type: h.msg_type, device_id: h.device_id, round: h.round, payload })
}

/// Failure reading a frame from a byte stream.
#[derive(Debug, thiserror::Error)]
pub enum ReadFrameError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Reads one frame from a stream. An EOF before the first byte is reported
/// as `UnexpectedEof`.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<ModelEnvelope, ReadFrameError> {
    let mut header = [0u8; HEADER_LEN];
    reader.read_exact(&mut header)?;
    let h = parse_header(&mut Reader::new(&header))?;
    let mut payload = vec![0u8; h.payload_len as usize];
    reader.read_exact(&mut payload)?;
    let mut crc = [0u8; TRAILER_LEN];
    reader.read_exact(&mut crc)?;
    check_crc(&payload, u32::from_be_bytes(crc))?;
    Ok(ModelEnvelope { msg_type: h.msg_type, device_id: h.device_id, round: h.round, payload })
}

/// Splits a concatenation of frames (such as a transcript) back into frames.
pub fn decode_stream(mut bytes: &[u8]) -> Result<Vec<ModelEnvelope>, WireError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let mut r = Reader::new(bytes);
        let h = parse_header(&mut r)?;
        let len = HEADER_LEN + h.payload_len as usize + TRAILER_LEN;
        if bytes.len() < len {
            return Err(WireError::Truncated { offset: 0, needed: len, available: bytes.len() });
        }
        out.push(decode_frame(&bytes[..len])?);
        bytes = &bytes[len..];
    }
    Ok(out)
}
