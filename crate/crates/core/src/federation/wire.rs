//! Agent → aggregator messages.
//!
//! The only payload that can be put on the wire is [`SharedParams`]: the
//! parameters of the model that is meant to be shared (the private student in
//! FPFL, the federated model in the baselines). The fair teacher, its
//! multiplier and the raw rows have no path onto a [`WireMessage`].

use serde::{Deserialize, Serialize};

use crate::nn::ParamVector;
use crate::{Error, Result};

mod sealed {
    pub trait Sealed {}
}

/// Types allowed to leave an agent. Sealed: no impls outside this crate.
pub trait WirePayload: sealed::Sealed {
    fn params(&self) -> &ParamVector;
}

/// Parameters of the shared (aggregated) model.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedParams(ParamVector);

impl SharedParams {
    pub(crate) fn new(params: ParamVector) -> Self {
        Self(params)
    }

    pub fn into_inner(self) -> ParamVector {
        self.0
    }
}

impl sealed::Sealed for SharedParams {}

impl WirePayload for SharedParams {
    fn params(&self) -> &ParamVector {
        &self.0
    }
}

/// One agent's report for one round.
///
/// `param_blob` is the payload's flat parameter vector, 8 bytes per entry,
/// little-endian IEEE-754, canonical layer order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireMessage {
    agent_id: u32,
    round: u32,
    param_blob: Vec<u8>,
    shard_size: u64,
}

/// Field names of the serialized message, in order.
pub const WIRE_FIELDS: [&str; 4] = ["agent_id", "round", "param_blob", "shard_size"];

impl WireMessage {
    pub fn new<P: WirePayload>(agent_id: u32, round: u32, payload: &P, shard_size: u64) -> Self {
        Self {
            agent_id,
            round,
            param_blob: payload.params().to_le_bytes(),
            shard_size,
        }
    }

    pub fn agent_id(&self) -> u32 {
        self.agent_id
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn shard_size(&self) -> u64 {
        self.shard_size
    }

    pub fn param_blob(&self) -> &[u8] {
        &self.param_blob
    }

    pub fn params(&self) -> Result<ParamVector> {
        ParamVector::from_le_bytes(&self.param_blob)
    }

    /// Fixed binary framing: `agent_id u32 | round u32 | shard_size u64 | blob_len u64 | blob`, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.param_blob.len());
        out.extend_from_slice(&self.agent_id.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.shard_size.to_le_bytes());
        out.extend_from_slice(&(self.param_blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.param_blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Protocol(format!("wire frame of {} bytes is truncated", bytes.len()));
        if bytes.len() < 24 {
            return Err(short());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let len = u64_at(16) as usize;
        if bytes.len() != 24 + len || !len.is_multiple_of(8) {
            return Err(short());
        }
        Ok(Self {
            agent_id: u32_at(0),
            round: u32_at(4),
            shard_size: u64_at(8),
            param_blob: bytes[24..].to_vec(),
        })
    }
}
