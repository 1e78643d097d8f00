use thiserror::Error;

use crate::types::Fingerprint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input data is empty")]
    EmptyData,

    #[error("rate limited by key server")]
    RateLimited,

    #[error("attestation failed: enclave measurement mismatch")]
    AttestationFailed,

    #[error("authenticated decryption failed")]
    AuthFailure,

    #[error("count-min sketch counter saturated")]
    Saturated,

    #[error("unknown proof-of-ownership entry {0}")]
    UnknownId(Fingerprint),

    #[error("no unused challenge/response pairs remain for {0}")]
    Exhausted(Fingerprint),

    #[error("pair {generation} of {id} was shared with an edge server and is invalid at the cloud")]
    InvalidatedPair { id: Fingerprint, generation: u64 },

    #[error("chunk fingerprint does not match its contents (claimed {claimed})")]
    FingerprintMismatch { claimed: Fingerprint },

    #[error("recipe references chunk {0} which is not stored")]
    DanglingChunk(Fingerprint),

    #[error("unknown file {0}")]
    UnknownFile(Fingerprint),

    #[error("no secure channel to edge server {0}")]
    ChannelDown(u32),

    #[error("enclave capacity exceeded: need {needed} bytes, capacity {capacity}")]
    CapacityExceeded { needed: usize, capacity: usize },

    #[error("challenge scope is outside the upload plan")]
    UnknownScope,

    #[error("fingerprint {0} has no verified-ownership token in this session")]
    NotVerified(Fingerprint),

    #[error("session aborted: client {0} marked suspicious")]
    SessionAborted(u32),

    #[error("workload target dedup ratio {0} is not achievable")]
    InfeasibleTarget(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed message: {0}")]
    Malformed(&'static str),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
