//! Cloud <-> enclave secure channel.
//!
//! The enclave produces an attestation report binding its measurement to an
//! X25519 public key. The cloud checks the report against the expected
//! measurement, and both sides derive `K_shared` from the Diffie-Hellman
//! output and the two endpoint identities. Payloads are then sealed with
//! AES-256-GCM under per-direction sequence-number nonces.

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey, StaticSecret};

use super::hmac_sha256;
use crate::error::{Error, Result};
use crate::types::EdgeId;

/// Key the simulated quoting hardware signs reports with; the verifier knows it.
const QUOTING_KEY: &[u8] = b"pmdedup-simulated-quoting-enclave";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Measurement(pub [u8; 32]);

impl Measurement {
    /// Measurement of an enclave built from `code`.
    pub fn of_code(code: &[u8]) -> Self {
        Measurement(Sha256::digest(code).into())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SharedSecret(pub [u8; 32]);

impl std::fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SharedSecret(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationReport {
    pub edge: EdgeId,
    pub measurement: Measurement,
    pub public_key: [u8; 32],
    pub quote: [u8; 32],
}

fn quote_for(edge: EdgeId, measurement: &Measurement, public_key: &[u8; 32]) -> [u8; 32] {
    hmac_sha256(
        QUOTING_KEY,
        &[&edge.0.to_le_bytes(), &measurement.0, public_key],
    )
}

fn derive_shared(dh: &[u8; 32], edge: EdgeId, cloud_id: u32) -> SharedSecret {
    SharedSecret(
        Sha256::new()
            .chain_update(b"pmdedup-k-shared")
            .chain_update(dh)
            .chain_update(edge.0.to_le_bytes())
            .chain_update(cloud_id.to_le_bytes())
            .finalize()
            .into(),
    )
}

fn secret_from_seed(label: &[u8], seed: u64) -> StaticSecret {
    let bytes: [u8; 32] = Sha256::new()
        .chain_update(label)
        .chain_update(seed.to_le_bytes())
        .finalize()
        .into();
    StaticSecret::from(bytes)
}

pub struct EnclaveKeyExchange {
    edge: EdgeId,
    secret: StaticSecret,
}

impl EnclaveKeyExchange {
    pub fn new(edge: EdgeId, measurement: Measurement, seed: u64) -> (Self, AttestationReport) {
        let secret = secret_from_seed(b"pmdedup-enclave-dh", seed ^ ((edge.0 as u64) << 32));
        let public_key = PublicKey::from(&secret).to_bytes();
        let report = AttestationReport {
            edge,
            measurement,
            public_key,
            quote: quote_for(edge, &measurement, &public_key),
        };
        (Self { edge, secret }, report)
    }

    pub fn finish(self, cloud_id: u32, cloud_public: &[u8; 32]) -> SharedSecret {
        let dh = self.secret.diffie_hellman(&PublicKey::from(*cloud_public));
        derive_shared(dh.as_bytes(), self.edge, cloud_id)
    }
}

pub struct CloudKeyExchange;

impl CloudKeyExchange {
    /// Verifies the report and returns `(K_shared, cloud public key)`.
    pub fn accept(
        cloud_id: u32,
        expected: &Measurement,
        report: &AttestationReport,
        seed: u64,
    ) -> Result<(SharedSecret, [u8; 32])> {
        let genuine = quote_for(report.edge, &report.measurement, &report.public_key);
        if genuine != report.quote || report.measurement != *expected {
            return Err(Error::AttestationFailed);
        }
        let secret = secret_from_seed(b"pmdedup-cloud-dh", seed ^ report.edge.0 as u64);
        let public = PublicKey::from(&secret).to_bytes();
        let dh = secret.diffie_hellman(&PublicKey::from(report.public_key));
        Ok((derive_shared(dh.as_bytes(), report.edge, cloud_id), public))
    }
}

/// Runs the full handshake; returns the secrets held by (enclave, cloud).
pub fn establish_secure_channel(
    edge: EdgeId,
    enclave_measurement: Measurement,
    cloud_id: u32,
    expected: &Measurement,
    seed: u64,
) -> Result<(SharedSecret, SharedSecret)> {
    let (kx, report) = EnclaveKeyExchange::new(edge, enclave_measurement, seed);
    let (cloud_secret, cloud_pub) = CloudKeyExchange::accept(cloud_id, expected, &report, seed)?;
    Ok((kx.finish(cloud_id, &cloud_pub), cloud_secret))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    Cloud,
    Enclave,
}

impl ChannelRole {
    fn tag(self) -> u8 {
        match self {
            ChannelRole::Cloud => 0xC1,
            ChannelRole::Enclave => 0xE1,
        }
    }

    fn peer(self) -> ChannelRole {
        match self {
            ChannelRole::Cloud => ChannelRole::Enclave,
            ChannelRole::Enclave => ChannelRole::Cloud,
        }
    }
}

/// One endpoint of an authenticated, replay-protected channel.
pub struct SecureChannel {
    cipher: Aes256Gcm,
    role: ChannelRole,
    tx_seq: u64,
    rx_seq: u64,
}

impl std::fmt::Debug for SecureChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecureChannel")
            .field("role", &self.role)
            .field("tx_seq", &self.tx_seq)
            .field("rx_seq", &self.rx_seq)
            .finish()
    }
}

fn seq_nonce(role: ChannelRole, seq: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[0] = role.tag();
    n[4..].copy_from_slice(&seq.to_le_bytes());
    n
}

impl SecureChannel {
    pub fn new(secret: &SharedSecret, role: ChannelRole) -> Self {
        Self {
            cipher: Aes256Gcm::new_from_slice(&secret.0).expect("32-byte key"),
            role,
            tx_seq: 0,
            rx_seq: 0,
        }
    }

    pub fn cloud(secret: &SharedSecret) -> Self {
        Self::new(secret, ChannelRole::Cloud)
    }

    pub fn enclave(secret: &SharedSecret) -> Self {
        Self::new(secret, ChannelRole::Enclave)
    }

    /// `seq (u64 LE) || ciphertext || tag`.
    pub fn seal(&mut self, payload: &[u8]) -> Vec<u8> {
        self.tx_seq += 1;
        let nonce = seq_nonce(self.role, self.tx_seq);
        let ct = self
            .cipher
            .encrypt(Nonce::from_slice(&nonce), payload)
            .expect("in-memory AES-GCM encryption cannot fail");
        let mut out = Vec::with_capacity(8 + ct.len());
        out.extend_from_slice(&self.tx_seq.to_le_bytes());
        out.extend_from_slice(&ct);
        out
    }

    /// Authenticates and decrypts a frame from the peer. Replayed or
    /// reordered frames are rejected; state is unchanged on failure.
    pub fn open(&mut self, frame: &[u8]) -> Result<Vec<u8>> {
        if frame.len() < 8 + 16 {
            return Err(Error::AuthFailure);
        }
        let seq = u64::from_le_bytes(frame[..8].try_into().unwrap());
        if seq <= self.rx_seq {
            return Err(Error::AuthFailure);
        }
        let nonce = seq_nonce(self.role.peer(), seq);
        let pt = self
            .cipher
            .decrypt(Nonce::from_slice(&nonce), &frame[8..])
            .map_err(|_| Error::AuthFailure)?;
        self.rx_seq = seq;
        Ok(pt)
    }
}
