//! Server-aided message-locked encryption.
//!
//! The key server turns a plaintext-chunk fingerprint into a chunk key with
//! HMAC-SHA256 under a global secret, throttled per client by a token bucket
//! that runs on virtual time. Chunks are encrypted with AES-256-GCM under a
//! nonce derived from the key and plaintext, so equal plaintexts converge to
//! equal ciphertexts across clients.

mod channel;

pub use channel::{
    establish_secure_channel, AttestationReport, ChannelRole, CloudKeyExchange, EnclaveKeyExchange,
    Measurement, SecureChannel, SharedSecret,
};

use std::collections::BTreeMap;

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{CipherChunk, ClientId, Fingerprint, PlainChunk, VirtualTime};
use crate::wire::{Message, Reader, Writer};

type HmacSha256 = Hmac<Sha256>;

pub fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MleKey(pub [u8; 32]);

impl std::fmt::Debug for MleKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MleKey(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimit {
    /// Bucket size in requests.
    pub capacity: u64,
    /// Tokens added per virtual second.
    pub refill_per_second: u64,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self {
            capacity: 1 << 20,
            refill_per_second: 1 << 20,
        }
    }
}

const NANOS_PER_SEC: u128 = 1_000_000_000;

/// Token bucket over virtual time; tokens are tracked in units of
/// 1e-9 token so refill arithmetic stays exact.
#[derive(Debug, Clone)]
struct TokenBucket {
    scaled_tokens: u128,
    last: VirtualTime,
}

impl TokenBucket {
    fn full(limit: &RateLimit, now: VirtualTime) -> Self {
        Self {
            scaled_tokens: limit.capacity as u128 * NANOS_PER_SEC,
            last: now,
        }
    }

    fn refill(&mut self, limit: &RateLimit, now: VirtualTime) {
        if now > self.last {
            let dt = (now.0 - self.last.0) as u128;
            let cap = limit.capacity as u128 * NANOS_PER_SEC;
            self.scaled_tokens = (self.scaled_tokens + limit.refill_per_second as u128 * dt).min(cap);
            self.last = now;
        }
    }

    fn try_take(&mut self, n: u64) -> bool {
        let need = n as u128 * NANOS_PER_SEC;
        if self.scaled_tokens >= need {
            self.scaled_tokens -= need;
            true
        } else {
            false
        }
    }
}

pub struct KeyServer {
    global_secret: [u8; 32],
    limit: RateLimit,
    buckets: BTreeMap<ClientId, TokenBucket>,
}

impl std::fmt::Debug for KeyServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyServer")
            .field("limit", &self.limit)
            .field("clients", &self.buckets.len())
            .finish_non_exhaustive()
    }
}

impl KeyServer {
    pub fn new(global_secret: [u8; 32], limit: RateLimit) -> Self {
        Self {
            global_secret,
            limit,
            buckets: BTreeMap::new(),
        }
    }

    pub fn from_seed(seed: u64, limit: RateLimit) -> Self {
        let secret: [u8; 32] = Sha256::new()
            .chain_update(b"pmdedup-key-server")
            .chain_update(seed.to_le_bytes())
            .finalize()
            .into();
        Self::new(secret, limit)
    }

    fn prf(&self, plain_fp: &Fingerprint) -> MleKey {
        MleKey(hmac_sha256(&self.global_secret, &[&plain_fp.0]))
    }

    fn admit(&mut self, client: ClientId, n: u64, now: VirtualTime) -> Result<()> {
        let limit = self.limit;
        let bucket = self
            .buckets
            .entry(client)
            .or_insert_with(|| TokenBucket::full(&limit, now));
        bucket.refill(&limit, now);
        if bucket.try_take(n) {
            Ok(())
        } else {
            Err(Error::RateLimited)
        }
    }

    /// HMAC-SHA256(global_secret, fingerprint) for one chunk.
    pub fn derive_key(
        &mut self,
        client: ClientId,
        plain_fp: &Fingerprint,
        now: VirtualTime,
    ) -> Result<MleKey> {
        self.admit(client, 1, now)?;
        Ok(self.prf(plain_fp))
    }

    /// Batched derivation; the batch is admitted or refused as a whole.
    pub fn derive_keys(
        &mut self,
        client: ClientId,
        plain_fps: &[Fingerprint],
        now: VirtualTime,
    ) -> Result<Vec<MleKey>> {
        self.admit(client, plain_fps.len() as u64, now)?;
        Ok(plain_fps.iter().map(|fp| self.prf(fp)).collect())
    }

    pub fn handle(&mut self, req: &DeriveKeyRequest, now: VirtualTime) -> DeriveKeyResponse {
        match self.derive_key(req.client, &req.plain_fp, now) {
            Ok(key) => DeriveKeyResponse::Key(key),
            Err(_) => DeriveKeyResponse::RateLimited,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeriveKeyRequest {
    pub client: ClientId,
    pub plain_fp: Fingerprint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeriveKeyResponse {
    Key(MleKey),
    RateLimited,
}

impl Message for DeriveKeyRequest {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.client.0);
        w.put_fp(&self.plain_fp);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            client: ClientId(r.u32()?),
            plain_fp: r.fp()?,
        })
    }
}

impl Message for DeriveKeyResponse {
    fn encode(&self, w: &mut Writer) {
        match self {
            DeriveKeyResponse::Key(k) => {
                w.put_u8(0);
                w.put_array(&k.0);
            }
            DeriveKeyResponse::RateLimited => w.put_u8(1),
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        match r.u8()? {
            0 => Ok(DeriveKeyResponse::Key(MleKey(r.array()?))),
            1 => Ok(DeriveKeyResponse::RateLimited),
            _ => Err(Error::Malformed("unknown key response tag")),
        }
    }
}

fn chunk_nonce(key: &MleKey, plaintext: &[u8]) -> [u8; 12] {
    hmac_sha256(&key.0, &[plaintext])[..12].try_into().unwrap()
}

/// Deterministic AES-256-GCM. Output is `nonce || ciphertext || tag`.
pub fn encrypt_chunk(chunk: &PlainChunk, key: &MleKey) -> CipherChunk {
    let nonce = chunk_nonce(key, &chunk.0);
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("32-byte key");
    let ct = cipher
        .encrypt(Nonce::from_slice(&nonce), chunk.0.as_slice())
        .expect("in-memory AES-GCM encryption cannot fail");
    let mut out = Vec::with_capacity(12 + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    CipherChunk(out)
}

pub fn decrypt_chunk(chunk: &CipherChunk, key: &MleKey) -> Result<PlainChunk> {
    if chunk.0.len() < crate::types::CIPHER_OVERHEAD {
        return Err(Error::AuthFailure);
    }
    let (nonce, ct) = chunk.0.split_at(12);
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("32-byte key");
    let pt = cipher
        .decrypt(Nonce::from_slice(nonce), ct)
        .map_err(|_| Error::AuthFailure)?;
    if chunk_nonce(key, &pt) != nonce {
        return Err(Error::AuthFailure);
    }
    Ok(PlainChunk(pt))
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::types::{fingerprint_of, CIPHER_OVERHEAD};

    fn fp(i: u64) -> Fingerprint {
        fingerprint_of(&i.to_le_bytes()).unwrap()
    }

    #[test]
    fn clients_converge_on_keys() {
        let mut ks = KeyServer::from_seed(1, RateLimit::default());
        let a = ks.derive_key(ClientId(1), &fp(7), VirtualTime::ZERO).unwrap();
        let b = ks.derive_key(ClientId(2), &fp(7), VirtualTime::ZERO).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_capacity_bucket_limits_immediately() {
        let limit = RateLimit {
            capacity: 0,
            refill_per_second: 0,
        };
        let mut ks = KeyServer::from_seed(1, limit);
        assert_eq!(
            ks.derive_key(ClientId(1), &fp(1), VirtualTime::ZERO),
            Err(Error::RateLimited)
        );
    }

    #[test]
    fn thousand_fingerprints_thousand_keys() {
        let mut ks = KeyServer::from_seed(3, RateLimit::default());
        let fps: Vec<_> = (0..1000).map(fp).collect();
        let keys = ks.derive_keys(ClientId(0), &fps, VirtualTime::ZERO).unwrap();
        let distinct: HashSet<_> = keys.iter().map(|k| k.0).collect();
        assert_eq!(distinct.len(), 1000);
    }

    #[test]
    fn rate_limit_bounds_successes() {
        let limit = RateLimit {
            capacity: 10,
            refill_per_second: 100,
        };
        let mut ks = KeyServer::from_seed(4, limit);
        // One attempt every 1 ms for 1 s of virtual time.
        let mut ok = 0u64;
        for i in 0..1000u64 {
            if ks
                .derive_key(ClientId(9), &fp(i), VirtualTime::from_millis(i))
                .is_ok()
            {
                ok += 1;
            }
        }
        // Window is 0.999 s.
        assert!(ok <= 10 + 100, "{ok} successes");
        assert!(ok >= 100, "{ok} successes");
        // Other clients have their own bucket.
        assert!(ks
            .derive_key(ClientId(10), &fp(0), VirtualTime::from_millis(999))
            .is_ok());
    }

    #[test]
    fn batch_is_all_or_nothing() {
        let limit = RateLimit {
            capacity: 5,
            refill_per_second: 0,
        };
        let mut ks = KeyServer::from_seed(4, limit);
        let fps: Vec<_> = (0..6).map(fp).collect();
        assert_eq!(
            ks.derive_keys(ClientId(1), &fps, VirtualTime::ZERO),
            Err(Error::RateLimited)
        );
        assert!(ks.derive_keys(ClientId(1), &fps[..5], VirtualTime::ZERO).is_ok());
    }

    #[test]
    fn encryption_is_deterministic_and_invertible() {
        let mut ks = KeyServer::from_seed(5, RateLimit::default());
        let pt = PlainChunk(b"hello convergent world".to_vec());
        let key = ks
            .derive_key(ClientId(0), &fingerprint_of(&pt.0).unwrap(), VirtualTime::ZERO)
            .unwrap();
        let c1 = encrypt_chunk(&pt, &key);
        let c2 = encrypt_chunk(&pt, &key);
        assert_eq!(c1, c2);
        assert_eq!(c1.len(), pt.len() + CIPHER_OVERHEAD);
        assert_eq!(decrypt_chunk(&c1, &key).unwrap(), pt);
    }

    #[test]
    fn different_global_secrets_diverge() {
        let pt = PlainChunk(vec![42; 4096]);
        let pfp = fingerprint_of(&pt.0).unwrap();
        let k1 = KeyServer::from_seed(1, RateLimit::default())
            .derive_key(ClientId(0), &pfp, VirtualTime::ZERO)
            .unwrap();
        let k2 = KeyServer::from_seed(2, RateLimit::default())
            .derive_key(ClientId(0), &pfp, VirtualTime::ZERO)
            .unwrap();
        assert_ne!(encrypt_chunk(&pt, &k1), encrypt_chunk(&pt, &k2));
    }

    #[test]
    fn tampered_ciphertext_fails() {
        let key = MleKey([3; 32]);
        let mut c = encrypt_chunk(&PlainChunk(vec![1, 2, 3]), &key);
        c.0[14] ^= 1;
        assert_eq!(decrypt_chunk(&c, &key), Err(Error::AuthFailure));
    }

    #[test]
    fn key_messages_roundtrip() {
        let req = DeriveKeyRequest {
            client: ClientId(3),
            plain_fp: fp(1),
        };
        assert_eq!(DeriveKeyRequest::from_bytes(&req.to_bytes()).unwrap(), req);
        let resp = DeriveKeyResponse::Key(MleKey([8; 32]));
        assert_eq!(DeriveKeyResponse::from_bytes(&resp.to_bytes()).unwrap(), resp);
        let mut ks = KeyServer::from_seed(
            0,
            RateLimit {
                capacity: 0,
                refill_per_second: 0,
            },
        );
        assert_eq!(ks.handle(&req, VirtualTime::ZERO), DeriveKeyResponse::RateLimited);
    }
}
