//! Pre-computed proof of ownership.
//!
//! A challenge is a 32-byte seed. Bit `j` of the response (for `j = 1..=K`)
//! is the data bit at `LE64(HMAC(seed, LE64(j))[..8]) mod 8·len`, reading
//! bytes in order and bits LSB-first. Generator and responder share this
//! pipeline, so an owner of the exact bytes always matches.

mod maps;

pub use maps::{
    allocate_pool, verify_chunk, verify_file, ChunkVerdict, FileVerdict, IssueRecord, PowEntry,
    PowMaps, PowPair,
};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mle::hmac_sha256;
use crate::types::{ClientId, Fingerprint};
use crate::wire::{Message, Reader, Writer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowConfig {
    pub min_bits: u32,
    pub max_bits: u32,
    /// One response bit per this many bytes, before clamping.
    pub bytes_per_bit: u64,
    /// Pairs generated per entry per epoch.
    pub pool_depth: usize,
    /// Failures per client per epoch before its session is suspended.
    pub suspicion_threshold: u32,
}

impl Default for PowConfig {
    fn default() -> Self {
        Self {
            min_bits: 64,
            max_bits: 512,
            bytes_per_bit: 1024,
            pool_depth: 8,
            suspicion_threshold: 3,
        }
    }
}

impl PowConfig {
    /// Response length for an object of `size` bytes.
    pub fn bits_for(&self, size: u64) -> u32 {
        let raw = size.div_ceil(self.bytes_per_bit.max(1));
        raw.clamp(self.min_bits as u64, self.max_bits as u64) as u32
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_bits == 0 || self.min_bits > self.max_bits {
            return Err(Error::Config("response bits need 0 < min_bits <= max_bits".into()));
        }
        if self.pool_depth == 0 {
            return Err(Error::Config("pool depth must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PowLevel {
    File,
    Chunk,
}

/// `HMAC-SHA256(csmk, id || LE64(idc))`.
pub fn gen_seed(csmk: &[u8; 32], id: &Fingerprint, idc: u64) -> [u8; 32] {
    hmac_sha256(csmk, &[&id.0, &idc.to_le_bytes()])
}

/// Random-access bit reader over the challenged object.
pub trait BitSource {
    fn bit_len(&self) -> u64;
    fn bit_at(&self, pos: u64) -> bool;
}

impl BitSource for [u8] {
    fn bit_len(&self) -> u64 {
        self.len() as u64 * 8
    }

    fn bit_at(&self, pos: u64) -> bool {
        (self[(pos / 8) as usize] >> (pos % 8)) & 1 == 1
    }
}

/// Several buffers read as their concatenation.
pub struct Segments<'a> {
    parts: Vec<&'a [u8]>,
    /// Bit offset at which each part starts.
    starts: Vec<u64>,
    total: u64,
}

impl<'a> Segments<'a> {
    pub fn new(parts: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let parts: Vec<&[u8]> = parts.into_iter().collect();
        let mut starts = Vec::with_capacity(parts.len());
        let mut total = 0u64;
        for p in &parts {
            starts.push(total);
            total += p.len() as u64 * 8;
        }
        Self {
            parts,
            starts,
            total,
        }
    }
}

impl BitSource for Segments<'_> {
    fn bit_len(&self) -> u64 {
        self.total
    }

    fn bit_at(&self, pos: u64) -> bool {
        let i = self.starts.partition_point(|&s| s <= pos) - 1;
        self.parts[i].bit_at(pos - self.starts[i])
    }
}

/// Un-reduced positions for `j = 1..=k`; reducing them modulo different
/// lengths lets one seed serve a file and each of its chunks.
pub fn raw_positions(seed: &[u8; 32], k: u32) -> Vec<u64> {
    (1..=k as u64)
        .map(|j| {
            let h = hmac_sha256(seed, &[&j.to_le_bytes()]);
            u64::from_le_bytes(h[..8].try_into().unwrap())
        })
        .collect()
}

pub fn response_from_positions<S: BitSource + ?Sized>(raw: &[u64], data: &S) -> Result<BitString> {
    let len = data.bit_len();
    if len == 0 {
        return Err(Error::EmptyData);
    }
    let mut out = BitString::zeros(raw.len());
    for (j, r) in raw.iter().enumerate() {
        if data.bit_at(r % len) {
            out.set(j);
        }
    }
    Ok(out)
}

pub fn gen_response<S: BitSource + ?Sized>(seed: &[u8; 32], data: &S, k: u32) -> Result<BitString> {
    if data.bit_len() == 0 {
        return Err(Error::EmptyData);
    }
    if k == 0 {
        return Err(Error::Config("response length must be positive".into()));
    }
    response_from_positions(&raw_positions(seed, k), data)
}

/// Fixed-length bit string; bit `j` is bit `j % 8` of byte `j / 8`, so any
/// padding sits in the high bits of the last byte.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    len: u32,
    bytes: Vec<u8>,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        Self {
            len: len as u32,
            bytes: vec![0; len.div_ceil(8)],
        }
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, j: usize) -> bool {
        assert!(j < self.len());
        (self.bytes[j / 8] >> (j % 8)) & 1 == 1
    }

    pub fn set(&mut self, j: usize) {
        assert!(j < self.len());
        self.bytes[j / 8] |= 1 << (j % 8);
    }

    pub fn count_ones(&self) -> u32 {
        self.bytes.iter().map(|b| b.count_ones()).sum()
    }

    pub fn byte_len(&self) -> usize {
        self.bytes.len()
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut b = Self::zeros(len);
        for j in 0..len {
            if f(j) {
                b.set(j);
            }
        }
        b
    }
}

impl Message for BitString {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.len);
        w.put_bytes(&self.bytes);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let len = r.u32()?;
        let bytes = r.bytes()?.to_vec();
        if bytes.len() != (len as usize).div_ceil(8) {
            return Err(Error::Malformed("bit string length"));
        }
        let pad = (8 - len % 8) % 8;
        if pad > 0 && bytes.last().is_some_and(|b| b >> (8 - pad) != 0) {
            return Err(Error::Malformed("bit string padding"));
        }
        Ok(Self { len, bytes })
    }
}

/// Which object of the upload a challenge targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    File,
    /// Position of the chunk in the upload.
    Chunk(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowChallenge {
    pub scope: Scope,
    pub id: Fingerprint,
    pub seed: [u8; 32],
    pub k: u32,
}

impl PowChallenge {
    pub fn level(&self) -> PowLevel {
        match self.scope {
            Scope::File => PowLevel::File,
            Scope::Chunk(_) => PowLevel::Chunk,
        }
    }
}

impl Message for PowChallenge {
    fn encode(&self, w: &mut Writer) {
        match self.scope {
            Scope::File => {
                w.put_u8(0);
                w.put_u32(0);
            }
            Scope::Chunk(i) => {
                w.put_u8(1);
                w.put_u32(i);
            }
        }
        w.put_fp(&self.id);
        w.put_array(&self.seed);
        w.put_u32(self.k);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let scope = match (r.u8()?, r.u32()?) {
            (0, 0) => Scope::File,
            (1, i) => Scope::Chunk(i),
            _ => return Err(Error::Malformed("challenge scope")),
        };
        Ok(Self {
            scope,
            id: r.fp()?,
            seed: r.array()?,
            k: r.u32()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowResponse {
    pub bits: BitString,
}

impl Message for PowResponse {
    fn encode(&self, w: &mut Writer) {
        self.bits.encode(w);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            bits: BitString::decode(r)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Verified,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PowResult {
    pub verdict: Verdict,
}

impl Message for PowResult {
    fn encode(&self, w: &mut Writer) {
        w.put_u8(match self.verdict {
            Verdict::Verified => 1,
            Verdict::Failed => 0,
        });
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let verdict = match r.u8()? {
            1 => Verdict::Verified,
            0 => Verdict::Failed,
            _ => return Err(Error::Malformed("verdict")),
        };
        Ok(Self { verdict })
    }
}

/// Counts PoW failures per client within an epoch.
#[derive(Debug, Clone, Default)]
pub struct SuspicionTracker {
    threshold: u32,
    failures: HashMap<ClientId, u32>,
}

impl SuspicionTracker {
    pub fn new(threshold: u32) -> Self {
        Self {
            threshold: threshold.max(1),
            failures: HashMap::new(),
        }
    }

    /// Records one failure; returns whether the client is now suspicious.
    pub fn record_failure(&mut self, client: ClientId) -> bool {
        let n = self.failures.entry(client).or_insert(0);
        *n += 1;
        *n >= self.threshold
    }

    pub fn is_suspicious(&self, client: ClientId) -> bool {
        self.failures.get(&client).is_some_and(|&n| n >= self.threshold)
    }

    pub fn failures(&self, client: ClientId) -> u32 {
        self.failures.get(&client).copied().unwrap_or(0)
    }

    pub fn reset_epoch(&mut self) {
        self.failures.clear();
    }
}
