//! FastCDC content-defined chunking: gear rolling hash, normalized chunking
//! with a strict mask below the average size and a loose mask above it, and
//! min/max clamps.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::PlainChunk;

/// Extra mask bits applied before/after the average size (normalization level 2).
const NORMALIZATION: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkerConfig {
    pub min_size: usize,
    pub avg_size: usize,
    pub max_size: usize,
    pub gear_seed: u64,
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        Self::with_average(16 * 1024)
    }
}

impl ChunkerConfig {
    /// `min = avg / 4`, `max = avg * 4`.
    pub fn with_average(avg_size: usize) -> Self {
        Self {
            min_size: avg_size / 4,
            avg_size,
            max_size: avg_size * 4,
            gear_seed: 0x5eed_cdc0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_size < self.avg_size && self.avg_size < self.max_size) {
            return Err(Error::Config(format!(
                "chunk sizes must satisfy min < avg < max (got {}/{}/{})",
                self.min_size, self.avg_size, self.max_size
            )));
        }
        if !self.avg_size.is_power_of_two() || self.avg_size < 64 {
            return Err(Error::Config(format!(
                "average chunk size must be a power of two >= 64 (got {})",
                self.avg_size
            )));
        }
        if self.min_size == 0 {
            return Err(Error::Config("minimum chunk size must be positive".into()));
        }
        Ok(())
    }
}

/// Top `bits` bits set.
fn high_mask(bits: u32) -> u64 {
    if bits == 0 {
        0
    } else {
        u64::MAX << (64 - bits.min(64))
    }
}

#[derive(Clone)]
pub struct Chunker {
    cfg: ChunkerConfig,
    gear: Box<[u64; 256]>,
    mask_strict: u64,
    mask_loose: u64,
}

impl std::fmt::Debug for Chunker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chunker").field("cfg", &self.cfg).finish()
    }
}

impl Chunker {
    pub fn new(cfg: ChunkerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut gear = Box::new([0u64; 256]);
        for (i, slot) in gear.iter_mut().enumerate() {
            let mut h = Sha256::new();
            h.update(b"pmdedup-gear");
            h.update(cfg.gear_seed.to_le_bytes());
            h.update([i as u8]);
            let d = h.finalize();
            *slot = u64::from_le_bytes(d[..8].try_into().unwrap());
        }
        let bits = cfg.avg_size.trailing_zeros();
        Ok(Self {
            cfg,
            gear,
            mask_strict: high_mask(bits + NORMALIZATION),
            mask_loose: high_mask(bits.saturating_sub(NORMALIZATION)),
        })
    }

    pub fn config(&self) -> &ChunkerConfig {
        &self.cfg
    }

    /// Length of the next chunk at the start of `source`.
    fn cut(&self, source: &[u8]) -> usize {
        let ChunkerConfig {
            min_size,
            avg_size,
            max_size,
            ..
        } = self.cfg;
        let mut remaining = source.len();
        if remaining <= min_size {
            return remaining;
        }
        let mut center = avg_size;
        if remaining > max_size {
            remaining = max_size;
        } else if remaining < center {
            center = remaining;
        }
        let mut hash: u64 = 0;
        let mut i = min_size;
        while i < center {
            hash = (hash << 1).wrapping_add(self.gear[source[i] as usize]);
            if hash & self.mask_strict == 0 {
                return i;
            }
            i += 1;
        }
        while i < remaining {
            hash = (hash << 1).wrapping_add(self.gear[source[i] as usize]);
            if hash & self.mask_loose == 0 {
                return i;
            }
            i += 1;
        }
        remaining
    }

    /// `(offset, length)` of every chunk in `data`.
    pub fn boundaries(&self, data: &[u8]) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(data.len() / self.cfg.avg_size + 1);
        let mut offset = 0;
        while offset < data.len() {
            let len = self.cut(&data[offset..]);
            out.push((offset, len));
            offset += len;
        }
        out
    }

    pub fn slices<'a>(&self, data: &'a [u8]) -> Vec<&'a [u8]> {
        self.boundaries(data)
            .into_iter()
            .map(|(o, l)| &data[o..o + l])
            .collect()
    }

    pub fn chunk(&self, data: &[u8]) -> Result<Vec<PlainChunk>> {
        if data.is_empty() {
            return Err(Error::EmptyData);
        }
        Ok(self
            .slices(data)
            .into_iter()
            .map(|s| PlainChunk(s.to_vec()))
            .collect())
    }
}

/// Splits `data` into content-defined chunks.
pub fn chunk_stream(data: &[u8], cfg: &ChunkerConfig) -> Result<Vec<PlainChunk>> {
    Chunker::new(*cfg)?.chunk(data)
}
