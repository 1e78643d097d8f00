//! Domain vocabulary shared by every component.

use std::fmt;
use std::ops::{Add, AddAssign, Mul};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};

/// Bytes added to every chunk by authenticated encryption: a 12-byte nonce
/// prefix plus a 16-byte GCM tag.
pub const CIPHER_OVERHEAD: usize = 12 + 16;

/// SHA-256 digest identifying a chunk or a file.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub const LEN: usize = 32;

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", hex::encode(&self.0[..8]))
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// SHA-256 of `data`. Empty input is rejected.
pub fn fingerprint_of(data: &[u8]) -> Result<Fingerprint> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(Fingerprint(Sha256::digest(data).into()))
}

#[derive(Clone, PartialEq, Eq)]
pub struct PlainChunk(pub Vec<u8>);

#[derive(Clone, PartialEq, Eq)]
pub struct CipherChunk(pub Vec<u8>);

macro_rules! bytes_newtype {
    ($t:ty) => {
        impl $t {
            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[u8] {
                &self.0
            }
        }

        impl fmt::Debug for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({} bytes)", stringify!($t), self.0.len())
            }
        }
    };
}

bytes_newtype!(PlainChunk);
bytes_newtype!(CipherChunk);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecipeEntry {
    pub fingerprint: Fingerprint,
    pub length: u64,
}

/// Ordered list of ciphertext chunks making up one file.
///
/// `file_hash` is the SHA-256 of the whole plaintext file; entries are in file
/// order and carry ciphertext lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRecipe {
    pub file_hash: Fingerprint,
    pub chunks: Vec<RecipeEntry>,
}

impl FileRecipe {
    pub fn total_len(&self) -> u64 {
        self.chunks.iter().map(|c| c.length).sum()
    }

    pub fn fingerprints(&self) -> impl Iterator<Item = &Fingerprint> + '_ {
        self.chunks.iter().map(|c| &c.fingerprint)
    }

    /// Encoded size: 32-byte file hash, u64 count, 40 bytes per entry.
    pub fn encoded_len(&self) -> usize {
        Fingerprint::LEN + 8 + self.chunks.len() * (Fingerprint::LEN + 8)
    }

    pub fn encode(&self, w: &mut Writer) {
        w.put_fp(&self.file_hash);
        w.put_u64(self.chunks.len() as u64);
        for c in &self.chunks {
            w.put_fp(&c.fingerprint);
            w.put_u64(c.length);
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let file_hash = r.fp()?;
        let n = r.count(Fingerprint::LEN + 8)?;
        let mut chunks = Vec::with_capacity(n);
        for _ in 0..n {
            chunks.push(RecipeEntry {
                fingerprint: r.fp()?,
                length: r.u64()?,
            });
        }
        Ok(Self { file_hash, chunks })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.encoded_len());
        self.encode(&mut w);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let recipe = Self::decode(&mut r)?;
        r.finish()?;
        Ok(recipe)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClientId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId(pub u32);

/// Virtual nanoseconds. All latency in the simulator is accounted, never slept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VirtualTime(pub u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub fn from_micros(us: u64) -> Self {
        VirtualTime(us * 1_000)
    }

    pub fn from_millis(ms: u64) -> Self {
        VirtualTime(ms * 1_000_000)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        VirtualTime((secs * 1e9).round() as u64)
    }

    pub fn nanos(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn saturating_sub(self, other: VirtualTime) -> VirtualTime {
        VirtualTime(self.0.saturating_sub(other.0))
    }
}

impl Add for VirtualTime {
    type Output = VirtualTime;
    fn add(self, rhs: VirtualTime) -> VirtualTime {
        VirtualTime(self.0 + rhs.0)
    }
}

impl AddAssign for VirtualTime {
    fn add_assign(&mut self, rhs: VirtualTime) {
        self.0 += rhs.0;
    }
}

impl Mul<u64> for VirtualTime {
    type Output = VirtualTime;
    fn mul(self, rhs: u64) -> VirtualTime {
        VirtualTime(self.0 * rhs)
    }
}

impl std::iter::Sum for VirtualTime {
    fn sum<I: Iterator<Item = VirtualTime>>(iter: I) -> Self {
        iter.fold(VirtualTime::ZERO, Add::add)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_data_is_rejected() {
        assert_eq!(fingerprint_of(b""), Err(Error::EmptyData));
    }

    #[test]
    fn sha256_abc_vector() {
        let fp = fingerprint_of(b"abc").unwrap();
        assert_eq!(
            fp.to_string(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn fingerprint_is_deterministic() {
        let a = fingerprint_of(b"some chunk").unwrap();
        let b = fingerprint_of(b"some chunk").unwrap();
        assert_eq!(a, b);
        assert_ne!(a, fingerprint_of(b"some chunk!").unwrap());
    }

    #[test]
    fn fingerprints_order_bytewise() {
        let mut a = Fingerprint([0; 32]);
        let mut b = Fingerprint([0; 32]);
        a.0[0] = 1;
        b.0[31] = 0xff;
        assert!(b < a);
    }

    #[test]
    fn recipe_framing_layout() {
        let recipe = FileRecipe {
            file_hash: Fingerprint([7; 32]),
            chunks: vec![RecipeEntry {
                fingerprint: Fingerprint([9; 32]),
                length: 0x0102,
            }],
        };
        let bytes = recipe.to_bytes();
        assert_eq!(bytes.len(), recipe.encoded_len());
        assert_eq!(&bytes[32..40], &1u64.to_le_bytes());
        assert_eq!(&bytes[72..80], &0x0102u64.to_le_bytes());
        assert_eq!(FileRecipe::from_bytes(&bytes).unwrap(), recipe);
        assert!(FileRecipe::from_bytes(&bytes[..79]).is_err());
    }
}
