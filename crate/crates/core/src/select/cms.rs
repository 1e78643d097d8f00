use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::Fingerprint;

/// Count-Min Sketch over fingerprints.
///
/// Row `i` hashes a fingerprint with SHA-256 keyed by a per-row seed and
/// reduces the first eight bytes modulo the width. Estimates never
/// undercount; with `N` insertions the overcount exceeds `(e / w) * N` with
/// probability at most `e^-d`.
#[derive(Clone)]
pub struct CountMinSketch {
    depth: usize,
    width: usize,
    counters: Vec<u64>,
    row_keys: Vec<[u8; 32]>,
    total: u64,
}

impl std::fmt::Debug for CountMinSketch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CountMinSketch")
            .field("depth", &self.depth)
            .field("width", &self.width)
            .field("total", &self.total)
            .finish()
    }
}

impl CountMinSketch {
    pub const DEFAULT_DEPTH: usize = 4;
    pub const DEFAULT_WIDTH: usize = 1 << 16;

    pub fn new(depth: usize, width: usize, seed: u64) -> Result<Self> {
        if depth == 0 || width == 0 {
            return Err(Error::Config("sketch depth and width must be positive".into()));
        }
        let row_keys = (0..depth as u64)
            .map(|i| {
                Sha256::new()
                    .chain_update(b"pmdedup-cms-row")
                    .chain_update(seed.to_le_bytes())
                    .chain_update(i.to_le_bytes())
                    .finalize()
                    .into()
            })
            .collect();
        Ok(Self {
            depth,
            width,
            counters: vec![0; depth * width],
            row_keys,
            total: 0,
        })
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::new(Self::DEFAULT_DEPTH, Self::DEFAULT_WIDTH, seed).expect("valid defaults")
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Total successful insertions `N`.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Relative error bound `e / w`.
    pub fn epsilon(&self) -> f64 {
        std::f64::consts::E / self.width as f64
    }

    /// Failure probability `e^-d`.
    pub fn delta(&self) -> f64 {
        (-(self.depth as f64)).exp()
    }

    pub fn memory_bytes(&self) -> usize {
        self.counters.len() * std::mem::size_of::<u64>() + self.row_keys.len() * 32
    }

    fn slot(&self, row: usize, fp: &Fingerprint) -> usize {
        let d = Sha256::new()
            .chain_update(self.row_keys[row])
            .chain_update(fp.0)
            .finalize();
        let h = u64::from_le_bytes(d[..8].try_into().unwrap());
        row * self.width + (h % self.width as u64) as usize
    }

    /// Increments one counter per row. Fails without modifying anything if
    /// any of them would overflow.
    pub fn add(&mut self, fp: &Fingerprint) -> Result<()> {
        let slots: Vec<usize> = (0..self.depth).map(|r| self.slot(r, fp)).collect();
        if slots.iter().any(|&s| self.counters[s] == u64::MAX) {
            return Err(Error::Saturated);
        }
        for s in slots {
            self.counters[s] += 1;
        }
        self.total += 1;
        Ok(())
    }

    /// Row-wise minimum.
    pub fn frequency(&self, fp: &Fingerprint) -> u64 {
        (0..self.depth)
            .map(|r| self.counters[self.slot(r, fp)])
            .min()
            .unwrap_or(0)
    }

    #[cfg(test)]
    pub(crate) fn fill(&mut self, value: u64) {
        self.counters.iter_mut().for_each(|c| *c = value);
    }
}
