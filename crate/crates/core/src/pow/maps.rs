//! The file-level (F) and chunk-level (C) pair maps, pair generation,
//! disjoint allocation to edge servers, and verification.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{
    gen_seed, raw_positions, response_from_positions, BitString, PowChallenge, PowConfig, PowLevel,
    PowResponse, Scope, Segments,
};
use crate::error::{Error, Result};
use crate::par::{self, ExecPolicy};
use crate::types::Fingerprint;
use crate::wire::{Message, Reader, Writer};

/// One pre-computed challenge with its expected responses. File-level pairs
/// also carry the response of every chunk of the file under the same seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowPair {
    pub generation: u64,
    pub seed: [u8; 32],
    pub response: BitString,
    pub chunk_responses: Vec<BitString>,
}

impl PowPair {
    pub fn k(&self) -> u32 {
        self.response.len() as u32
    }

    pub fn footprint(&self) -> usize {
        8 + 32 + 4 + self.response.byte_len()
            + self
                .chunk_responses
                .iter()
                .map(|r| 4 + r.byte_len())
                .sum::<usize>()
    }

    /// Pair for a chunk whose ciphertext is `data`.
    pub fn for_chunk(csmk: &[u8; 32], id: &Fingerprint, generation: u64, data: &[u8], cfg: &PowConfig) -> Result<Self> {
        let seed = gen_seed(csmk, id, generation);
        let raw = raw_positions(&seed, cfg.bits_for(data.len() as u64));
        Ok(Self {
            generation,
            seed,
            response: response_from_positions(&raw, data)?,
            chunk_responses: Vec::new(),
        })
    }

    /// Pair for a file whose chunk ciphertexts, in recipe order, are `parts`.
    pub fn for_file(csmk: &[u8; 32], id: &Fingerprint, generation: u64, parts: &[&[u8]], cfg: &PowConfig) -> Result<Self> {
        let seed = gen_seed(csmk, id, generation);
        let source = Segments::new(parts.iter().copied());
        let k_file = cfg.bits_for(source.bit_len_bytes());
        let k_max = parts
            .iter()
            .map(|p| cfg.bits_for(p.len() as u64))
            .chain([k_file])
            .max()
            .unwrap_or(k_file);
        // Shorter responses use a prefix of the same position stream.
        let raw = raw_positions(&seed, k_max);
        let response = response_from_positions(&raw[..k_file as usize], &source)?;
        let chunk_responses = parts
            .iter()
            .map(|p| response_from_positions(&raw[..cfg.bits_for(p.len() as u64) as usize], *p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            generation,
            seed,
            response,
            chunk_responses,
        })
    }
}

impl Message for PowPair {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.generation);
        w.put_array(&self.seed);
        self.response.encode(w);
        w.put_u64(self.chunk_responses.len() as u64);
        for r in &self.chunk_responses {
            r.encode(w);
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let generation = r.u64()?;
        let seed = r.array()?;
        let response = BitString::decode(r)?;
        let n = r.count(12)?;
        let chunk_responses = (0..n).map(|_| BitString::decode(r)).collect::<Result<_>>()?;
        Ok(Self {
            generation,
            seed,
            response,
            chunk_responses,
        })
    }
}

impl Segments<'_> {
    fn bit_len_bytes(&self) -> u64 {
        super::BitSource::bit_len(self) / 8
    }
}

/// An F or C entry. Unused pairs are issued front to back; `issued` counts
/// pairs handed out by this holder and `idc` counts pairs ever generated
/// for the entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PowEntry {
    /// For file entries: `(chunk fingerprint, ciphertext length)` in recipe order.
    pub chunks: Vec<(Fingerprint, u64)>,
    pub size: u64,
    pairs: VecDeque<PowPair>,
    issued: u64,
    idc: u64,
    shared: BTreeSet<u64>,
}

impl PowEntry {
    pub fn unused(&self) -> usize {
        self.pairs.len()
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn idc(&self) -> u64 {
        self.idc
    }

    pub fn is_shared(&self, generation: u64) -> bool {
        self.shared.contains(&generation)
    }

    pub fn pairs(&self) -> impl Iterator<Item = &PowPair> {
        self.pairs.iter()
    }

    pub fn footprint(&self) -> usize {
        32 + 24 + self.chunks.len() * 40 + self.pairs.iter().map(PowPair::footprint).sum::<usize>()
    }
}

/// One issued challenge, for auditing single use across the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IssueRecord {
    pub level: PowLevel,
    pub id: Fingerprint,
    pub generation: u64,
    pub holder: u32,
}

#[derive(Debug, Clone, Default)]
pub struct PowMaps {
    holder: u32,
    pub(crate) files: BTreeMap<Fingerprint, PowEntry>,
    pub(crate) chunks: BTreeMap<Fingerprint, PowEntry>,
    log: Option<Vec<IssueRecord>>,
}

impl PowMaps {
    /// Maps owned by `holder` (an edge id, or any tag for the cloud).
    pub fn new(holder: u32) -> Self {
        Self {
            holder,
            ..Self::default()
        }
    }

    pub fn enable_audit(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn audit_log(&self) -> &[IssueRecord] {
        self.log.as_deref().unwrap_or(&[])
    }

    fn map(&self, level: PowLevel) -> &BTreeMap<Fingerprint, PowEntry> {
        match level {
            PowLevel::File => &self.files,
            PowLevel::Chunk => &self.chunks,
        }
    }

    fn map_mut(&mut self, level: PowLevel) -> &mut BTreeMap<Fingerprint, PowEntry> {
        match level {
            PowLevel::File => &mut self.files,
            PowLevel::Chunk => &mut self.chunks,
        }
    }

    pub fn entry(&self, level: PowLevel, id: &Fingerprint) -> Option<&PowEntry> {
        self.map(level).get(id)
    }

    pub fn contains(&self, level: PowLevel, id: &Fingerprint) -> bool {
        self.map(level).contains_key(id)
    }

    pub fn len(&self, level: PowLevel) -> usize {
        self.map(level).len()
    }

    pub fn ids(&self, level: PowLevel) -> impl Iterator<Item = &Fingerprint> {
        self.map(level).keys()
    }

    pub fn register_file(&mut self, file_hash: Fingerprint, chunks: Vec<(Fingerprint, u64)>) {
        let size = chunks.iter().map(|c| c.1).sum();
        self.files.entry(file_hash).or_insert_with(|| PowEntry {
            chunks,
            size,
            ..PowEntry::default()
        });
    }

    pub fn register_chunk(&mut self, fp: Fingerprint, size: u64) {
        self.chunks.entry(fp).or_insert_with(|| PowEntry {
            size,
            ..PowEntry::default()
        });
    }

    pub fn remove(&mut self, level: PowLevel, id: &Fingerprint) -> Option<PowEntry> {
        self.map_mut(level).remove(id)
    }

    /// Appends `n` chunk-level pairs computed over `data`.
    pub fn generate_chunk(
        &mut self,
        csmk: &[u8; 32],
        id: &Fingerprint,
        data: &[u8],
        n: usize,
        cfg: &PowConfig,
        exec: ExecPolicy,
    ) -> Result<()> {
        let entry = self.chunks.get_mut(id).ok_or(Error::UnknownId(*id))?;
        let start = entry.idc;
        let pairs = par::map_range(exec, 0..n, |i| {
            PowPair::for_chunk(csmk, id, start + i as u64, data, cfg)
        });
        for p in pairs {
            entry.pairs.push_back(p?);
        }
        entry.idc += n as u64;
        Ok(())
    }

    /// Appends `n` file-level pairs over the chunk ciphertexts `parts`.
    pub fn generate_file(
        &mut self,
        csmk: &[u8; 32],
        id: &Fingerprint,
        parts: &[&[u8]],
        n: usize,
        cfg: &PowConfig,
        exec: ExecPolicy,
    ) -> Result<()> {
        let entry = self.files.get_mut(id).ok_or(Error::UnknownId(*id))?;
        if parts.len() != entry.chunks.len() {
            return Err(Error::Malformed("file parts do not match registered chunks"));
        }
        let start = entry.idc;
        let pairs = par::map_range(exec, 0..n, |i| {
            PowPair::for_file(csmk, id, start + i as u64, parts, cfg)
        });
        for p in pairs {
            entry.pairs.push_back(p?);
        }
        entry.idc += n as u64;
        Ok(())
    }

    /// Next generation number for a registered entry.
    pub fn next_generation(&self, level: PowLevel, id: &Fingerprint) -> Option<u64> {
        self.map(level).get(id).map(|e| e.idc)
    }

    /// Appends pairs generated elsewhere, starting at the entry's `idc`.
    pub(crate) fn push_generated(&mut self, level: PowLevel, id: &Fingerprint, pairs: Vec<PowPair>) -> Result<()> {
        let entry = self.map_mut(level).get_mut(id).ok_or(Error::UnknownId(*id))?;
        for p in pairs {
            debug_assert_eq!(p.generation, entry.idc);
            entry.idc = p.generation + 1;
            entry.pairs.push_back(p);
        }
        Ok(())
    }

    /// Stores pairs received from the cloud.
    pub fn install(
        &mut self,
        level: PowLevel,
        id: Fingerprint,
        chunks: Vec<(Fingerprint, u64)>,
        size: u64,
        pairs: Vec<PowPair>,
    ) {
        let entry = self.map_mut(level).entry(id).or_insert_with(|| PowEntry {
            chunks,
            size,
            ..PowEntry::default()
        });
        for p in pairs {
            entry.idc = entry.idc.max(p.generation + 1);
            entry.pairs.push_back(p);
        }
    }

    /// Hands out the next unused pair; issuing and consuming are one step.
    pub fn issue(&mut self, level: PowLevel, id: &Fingerprint) -> Result<PowPair> {
        let holder = self.holder;
        let entry = self.map_mut(level).get_mut(id).ok_or(Error::UnknownId(*id))?;
        let pair = entry.pairs.pop_front().ok_or(Error::Exhausted(*id))?;
        entry.issued += 1;
        if let Some(log) = self.log.as_mut() {
            log.push(IssueRecord {
                level,
                id: *id,
                generation: pair.generation,
                holder,
            });
        }
        Ok(pair)
    }

    /// Issues a specific generation. Generations allocated to edge servers
    /// are refused.
    pub fn issue_generation(&mut self, level: PowLevel, id: &Fingerprint, generation: u64) -> Result<PowPair> {
        let entry = self.map(level).get(id).ok_or(Error::UnknownId(*id))?;
        if entry.is_shared(generation) {
            return Err(Error::InvalidatedPair { id: *id, generation });
        }
        match entry.pairs.front() {
            Some(p) if p.generation == generation => self.issue(level, id),
            _ => Err(Error::Exhausted(*id)),
        }
    }

    /// Memory held by both maps.
    pub fn footprint(&self) -> usize {
        self.files.values().chain(self.chunks.values()).map(PowEntry::footprint).sum()
    }
}

/// Splits the unused pairs of one entry across `edges` edge servers as
/// evenly as possible (earlier edges take the remainder) and marks them
/// invalid for local use.
pub fn allocate_pool(maps: &mut PowMaps, level: PowLevel, id: &Fingerprint, edges: usize) -> Result<Vec<Vec<PowPair>>> {
    let entry = maps.map_mut(level).get_mut(id).ok_or(Error::UnknownId(*id))?;
    if entry.pairs.is_empty() || edges == 0 {
        return Err(Error::Exhausted(*id));
    }
    let total = entry.pairs.len();
    let mut out = Vec::with_capacity(edges);
    for e in 0..edges {
        let take = total / edges + usize::from(e < total % edges);
        let part: Vec<PowPair> = entry.pairs.drain(..take).collect();
        entry.shared.extend(part.iter().map(|p| p.generation));
        out.push(part);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FileVerdict {
    /// Ownership of the whole file, and so of all its chunks.
    Verified,
    /// The file is not in F; verify chunk by chunk.
    FallbackToChunks,
    /// The file response mismatched. `chunk_ok[i]` tells whether chunk `i`
    /// passed under the same seed.
    Failed { chunk_ok: Vec<bool> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkVerdict {
    Verified,
    Failed,
    NoPairsAvailable,
}

fn matches(
    respond: &mut dyn FnMut(&PowChallenge) -> Result<PowResponse>,
    chal: PowChallenge,
    expected: &BitString,
) -> Result<bool> {
    Ok(respond(&chal)?.bits == *expected)
}

/// File-level check. A mismatch re-challenges each chunk with the seed
/// just spent and compares against the chunk responses stored with it.
pub fn verify_file(
    maps: &mut PowMaps,
    file_hash: &Fingerprint,
    respond: &mut dyn FnMut(&PowChallenge) -> Result<PowResponse>,
) -> Result<FileVerdict> {
    if !maps.contains(PowLevel::File, file_hash) {
        return Ok(FileVerdict::FallbackToChunks);
    }
    let pair = maps.issue(PowLevel::File, file_hash)?;
    let chal = PowChallenge {
        scope: Scope::File,
        id: *file_hash,
        seed: pair.seed,
        k: pair.k(),
    };
    if matches(respond, chal, &pair.response)? {
        return Ok(FileVerdict::Verified);
    }
    let chunks = maps.files[file_hash].chunks.clone();
    let mut chunk_ok = Vec::with_capacity(chunks.len());
    for (i, ((fp, _), expected)) in chunks.iter().zip(&pair.chunk_responses).enumerate() {
        let chal = PowChallenge {
            scope: Scope::Chunk(i as u32),
            id: *fp,
            seed: pair.seed,
            k: expected.len() as u32,
        };
        chunk_ok.push(matches(respond, chal, expected)?);
    }
    Ok(FileVerdict::Failed { chunk_ok })
}

/// Chunk-level check for the chunk at position `index` of the upload.
pub fn verify_chunk(
    maps: &mut PowMaps,
    chunk_fp: &Fingerprint,
    index: u32,
    respond: &mut dyn FnMut(&PowChallenge) -> Result<PowResponse>,
) -> Result<ChunkVerdict> {
    let pair = match maps.issue(PowLevel::Chunk, chunk_fp) {
        Ok(p) => p,
        Err(Error::UnknownId(_) | Error::Exhausted(_)) => return Ok(ChunkVerdict::NoPairsAvailable),
        Err(e) => return Err(e),
    };
    let chal = PowChallenge {
        scope: Scope::Chunk(index),
        id: *chunk_fp,
        seed: pair.seed,
        k: pair.k(),
    };
    Ok(if matches(respond, chal, &pair.response)? {
        ChunkVerdict::Verified
    } else {
        ChunkVerdict::Failed
    })
}
