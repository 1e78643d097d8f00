//! The trusted part of an edge server. Everything here is reachable only
//! through methods that model ecalls; share-index contents and pools never
//! leave in plaintext.

use std::collections::{BTreeMap, BTreeSet};

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce};
use sha2::{Digest, Sha256};

use crate::cloud::{EdgeReport, EpochDelta, PoolGrant, PoolReply, PoolRequest};
use crate::error::{Error, Result};
use crate::mle::{AttestationReport, EnclaveKeyExchange, Measurement, SecureChannel};
use crate::pow::{self, ChunkVerdict, FileVerdict, PowChallenge, PowLevel, PowMaps, PowResponse};
use crate::types::{EdgeId, Fingerprint};
use crate::wire::{put_fps, read_fps, Message, Reader, Writer};

/// Bytes charged per share-index entry (fingerprint and epoch tag).
const SHARE_ENTRY_BYTES: usize = 40;

/// Result of a file-level check together with the chunk list of the F entry
/// it ran against (empty on fallback).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileCheck {
    pub verdict: FileVerdict,
    pub chunks: Vec<Fingerprint>,
}

/// What a pool reply told the enclave.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolOutcome {
    /// False when the grants did not fit and were dropped.
    pub installed: bool,
    pub granted_files: Vec<Fingerprint>,
    pub granted_chunks: Vec<Fingerprint>,
    pub new_files: Vec<Fingerprint>,
    pub new_chunks: Vec<Fingerprint>,
}

#[derive(Debug, Clone, Default)]
struct State {
    share: BTreeMap<Fingerprint, u64>,
    by_age: BTreeSet<(u64, Fingerprint)>,
    pools: PowMaps,
}

impl State {
    fn footprint(&self) -> usize {
        self.share.len() * SHARE_ENTRY_BYTES + self.pools.footprint()
    }

    fn remove_share(&mut self, fp: &Fingerprint) {
        if let Some(epoch) = self.share.remove(fp) {
            self.by_age.remove(&(epoch, *fp));
            self.pools.remove(PowLevel::Chunk, fp);
        }
    }

    fn add_share(&mut self, fp: Fingerprint, epoch: u64) {
        if let Some(old) = self.share.insert(fp, epoch) {
            self.by_age.remove(&(old, fp));
        }
        self.by_age.insert((epoch, fp));
    }

    fn install(&mut self, g: PoolGrant) {
        self.pools.install(g.level, g.id, g.chunks, g.size, g.pairs);
    }

    /// Frees room for `extra` more bytes: spent pool entries go first, then
    /// share-index entries from the oldest epoch.
    fn relieve(&mut self, extra: usize, capacity: usize) -> Result<()> {
        if self.footprint() + extra <= capacity {
            return Ok(());
        }
        for level in [PowLevel::Chunk, PowLevel::File] {
            let spent: Vec<Fingerprint> = self
                .pools
                .ids(level)
                .filter(|id| self.pools.entry(level, id).is_some_and(|e| e.unused() == 0))
                .copied()
                .collect();
            for id in spent {
                if level == PowLevel::File || !self.share.contains_key(&id) {
                    self.pools.remove(level, &id);
                }
            }
        }
        while self.footprint() + extra > capacity {
            let Some(&(_, fp)) = self.by_age.iter().next() else {
                break;
            };
            self.remove_share(&fp);
        }
        let needed = self.footprint() + extra;
        if needed > capacity {
            return Err(Error::CapacityExceeded { needed, capacity });
        }
        Ok(())
    }
}

fn grant_bytes(grants: &[PoolGrant]) -> usize {
    grants
        .iter()
        .map(|g| 56 + g.chunks.len() * 40 + g.pairs.iter().map(|p| p.footprint()).sum::<usize>())
        .sum()
}

pub struct Enclave {
    edge: EdgeId,
    kx: Option<EnclaveKeyExchange>,
    channel: Option<SecureChannel>,
    state: State,
    capacity: usize,
    epoch: u64,
    sealing_key: [u8; 32],
    sealed_count: u64,
    ecalls: u64,
}

impl std::fmt::Debug for Enclave {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Enclave")
            .field("edge", &self.edge)
            .field("epoch", &self.epoch)
            .field("share_len", &self.state.share.len())
            .field("footprint", &self.state.footprint())
            .finish_non_exhaustive()
    }
}

impl Enclave {
    /// Loads `code` into a fresh enclave and produces its attestation report.
    pub fn launch(edge: EdgeId, code: &[u8], capacity: usize, seed: u64) -> (Self, AttestationReport) {
        let measurement = Measurement::of_code(code);
        let (kx, report) = EnclaveKeyExchange::new(edge, measurement, seed);
        let sealing_key: [u8; 32] = Sha256::new()
            .chain_update(b"pmdedup-sealing")
            .chain_update(measurement.0)
            .chain_update(edge.0.to_le_bytes())
            .chain_update(seed.to_le_bytes())
            .finalize()
            .into();
        let enclave = Self {
            edge,
            kx: Some(kx),
            channel: None,
            state: State {
                pools: PowMaps::new(edge.0),
                ..State::default()
            },
            capacity,
            epoch: 0,
            sealing_key,
            sealed_count: 0,
            ecalls: 0,
        };
        (enclave, report)
    }

    /// Completes the key exchange with the cloud's public key.
    pub fn connect(&mut self, cloud_id: u32, cloud_public: &[u8; 32]) -> Result<()> {
        self.ecalls += 1;
        let kx = self.kx.take().ok_or(Error::Config("enclave already connected".into()))?;
        self.channel = Some(SecureChannel::enclave(&kx.finish(cloud_id, cloud_public)));
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        self.channel.is_some()
    }

    pub fn edge(&self) -> EdgeId {
        self.edge
    }

    pub fn ecalls(&self) -> u64 {
        self.ecalls
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn footprint(&self) -> usize {
        self.state.footprint()
    }

    pub fn share_len(&self) -> usize {
        self.state.share.len()
    }

    pub fn enable_audit(&mut self) {
        self.state.pools.enable_audit();
    }

    pub fn audit_log(&self) -> &[pow::IssueRecord] {
        self.state.pools.audit_log()
    }

    /// Unused pairs held for an item (zero if none).
    pub fn unused_pairs(&self, level: PowLevel, id: &Fingerprint) -> usize {
        self.state.pools.entry(level, id).map_or(0, |e| e.unused())
    }

    fn channel(&mut self) -> Result<&mut SecureChannel> {
        self.channel.as_mut().ok_or(Error::ChannelDown(self.edge.0))
    }

    pub fn share_contains(&mut self, fp: &Fingerprint) -> bool {
        self.ecalls += 1;
        self.state.share.contains_key(fp)
    }

    pub fn verify_file(
        &mut self,
        file_hash: &Fingerprint,
        respond: &mut dyn FnMut(&PowChallenge) -> Result<PowResponse>,
    ) -> Result<FileCheck> {
        self.ecalls += 1;
        let chunks = self
            .state
            .pools
            .entry(PowLevel::File, file_hash)
            .map(|e| e.chunks.iter().map(|c| c.0).collect())
            .unwrap_or_default();
        let verdict = pow::verify_file(&mut self.state.pools, file_hash, respond)?;
        Ok(FileCheck { verdict, chunks })
    }

    pub fn verify_chunk(
        &mut self,
        fp: &Fingerprint,
        index: u32,
        respond: &mut dyn FnMut(&PowChallenge) -> Result<PowResponse>,
    ) -> Result<ChunkVerdict> {
        self.ecalls += 1;
        pow::verify_chunk(&mut self.state.pools, fp, index, respond)
    }

    pub fn seal_pool_request(&mut self, req: &PoolRequest) -> Result<Vec<u8>> {
        self.ecalls += 1;
        let bytes = req.to_bytes();
        Ok(self.channel()?.seal(&bytes))
    }

    /// Opens a pool reply and installs its grants if they fit.
    pub fn accept_pool_reply(&mut self, frame: &[u8]) -> Result<PoolOutcome> {
        self.ecalls += 1;
        let reply = PoolReply::from_bytes(&self.channel()?.open(frame)?)?;
        let mut out = PoolOutcome {
            new_files: reply.new_files,
            new_chunks: reply.new_chunks,
            ..PoolOutcome::default()
        };
        for g in &reply.grants {
            match g.level {
                PowLevel::File => out.granted_files.push(g.id),
                PowLevel::Chunk => out.granted_chunks.push(g.id),
            }
        }
        let extra = grant_bytes(&reply.grants);
        if self.state.relieve(extra, self.capacity).is_ok() {
            for g in reply.grants {
                self.state.install(g);
            }
            out.installed = true;
        }
        Ok(out)
    }

    /// Applies a sealed [`EpochDelta`]. On any error the enclave keeps its
    /// previous share-index and pools.
    pub fn apply_delta(&mut self, frame: &[u8]) -> Result<()> {
        self.ecalls += 1;
        let delta = EpochDelta::from_bytes(&self.channel()?.open(frame)?)?;
        let mut next = self.state.clone();
        for fp in &delta.removed {
            next.remove_share(fp);
        }
        for fp in &delta.added {
            next.add_share(*fp, delta.epoch);
        }
        let extra = grant_bytes(&delta.pools);
        // Entries added by this delta are the last to go.
        next.relieve(extra, self.capacity)?;
        for g in delta.pools {
            if g.level == PowLevel::Chunk
                && delta.added.binary_search(&g.id).is_ok()
                && !next.share.contains_key(&g.id)
            {
                continue;
            }
            next.install(g);
        }
        self.state = next;
        self.epoch = delta.epoch;
        Ok(())
    }

    /// Seals the list of items whose pools are missing or spent: the
    /// given local-index entries plus every share-index entry.
    pub fn seal_report(&mut self, local_files: &[Fingerprint], local_chunks: &[Fingerprint]) -> Result<Vec<u8>> {
        self.ecalls += 1;
        let pools = &self.state.pools;
        let starved = |level, id: &Fingerprint| pools.entry(level, id).map_or(true, |e| e.unused() == 0);
        let mut need_files: Vec<Fingerprint> =
            local_files.iter().filter(|f| starved(PowLevel::File, f)).copied().collect();
        let chunks: BTreeSet<Fingerprint> = local_chunks
            .iter()
            .chain(self.state.share.keys())
            .filter(|c| starved(PowLevel::Chunk, c))
            .copied()
            .collect();
        need_files.sort_unstable();
        need_files.dedup();
        let report = EdgeReport {
            need_files,
            need_chunks: chunks.into_iter().collect(),
        };
        let bytes = report.to_bytes();
        Ok(self.channel()?.seal(&bytes))
    }

    /// Encrypts the share-index under the enclave sealing key for storage
    /// outside the enclave.
    pub fn seal_state(&mut self) -> Vec<u8> {
        self.ecalls += 1;
        let mut w = Writer::new();
        w.put_u64(self.epoch);
        let share: Vec<Fingerprint> = self.state.share.keys().copied().collect();
        put_fps(&mut w, &share);
        for fp in &share {
            w.put_u64(self.state.share[fp]);
        }
        self.sealed_count += 1;
        let mut nonce = [0u8; 12];
        nonce[4..].copy_from_slice(&self.sealed_count.to_le_bytes());
        let ct = Aes256Gcm::new_from_slice(&self.sealing_key)
            .expect("32-byte key")
            .encrypt(Nonce::from_slice(&nonce), w.into_inner().as_slice())
            .expect("in-memory AES-GCM encryption cannot fail");
        let mut out = nonce.to_vec();
        out.extend_from_slice(&ct);
        out
    }

    /// Restores a share-index sealed by this enclave. Pools are not sealed
    /// and must be re-requested.
    pub fn unseal_state(&mut self, blob: &[u8]) -> Result<()> {
        self.ecalls += 1;
        if blob.len() < 12 + 16 {
            return Err(Error::AuthFailure);
        }
        let (nonce, ct) = blob.split_at(12);
        let pt = Aes256Gcm::new_from_slice(&self.sealing_key)
            .expect("32-byte key")
            .decrypt(Nonce::from_slice(nonce), ct)
            .map_err(|_| Error::AuthFailure)?;
        let mut r = Reader::new(&pt);
        let epoch = r.u64()?;
        let fps = read_fps(&mut r)?;
        let mut state = State {
            pools: PowMaps::new(self.edge.0),
            ..State::default()
        };
        for fp in fps {
            state.add_share(fp, r.u64()?);
        }
        r.finish()?;
        self.state = state;
        self.epoch = epoch;
        Ok(())
    }
}
