//! The cloud server: full fingerprint index over an append-only chunk log,
//! file recipes, frequency tracking for share-index selection, and
//! production of proof-of-ownership pools for edge servers.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mle::{AttestationReport, CloudKeyExchange, Measurement, SecureChannel};
use crate::par::{self, ExecPolicy};
use crate::pow::{
    allocate_pool, verify_chunk, ChunkVerdict, PowChallenge, PowConfig, PowLevel, PowMaps,
    PowPair, PowResponse,
};
use crate::select::{
    select_share_index, CandidateTracker, CountMinSketch, ExactCounter, Selection,
    SelectionScheme, ShareIndex, ShareIndexSpec,
};
use crate::types::{fingerprint_of, CipherChunk, EdgeId, FileRecipe, Fingerprint};
use crate::wire::{put_fps, read_fps, Message, Reader, Writer};

/// Audit tag for pairs the cloud issues itself.
pub const CLOUD_HOLDER: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CloudConfig {
    pub cloud_id: u32,
    pub seed: u64,
    pub share: ShareIndexSpec,
    /// Share-index size as a fraction of distinct stored chunks; when zero,
    /// `share.total_slots` is used as given.
    pub share_coverage: f64,
    pub sketch_depth: usize,
    pub sketch_width: usize,
    pub scheme: SelectionScheme,
    /// Logical bytes uploaded between scheduled share-index rebuilds.
    pub epoch_bytes: u64,
    pub pow: PowConfig,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            cloud_id: 0,
            seed: 0,
            share: ShareIndexSpec::default(),
            share_coverage: 0.10,
            sketch_depth: CountMinSketch::DEFAULT_DEPTH,
            sketch_width: CountMinSketch::DEFAULT_WIDTH,
            scheme: SelectionScheme::CmsLocality,
            epoch_bytes: 1 << 30,
            pow: PowConfig::default(),
        }
    }
}

fn put_level(w: &mut Writer, level: PowLevel) {
    w.put_u8(match level {
        PowLevel::File => 0,
        PowLevel::Chunk => 1,
    });
}

fn read_level(r: &mut Reader<'_>) -> Result<PowLevel> {
    match r.u8()? {
        0 => Ok(PowLevel::File),
        1 => Ok(PowLevel::Chunk),
        _ => Err(Error::Malformed("pow level")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckVerdict {
    Duplicate,
    Unique,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckRequest {
    pub fps: Vec<Fingerprint>,
}

impl Message for CheckRequest {
    fn encode(&self, w: &mut Writer) {
        put_fps(w, &self.fps);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self { fps: read_fps(r)? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResponse {
    pub verdicts: Vec<CheckVerdict>,
}

impl Message for CheckResponse {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.verdicts.len() as u64);
        for v in &self.verdicts {
            w.put_u8(u8::from(*v == CheckVerdict::Duplicate));
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.count(1)?;
        let verdicts = (0..n)
            .map(|_| match r.u8()? {
                1 => Ok(CheckVerdict::Duplicate),
                0 => Ok(CheckVerdict::Unique),
                _ => Err(Error::Malformed("check verdict")),
            })
            .collect::<Result<_>>()?;
        Ok(Self { verdicts })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreChunks {
    pub chunks: Vec<(Fingerprint, CipherChunk)>,
}

impl Message for StoreChunks {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.chunks.len() as u64);
        for (fp, c) in &self.chunks {
            w.put_fp(fp);
            w.put_bytes(c.as_slice());
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.count(40)?;
        let chunks = (0..n)
            .map(|_| Ok((r.fp()?, CipherChunk(r.bytes()?.to_vec()))))
            .collect::<Result<_>>()?;
        Ok(Self { chunks })
    }
}

/// Pools for one F or C entry, granted exclusively to one edge server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolGrant {
    pub level: PowLevel,
    pub id: Fingerprint,
    /// File grants: `(chunk fingerprint, ciphertext length)` in recipe order.
    pub chunks: Vec<(Fingerprint, u64)>,
    pub size: u64,
    pub pairs: Vec<PowPair>,
}

impl Message for PoolGrant {
    fn encode(&self, w: &mut Writer) {
        put_level(w, self.level);
        w.put_fp(&self.id);
        w.put_u64(self.chunks.len() as u64);
        for (fp, len) in &self.chunks {
            w.put_fp(fp);
            w.put_u64(*len);
        }
        w.put_u64(self.size);
        w.put_u64(self.pairs.len() as u64);
        for p in &self.pairs {
            p.encode(w);
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let level = read_level(r)?;
        let id = r.fp()?;
        let n = r.count(40)?;
        let chunks = (0..n).map(|_| Ok((r.fp()?, r.u64()?))).collect::<Result<_>>()?;
        let size = r.u64()?;
        let m = r.count(60)?;
        let pairs = (0..m).map(|_| PowPair::decode(r)).collect::<Result<_>>()?;
        Ok(Self {
            level,
            id,
            chunks,
            size,
            pairs,
        })
    }
}

/// Edge request for fresh pairs. Listed items the cloud does not hold come
/// back as new data, so the reply doubles as a cloud duplicate check.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolRequest {
    pub files: Vec<Fingerprint>,
    pub chunks: Vec<Fingerprint>,
}

impl Message for PoolRequest {
    fn encode(&self, w: &mut Writer) {
        put_fps(w, &self.files);
        put_fps(w, &self.chunks);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            files: read_fps(r)?,
            chunks: read_fps(r)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolReply {
    pub grants: Vec<PoolGrant>,
    pub new_files: Vec<Fingerprint>,
    pub new_chunks: Vec<Fingerprint>,
}

impl Message for PoolReply {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.grants.len() as u64);
        for g in &self.grants {
            g.encode(w);
        }
        put_fps(w, &self.new_files);
        put_fps(w, &self.new_chunks);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let n = r.count(50)?;
        let grants = (0..n).map(|_| PoolGrant::decode(r)).collect::<Result<_>>()?;
        Ok(Self {
            grants,
            new_files: read_fps(r)?,
            new_chunks: read_fps(r)?,
        })
    }
}

/// What an edge server piggybacks on a rebuild: local-index entries whose
/// pools are missing or used up.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeReport {
    pub need_files: Vec<Fingerprint>,
    pub need_chunks: Vec<Fingerprint>,
}

impl Message for EdgeReport {
    fn encode(&self, w: &mut Writer) {
        put_fps(w, &self.need_files);
        put_fps(w, &self.need_chunks);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            need_files: read_fps(r)?,
            need_chunks: read_fps(r)?,
        })
    }
}

/// Share-index changes and new pools for one edge server.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EpochDelta {
    pub epoch: u64,
    pub added: Vec<Fingerprint>,
    pub removed: Vec<Fingerprint>,
    pub pools: Vec<PoolGrant>,
}

impl EpochDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.pools.is_empty()
    }
}

impl Message for EpochDelta {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.epoch);
        put_fps(w, &self.added);
        put_fps(w, &self.removed);
        w.put_u64(self.pools.len() as u64);
        for g in &self.pools {
            g.encode(w);
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let epoch = r.u64()?;
        let added = read_fps(r)?;
        let removed = read_fps(r)?;
        let n = r.count(50)?;
        let pools = (0..n).map(|_| PoolGrant::decode(r)).collect::<Result<_>>()?;
        Ok(Self {
            epoch,
            added,
            removed,
            pools,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct IndexEntry {
    slot: usize,
    len: u64,
    refcount: u64,
    /// References added by chunk uploads not yet claimed by a recipe.
    unclaimed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CloudStats {
    pub pairs_generated: u64,
    pub realtime_challenges: u64,
    pub pool_requests: u64,
    pub rebuilds: u64,
}

pub struct CloudServer {
    cfg: CloudConfig,
    exec: ExecPolicy,
    csmk: [u8; 32],
    expected: Measurement,
    log: Vec<Option<CipherChunk>>,
    index: HashMap<Fingerprint, IndexEntry>,
    stored_bytes: u64,
    recipes: HashMap<Fingerprint, (FileRecipe, u64)>,
    sketch: CountMinSketch,
    tracker: CandidateTracker,
    exact: ExactCounter,
    window: Vec<FileRecipe>,
    pow: PowMaps,
    share: ShareIndex,
    epoch: u64,
    links: BTreeMap<EdgeId, SecureChannel>,
    bytes_since_epoch: u64,
    stats: CloudStats,
}

impl std::fmt::Debug for CloudServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CloudServer")
            .field("chunks", &self.index.len())
            .field("stored_bytes", &self.stored_bytes)
            .field("files", &self.recipes.len())
            .field("epoch", &self.epoch)
            .finish()
    }
}

impl CloudServer {
    pub fn new(cfg: CloudConfig, expected: Measurement, exec: ExecPolicy) -> Result<Self> {
        cfg.share.validate()?;
        cfg.pow.validate()?;
        let csmk = crate::mle::hmac_sha256(b"pmdedup-csmk", &[&cfg.seed.to_le_bytes()]);
        let sketch = CountMinSketch::new(cfg.sketch_depth, cfg.sketch_width, cfg.seed)?;
        let tracker = CandidateTracker::for_spec(&cfg.share);
        let mut pow = PowMaps::new(CLOUD_HOLDER);
        pow.enable_audit();
        Ok(Self {
            cfg,
            exec,
            csmk,
            expected,
            log: Vec::new(),
            index: HashMap::new(),
            stored_bytes: 0,
            recipes: HashMap::new(),
            sketch,
            tracker,
            exact: ExactCounter::default(),
            window: Vec::new(),
            pow,
            share: ShareIndex::default(),
            epoch: 0,
            links: BTreeMap::new(),
            bytes_since_epoch: 0,
            stats: CloudStats::default(),
        })
    }

    pub fn config(&self) -> &CloudConfig {
        &self.cfg
    }

    pub fn stats(&self) -> CloudStats {
        self.stats
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn share_index(&self) -> &ShareIndex {
        &self.share
    }

    pub fn sketch(&self) -> &CountMinSketch {
        &self.sketch
    }

    pub fn pow_maps(&self) -> &PowMaps {
        &self.pow
    }

    /// Distinct chunks held.
    pub fn chunk_count(&self) -> usize {
        self.index.len()
    }

    /// Ciphertext bytes held, each distinct chunk counted once.
    pub fn stored_bytes(&self) -> u64 {
        self.stored_bytes
    }

    pub fn refcount(&self, fp: &Fingerprint) -> u64 {
        self.index.get(fp).map_or(0, |e| e.refcount)
    }

    pub fn bytes_since_epoch(&self) -> u64 {
        self.bytes_since_epoch
    }

    pub fn rebuild_due(&self) -> bool {
        self.bytes_since_epoch >= self.cfg.epoch_bytes
    }

    pub fn contains(&self, fp: &Fingerprint) -> bool {
        self.index.contains_key(fp)
    }

    pub fn has_file(&self, file_hash: &Fingerprint) -> bool {
        self.recipes.contains_key(file_hash)
    }

    pub fn cloud_check(&self, fps: &[Fingerprint]) -> Vec<CheckVerdict> {
        fps.iter()
            .map(|fp| {
                if self.index.contains_key(fp) {
                    CheckVerdict::Duplicate
                } else {
                    CheckVerdict::Unique
                }
            })
            .collect()
    }

    /// Stores ciphertext chunks. The whole batch is rejected if any chunk
    /// does not hash to its claimed fingerprint.
    pub fn store_chunks(&mut self, chunks: Vec<(Fingerprint, CipherChunk)>) -> Result<()> {
        let ok = par::map_slice(self.exec, &chunks, |(fp, c)| {
            fingerprint_of(c.as_slice()).is_ok_and(|real| real == *fp)
        });
        if let Some(i) = ok.iter().position(|ok| !ok) {
            return Err(Error::FingerprintMismatch { claimed: chunks[i].0 });
        }
        for (fp, chunk) in chunks {
            match self.index.get_mut(&fp) {
                Some(e) => {
                    e.refcount += 1;
                    e.unclaimed += 1;
                }
                None => {
                    self.stored_bytes += chunk.len() as u64;
                    self.index.insert(
                        fp,
                        IndexEntry {
                            slot: self.log.len(),
                            len: chunk.len() as u64,
                            refcount: 1,
                            unclaimed: 1,
                        },
                    );
                    self.log.push(Some(chunk));
                }
            }
        }
        Ok(())
    }

    /// Records a file. Each recipe entry claims a reference added by
    /// `store_chunks` if one is outstanding, otherwise adds one.
    pub fn store_recipe(&mut self, recipe: FileRecipe) -> Result<()> {
        if let Some(missing) = recipe.fingerprints().find(|fp| !self.index.contains_key(fp)) {
            return Err(Error::DanglingChunk(*missing));
        }
        for fp in recipe.fingerprints() {
            let e = self.index.get_mut(fp).expect("checked above");
            if e.unclaimed > 0 {
                e.unclaimed -= 1;
            } else {
                e.refcount += 1;
            }
            self.sketch.add(fp)?;
            self.tracker.observe(*fp, self.sketch.frequency(fp));
            if self.cfg.scheme == SelectionScheme::Exact {
                self.exact.add(fp);
            }
        }
        self.bytes_since_epoch += recipe.total_len();
        self.window.push(recipe.clone());
        self.recipes
            .entry(recipe.file_hash)
            .and_modify(|(_, n)| *n += 1)
            .or_insert((recipe, 1));
        Ok(())
    }

    pub fn recipe(&self, file_hash: &Fingerprint) -> Option<&FileRecipe> {
        self.recipes.get(file_hash).map(|(r, _)| r)
    }

    pub fn chunk(&self, fp: &Fingerprint) -> Option<&CipherChunk> {
        self.index.get(fp).and_then(|e| self.log[e.slot].as_ref())
    }

    /// Ciphertext chunks of a file in recipe order.
    pub fn fetch_file(&self, file_hash: &Fingerprint) -> Result<Vec<&CipherChunk>> {
        let recipe = self.recipe(file_hash).ok_or(Error::UnknownFile(*file_hash))?;
        recipe
            .fingerprints()
            .map(|fp| self.chunk(fp).ok_or(Error::DanglingChunk(*fp)))
            .collect()
    }

    /// Drops one reference to a file and to each of its chunks; chunks left
    /// without references are reclaimed.
    pub fn delete_file(&mut self, file_hash: &Fingerprint) -> Result<()> {
        let (recipe, refs) = self
            .recipes
            .get_mut(file_hash)
            .ok_or(Error::UnknownFile(*file_hash))?;
        *refs -= 1;
        let recipe = if *refs == 0 {
            let (r, _) = self.recipes.remove(file_hash).expect("present");
            self.pow.remove(PowLevel::File, file_hash);
            r
        } else {
            recipe.clone()
        };
        for fp in recipe.fingerprints() {
            let e = self.index.get_mut(fp).expect("recipe chunks are indexed");
            e.refcount -= 1;
            if e.refcount == 0 && e.unclaimed == 0 {
                let e = self.index.remove(fp).expect("present");
                self.log[e.slot] = None;
                self.stored_bytes -= e.len;
                self.pow.remove(PowLevel::Chunk, fp);
            }
        }
        Ok(())
    }

    /// Verifies an enclave's attestation report and opens a channel to it.
    /// Returns the cloud's key-exchange public key.
    pub fn attach_edge(&mut self, report: &AttestationReport, seed: u64) -> Result<[u8; 32]> {
        let (secret, public) = CloudKeyExchange::accept(self.cfg.cloud_id, &self.expected, report, seed)?;
        self.links.insert(report.edge, SecureChannel::cloud(&secret));
        Ok(public)
    }

    pub fn detach_edge(&mut self, edge: EdgeId) {
        self.links.remove(&edge);
    }

    pub fn edges(&self) -> Vec<EdgeId> {
        self.links.keys().copied().collect()
    }

    fn link(&mut self, edge: EdgeId) -> Result<&mut SecureChannel> {
        self.links.get_mut(&edge).ok_or(Error::ChannelDown(edge.0))
    }

    fn cipher_len(&self, fp: &Fingerprint) -> u64 {
        self.index[fp].len
    }

    /// Generates `n` pairs for each item, in parallel across items.
    fn generate(&mut self, work: &[(PowLevel, Fingerprint, usize)]) -> Result<()> {
        for (level, id, _) in work {
            match level {
                PowLevel::Chunk => self.pow.register_chunk(*id, self.cipher_len(id)),
                PowLevel::File => {
                    let chunks = self.recipes[id]
                        .0
                        .fingerprints()
                        .map(|fp| (*fp, self.cipher_len(fp)))
                        .collect();
                    self.pow.register_file(*id, chunks);
                }
            }
        }
        let starts: Vec<u64> = work
            .iter()
            .map(|(level, id, _)| self.pow.next_generation(*level, id).expect("registered"))
            .collect();
        let this = &*self;
        let generated = par::map_range(this.exec, 0..work.len(), |i| {
            let (level, id, n) = work[i];
            (0..n as u64)
                .map(|g| match level {
                    PowLevel::Chunk => {
                        let data = this.chunk(&id).expect("indexed").as_slice();
                        PowPair::for_chunk(&this.csmk, &id, starts[i] + g, data, &this.cfg.pow)
                    }
                    PowLevel::File => {
                        let parts: Vec<&[u8]> = this
                            .fetch_file(&id)
                            .expect("recipe chunks are stored")
                            .into_iter()
                            .map(CipherChunk::as_slice)
                            .collect();
                        PowPair::for_file(&this.csmk, &id, starts[i] + g, &parts, &this.cfg.pow)
                    }
                })
                .collect::<Result<Vec<_>>>()
        });
        for ((level, id, n), pairs) in work.iter().zip(generated) {
            self.pow.push_generated(*level, id, pairs?)?;
            self.stats.pairs_generated += *n as u64;
        }
        Ok(())
    }

    fn grant(&mut self, level: PowLevel, id: &Fingerprint, edges: usize) -> Result<Vec<PoolGrant>> {
        let parts = allocate_pool(&mut self.pow, level, id, edges)?;
        let entry = self.pow.entry(level, id).expect("allocated");
        let (chunks, size) = (entry.chunks.clone(), entry.size);
        Ok(parts
            .into_iter()
            .map(|pairs| PoolGrant {
                level,
                id: *id,
                chunks: chunks.clone(),
                size,
                pairs,
            })
            .collect())
    }

    /// Serves a sealed [`PoolRequest`] from `edge` with a sealed [`PoolReply`].
    pub fn pool_request(&mut self, edge: EdgeId, frame: &[u8]) -> Result<Vec<u8>> {
        let req = PoolRequest::from_bytes(&self.link(edge)?.open(frame)?)?;
        let reply = self.serve_pools(&req)?;
        Ok(self.link(edge)?.seal(&reply.to_bytes()))
    }

    fn serve_pools(&mut self, req: &PoolRequest) -> Result<PoolReply> {
        self.stats.pool_requests += 1;
        let depth = self.cfg.pow.pool_depth;
        let mut reply = PoolReply::default();
        let mut work = Vec::new();
        for f in uniq(&req.files) {
            if self.recipes.contains_key(&f) {
                work.push((PowLevel::File, f, depth));
            } else {
                reply.new_files.push(f);
            }
        }
        for c in uniq(&req.chunks) {
            if self.index.contains_key(&c) {
                work.push((PowLevel::Chunk, c, depth));
            } else {
                reply.new_chunks.push(c);
            }
        }
        self.generate(&work)?;
        for (level, id, _) in &work {
            reply.grants.extend(self.grant(*level, id, 1)?);
        }
        Ok(reply)
    }

    /// Challenge generated on demand and verified at the cloud, as a
    /// baseline without pre-computation does.
    pub fn realtime_verify_chunk(
        &mut self,
        fp: &Fingerprint,
        index: u32,
        respond: &mut dyn FnMut(&PowChallenge) -> Result<PowResponse>,
    ) -> Result<ChunkVerdict> {
        if !self.index.contains_key(fp) {
            return Err(Error::UnknownId(*fp));
        }
        self.generate(&[(PowLevel::Chunk, *fp, 1)])?;
        self.stats.realtime_challenges += 1;
        verify_chunk(&mut self.pow, fp, index, respond)
    }

    /// Issues a specific pair generation cloud-side.
    pub fn issue_generation(&mut self, level: PowLevel, id: &Fingerprint, generation: u64) -> Result<PowPair> {
        self.pow.issue_generation(level, id, generation)
    }

    fn slots(&self) -> usize {
        if self.cfg.share_coverage > 0.0 {
            ((self.cfg.share_coverage * self.index.len() as f64).ceil() as usize).max(1)
        } else {
            self.cfg.share.total_slots
        }
    }

    /// Computes a share-index under `scheme` without installing it.
    pub fn select(&self, scheme: SelectionScheme) -> Selection {
        let mut spec = self.cfg.share;
        spec.total_slots = self.slots();
        match scheme {
            SelectionScheme::Exact => {
                spec.cms_fraction = 1.0;
                let mut cands: Vec<Fingerprint> = if self.exact.distinct() > 0 {
                    self.exact.keys().copied().collect()
                } else {
                    self.recipe_fps()
                };
                cands.sort_unstable();
                if self.exact.distinct() > 0 {
                    select_share_index(&self.exact, &cands, &[], &spec, self.exec)
                } else {
                    let mut counter = ExactCounter::default();
                    for (r, n) in self.recipes.values() {
                        for fp in r.fingerprints() {
                            for _ in 0..*n {
                                counter.add(fp);
                            }
                        }
                    }
                    select_share_index(&counter, &cands, &[], &spec, self.exec)
                }
            }
            SelectionScheme::Cms => {
                spec.cms_fraction = 1.0;
                select_share_index(&self.sketch, &self.tracker.candidates(), &[], &spec, self.exec)
            }
            SelectionScheme::CmsLocality => select_share_index(
                &self.sketch,
                &self.tracker.candidates(),
                &self.window,
                &spec,
                self.exec,
            ),
        }
    }

    fn recipe_fps(&self) -> Vec<Fingerprint> {
        let set: BTreeSet<Fingerprint> = self
            .recipes
            .values()
            .flat_map(|(r, _)| r.fingerprints().copied())
            .collect();
        set.into_iter().collect()
    }

    /// Memory of the structures the configured scheme keeps between epochs.
    pub fn selection_memory(&self) -> usize {
        match self.cfg.scheme {
            SelectionScheme::Exact => crate::select::FrequencyEstimator::memory_bytes(&self.exact),
            _ => self.sketch.memory_bytes() + self.tracker.memory_bytes(),
        }
    }

    /// Reselects the share-index from traffic since the last rebuild and
    /// installs it. Returns `(added, removed)`.
    pub fn rebuild_share_index(&mut self) -> (Vec<Fingerprint>, Vec<Fingerprint>) {
        if self.window.is_empty() {
            return (Vec::new(), Vec::new());
        }
        let next = self.select(self.cfg.scheme).index;
        let diff = self.share.diff(&next);
        self.share = next;
        self.window.clear();
        let want = self.slots().max(self.cfg.share.total_slots).saturating_mul(4);
        self.tracker.set_capacity(want);
        diff
    }

    /// Rebuilds the share-index, generates pools for new share entries and
    /// for the items each edge reports, splits them disjointly and returns
    /// one sealed [`EpochDelta`] per reporting edge.
    pub fn epoch_rebuild(&mut self, reports: &BTreeMap<EdgeId, Vec<u8>>) -> Result<BTreeMap<EdgeId, Vec<u8>>> {
        let mut decoded = BTreeMap::new();
        for (edge, frame) in reports {
            let report = EdgeReport::from_bytes(&self.link(*edge)?.open(frame)?)?;
            decoded.insert(*edge, report);
        }
        let (added, removed) = self.rebuild_share_index();
        self.stats.rebuilds += 1;
        self.epoch += 1;
        self.bytes_since_epoch = 0;

        let edges: Vec<EdgeId> = decoded.keys().copied().collect();
        let mut wanted: BTreeMap<(PowLevel, Fingerprint), Vec<EdgeId>> = BTreeMap::new();
        for fp in &added {
            wanted.insert((PowLevel::Chunk, *fp), edges.clone());
        }
        for (edge, report) in &decoded {
            for f in uniq(&report.need_files) {
                if self.recipes.contains_key(&f) {
                    wanted.entry((PowLevel::File, f)).or_default().push(*edge);
                }
            }
            for c in uniq(&report.need_chunks) {
                if self.index.contains_key(&c) {
                    let v = wanted.entry((PowLevel::Chunk, c)).or_default();
                    if !v.contains(edge) {
                        v.push(*edge);
                    }
                }
            }
        }
        let depth = self.cfg.pow.pool_depth;
        let work: Vec<_> = wanted
            .iter()
            .filter(|(_, e)| !e.is_empty())
            .map(|((level, id), e)| (*level, *id, depth * e.len()))
            .collect();
        self.generate(&work)?;

        let mut deltas: BTreeMap<EdgeId, EpochDelta> = edges
            .iter()
            .map(|e| {
                (
                    *e,
                    EpochDelta {
                        epoch: self.epoch,
                        added: added.clone(),
                        removed: removed.clone(),
                        pools: Vec::new(),
                    },
                )
            })
            .collect();
        for ((level, id), mut holders) in wanted {
            if holders.is_empty() {
                continue;
            }
            holders.sort_unstable();
            let grants = self.grant(level, &id, holders.len())?;
            for (edge, g) in holders.into_iter().zip(grants) {
                deltas.get_mut(&edge).expect("reporting edge").pools.push(g);
            }
        }
        let mut out = BTreeMap::new();
        for (edge, delta) in deltas {
            let frame = self.link(edge)?.seal(&delta.to_bytes());
            out.insert(edge, frame);
        }
        Ok(out)
    }
}

fn uniq(fps: &[Fingerprint]) -> Vec<Fingerprint> {
    let set: BTreeSet<Fingerprint> = fps.iter().copied().collect();
    set.into_iter().collect()
}
