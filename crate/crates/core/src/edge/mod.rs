//! Edge server: untrusted host holding a local LRU index, plus an enclave
//! holding the share-index and proof-of-ownership pools. Upload sessions
//! run ownership proofs first and then a tiered duplicate check (local
//! index, share-index, cloud).

pub mod enclave;
pub mod lru;
pub mod monitor;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

pub use enclave::{Enclave, FileCheck, PoolOutcome};
pub use lru::LruSet;
pub use monitor::{HitRatioMonitor, UpdateRequest};

use crate::cloud::{CheckRequest, CheckResponse, CheckVerdict, CloudServer, PoolRequest};
use crate::error::{Error, Result};
use crate::mle::AttestationReport;
use crate::pow::{ChunkVerdict, FileVerdict, PowChallenge, PowResponse, SuspicionTracker};
use crate::sim::LatencyModel;
use crate::types::{ClientId, EdgeId, Fingerprint, VirtualTime};
use crate::wire::{put_fps, read_fps, Message, Reader, Writer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeConfig {
    pub enclave_capacity: usize,
    pub ecall_cost_us: u64,
    pub local_chunk_capacity: usize,
    pub local_file_capacity: usize,
    /// Disables the local index (the no-local ablation).
    pub use_local: bool,
    pub monitor_window: usize,
    pub monitor_threshold: f64,
    pub suspicion_threshold: u32,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self {
            enclave_capacity: 64 << 20,
            ecall_cost_us: 5,
            local_chunk_capacity: 1 << 16,
            local_file_capacity: 1 << 12,
            use_local: true,
            monitor_window: 10_000,
            monitor_threshold: 0.3,
            suspicion_threshold: 3,
        }
    }
}

impl EdgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.monitor_window == 0 {
            return Err(Error::Config("monitor_window must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.monitor_threshold) {
            return Err(Error::Config("monitor_threshold must lie in [0, 1]".into()));
        }
        if self.suspicion_threshold == 0 {
            return Err(Error::Config("suspicion_threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Recently uploaded file hashes and chunk fingerprints, kept outside the
/// enclave.
#[derive(Debug, Clone)]
pub struct LocalIndex {
    pub chunks: LruSet<Fingerprint>,
    pub files: LruSet<Fingerprint>,
}

impl LocalIndex {
    pub fn new(chunk_capacity: usize, file_capacity: usize) -> Self {
        Self {
            chunks: LruSet::new(chunk_capacity),
            files: LruSet::new(file_capacity),
        }
    }
}

/// Where a chunk's duplicate status was resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    HitLocal,
    HitShare,
    HitCloud,
    Unique,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TierCounts {
    pub local: u64,
    pub share: u64,
    pub cloud: u64,
    pub unique: u64,
}

impl TierCounts {
    pub fn add(&mut self, tier: Tier) {
        match tier {
            Tier::HitLocal => self.local += 1,
            Tier::HitShare => self.share += 1,
            Tier::HitCloud => self.cloud += 1,
            Tier::Unique => self.unique += 1,
        }
    }

    pub fn merge(&mut self, other: &TierCounts) {
        self.local += other.local;
        self.share += other.share;
        self.cloud += other.cloud;
        self.unique += other.unique;
    }

    pub fn total(&self) -> u64 {
        self.local + self.share + self.cloud + self.unique
    }
}

/// First message of an upload session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UploadBegin {
    pub client: ClientId,
    pub file_hash: Fingerprint,
    /// Ciphertext fingerprints in file order, duplicates included.
    pub chunks: Vec<Fingerprint>,
}

impl Message for UploadBegin {
    fn encode(&self, w: &mut Writer) {
        w.put_u32(self.client.0);
        w.put_fp(&self.file_hash);
        put_fps(w, &self.chunks);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            client: ClientId(r.u32()?),
            file_hash: r.fp()?,
            chunks: read_fps(r)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionOutcome {
    /// One per chunk occurrence.
    pub tiers: Vec<Tier>,
    /// Positions of the chunks the client must upload (first occurrences).
    pub upload: Vec<usize>,
    pub pow_time: VirtualTime,
    pub check_time: VirtualTime,
    pub pow_failures: u32,
    pub cloud_round_trips: u32,
    /// Chunks proven through a cloud real-time challenge.
    pub realtime: u32,
    pub update: Option<UpdateRequest>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeStats {
    pub sessions: u64,
    pub pool_requests: u64,
    pub realtime_fallbacks: u64,
    pub pow_failures: u64,
    pub aborted: u64,
    pub update_requests: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Verified,
    Failed,
    New,
}

pub struct EdgeServer {
    id: EdgeId,
    cfg: EdgeConfig,
    enclave: Enclave,
    local: LocalIndex,
    monitor: HitRatioMonitor,
    suspicion: SuspicionTracker,
    stats: EdgeStats,
}

impl std::fmt::Debug for EdgeServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EdgeServer")
            .field("id", &self.id)
            .field("enclave", &self.enclave)
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

/// Wraps a responder so that challenge and response bytes are tallied.
fn metered<'a>(
    respond: &'a mut dyn FnMut(&PowChallenge) -> Result<PowResponse>,
    bytes: &'a mut usize,
) -> impl FnMut(&PowChallenge) -> Result<PowResponse> + 'a {
    move |chal| {
        let resp = respond(chal)?;
        *bytes += chal.encoded_len() + resp.encoded_len();
        Ok(resp)
    }
}

impl EdgeServer {
    /// Starts an edge server whose enclave runs `code`.
    pub fn launch(id: EdgeId, cfg: EdgeConfig, code: &[u8], seed: u64) -> Result<(Self, AttestationReport)> {
        cfg.validate()?;
        let (enclave, report) = Enclave::launch(id, code, cfg.enclave_capacity, seed);
        let edge = Self {
            id,
            local: LocalIndex::new(cfg.local_chunk_capacity, cfg.local_file_capacity),
            monitor: HitRatioMonitor::new(id, cfg.monitor_window, cfg.monitor_threshold)?,
            suspicion: SuspicionTracker::new(cfg.suspicion_threshold),
            enclave,
            cfg,
            stats: EdgeStats::default(),
        };
        Ok((edge, report))
    }

    /// Launches an edge server and attests it to `cloud`.
    pub fn attach(id: EdgeId, cfg: EdgeConfig, code: &[u8], seed: u64, cloud: &mut CloudServer) -> Result<Self> {
        let (mut edge, report) = Self::launch(id, cfg, code, seed)?;
        let public = cloud.attach_edge(&report, seed)?;
        edge.enclave.connect(cloud.config().cloud_id, &public)?;
        Ok(edge)
    }

    pub fn id(&self) -> EdgeId {
        self.id
    }

    pub fn config(&self) -> &EdgeConfig {
        &self.cfg
    }

    pub fn stats(&self) -> EdgeStats {
        self.stats
    }

    pub fn enclave(&self) -> &Enclave {
        &self.enclave
    }

    pub fn enclave_mut(&mut self) -> &mut Enclave {
        &mut self.enclave
    }

    pub fn local_index(&self) -> &LocalIndex {
        &self.local
    }

    pub fn is_suspicious(&self, client: ClientId) -> bool {
        self.suspicion.is_suspicious(client)
    }

    /// Resizes the local index, e.g. to track a share of cloud data.
    pub fn resize_local(&mut self, chunks: usize, files: usize) {
        self.local.chunks.set_capacity(chunks);
        self.local.files.set_capacity(files);
    }

    fn ecall_time(&self, n: u64) -> VirtualTime {
        VirtualTime::from_micros(self.cfg.ecall_cost_us * n)
    }

    /// Sealed report of items needing pools, for the next rebuild.
    pub fn report(&mut self) -> Result<Vec<u8>> {
        let local = &self.local;
        let (files, chunks): (Vec<Fingerprint>, Vec<Fingerprint>) = if self.cfg.use_local {
            (local.files.iter().copied().collect(), local.chunks.iter().copied().collect())
        } else {
            (Vec::new(), Vec::new())
        };
        self.enclave.seal_report(&files, &chunks)
    }

    /// Installs a sealed epoch delta from the cloud.
    pub fn apply_delta(&mut self, frame: &[u8]) -> Result<()> {
        self.enclave.apply_delta(frame)?;
        self.suspicion.reset_epoch();
        self.monitor.reset();
        Ok(())
    }

    fn fail(&mut self, client: ClientId, out: &mut SessionOutcome) -> Result<()> {
        out.pow_failures += 1;
        self.stats.pow_failures += 1;
        if self.suspicion.record_failure(client) {
            self.stats.aborted += 1;
            return Err(Error::SessionAborted(client.0));
        }
        Ok(())
    }

    fn apply_file_check(
        &mut self,
        client: ClientId,
        check: FileCheck,
        status: &mut HashMap<Fingerprint, Status>,
        out: &mut SessionOutcome,
    ) -> Result<bool> {
        match check.verdict {
            FileVerdict::Verified => {
                for fp in check.chunks {
                    if let Some(s) = status.get_mut(&fp) {
                        *s = Status::Verified;
                    }
                }
                Ok(true)
            }
            FileVerdict::Failed { chunk_ok } => {
                for (fp, ok) in check.chunks.iter().zip(chunk_ok) {
                    if let Some(s) = status.get_mut(fp) {
                        *s = if ok { Status::Verified } else { Status::Failed };
                    }
                }
                self.fail(client, out)?;
                Ok(false)
            }
            FileVerdict::FallbackToChunks => Ok(false),
        }
    }

    /// Runs one upload session: ownership proofs, then the tiered check.
    /// `respond` answers challenges on the client's behalf.
    pub fn session(
        &mut self,
        begin: &UploadBegin,
        respond: &mut dyn FnMut(&PowChallenge) -> Result<PowResponse>,
        cloud: &mut CloudServer,
        net: &LatencyModel,
    ) -> Result<SessionOutcome> {
        let client = begin.client;
        if self.suspicion.is_suspicious(client) {
            self.stats.aborted += 1;
            return Err(Error::SessionAborted(client.0));
        }
        self.stats.sessions += 1;
        let mut out = SessionOutcome::default();

        let mut first: Vec<(Fingerprint, usize)> = Vec::new();
        let mut seen: HashSet<Fingerprint> = HashSet::new();
        for (i, fp) in begin.chunks.iter().enumerate() {
            if seen.insert(*fp) {
                first.push((*fp, i));
            }
        }
        // Absent entries are still unresolved.
        let mut status: HashMap<Fingerprint, Status> = HashMap::new();

        let ecalls_start = self.enclave.ecalls();
        let mut edge_bytes = begin.encoded_len();

        // Ownership: file level first.
        let file_check = {
            let mut respond = metered(respond, &mut edge_bytes);
            self.enclave.verify_file(&begin.file_hash, &mut respond)
        };
        let mut file_verified = false;
        let mut need_file_pool = false;
        match file_check {
            Ok(check) => {
                if check.verdict == FileVerdict::FallbackToChunks {
                    need_file_pool = true;
                }
                let mut interim: HashMap<Fingerprint, Status> =
                    first.iter().map(|(fp, _)| (*fp, Status::New)).collect();
                let matched: HashSet<Fingerprint> = check.chunks.iter().copied().collect();
                file_verified = self.apply_file_check(client, check, &mut interim, &mut out)?;
                for (fp, s) in interim {
                    if matched.contains(&fp) {
                        status.insert(fp, s);
                    }
                }
            }
            Err(Error::Exhausted(_)) => need_file_pool = true,
            Err(e) => return Err(e),
        }

        // Chunk level for whatever the file check left open.
        let mut pending: Vec<(Fingerprint, usize)> = Vec::new();
        for &(fp, idx) in &first {
            if status.contains_key(&fp) {
                continue;
            }
            let verdict = {
                let mut respond = metered(respond, &mut edge_bytes);
                self.enclave.verify_chunk(&fp, idx as u32, &mut respond)?
            };
            match verdict {
                ChunkVerdict::Verified => {
                    status.insert(fp, Status::Verified);
                }
                ChunkVerdict::Failed => {
                    status.insert(fp, Status::Failed);
                    self.fail(client, &mut out)?;
                }
                ChunkVerdict::NoPairsAvailable => pending.push((fp, idx)),
            }
        }

        let mut cloud_known: HashSet<Fingerprint> = HashSet::new();
        let mut cloud_time = VirtualTime::ZERO;
        if need_file_pool || !pending.is_empty() {
            let req = PoolRequest {
                files: if need_file_pool { vec![begin.file_hash] } else { Vec::new() },
                chunks: pending.iter().map(|p| p.0).collect(),
            };
            let frame = self.enclave.seal_pool_request(&req)?;
            let reply = cloud.pool_request(self.id, &frame)?;
            self.stats.pool_requests += 1;
            out.cloud_round_trips += 1;
            cloud_time = cloud_time + net.cloud_exchange(frame.len() + reply.len());
            let got = self.enclave.accept_pool_reply(&reply)?;
            for fp in &got.new_chunks {
                status.insert(*fp, Status::New);
            }
            cloud_known.extend(got.granted_chunks.iter().copied());
            if got.installed && got.granted_files.contains(&begin.file_hash) {
                let check = {
                    let mut respond = metered(respond, &mut edge_bytes);
                    self.enclave.verify_file(&begin.file_hash, &mut respond)?
                };
                for fp in &check.chunks {
                    cloud_known.insert(*fp);
                }
                let mut interim: HashMap<Fingerprint, Status> = pending
                    .iter()
                    .filter(|(fp, _)| !status.contains_key(fp))
                    .map(|(fp, _)| (*fp, Status::New))
                    .collect();
                file_verified = self.apply_file_check(client, check.clone(), &mut interim, &mut out)?;
                let matched: HashSet<Fingerprint> = check.chunks.into_iter().collect();
                for (fp, s) in interim {
                    if matched.contains(&fp) {
                        status.insert(fp, s);
                    }
                }
            }
            let mut realtime_bytes = 0usize;
            for &(fp, idx) in &pending {
                if status.contains_key(&fp) {
                    continue;
                }
                let mut verdict = ChunkVerdict::NoPairsAvailable;
                if got.installed {
                    let mut respond = metered(respond, &mut edge_bytes);
                    verdict = self.enclave.verify_chunk(&fp, idx as u32, &mut respond)?;
                }
                if verdict == ChunkVerdict::NoPairsAvailable {
                    let mut respond = metered(respond, &mut realtime_bytes);
                    verdict = match cloud.realtime_verify_chunk(&fp, idx as u32, &mut respond) {
                        Ok(v) => v,
                        Err(Error::UnknownId(_)) => {
                            status.insert(fp, Status::New);
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    out.realtime += 1;
                    self.stats.realtime_fallbacks += 1;
                    cloud_known.insert(fp);
                }
                match verdict {
                    ChunkVerdict::Verified => {
                        status.insert(fp, Status::Verified);
                    }
                    _ => {
                        status.insert(fp, Status::Failed);
                        self.fail(client, &mut out)?;
                    }
                }
            }
            if realtime_bytes > 0 {
                out.cloud_round_trips += 1;
                cloud_time = cloud_time + net.cloud_exchange(realtime_bytes);
            }
        }
        let pow_ecalls = self.enclave.ecalls() - ecalls_start;
        out.pow_time = net.edge_exchange(edge_bytes) + cloud_time + self.ecall_time(pow_ecalls);

        // Tiered duplicate check over verified chunks only.
        let ecalls_check = self.enclave.ecalls();
        let local_file_hit = self.cfg.use_local && file_verified && self.local.files.touch(&begin.file_hash);
        let mut tier: HashMap<Fingerprint, Tier> = HashMap::with_capacity(first.len());
        let mut ask_cloud: Vec<Fingerprint> = Vec::new();
        for &(fp, _) in &first {
            let t = match status.get(&fp) {
                Some(Status::Verified) => {
                    if local_file_hit || (self.cfg.use_local && self.local.chunks.touch(&fp)) {
                        Some(Tier::HitLocal)
                    } else if self.tiered_share(&fp, &status)? {
                        Some(Tier::HitShare)
                    } else if cloud_known.contains(&fp) {
                        Some(Tier::HitCloud)
                    } else {
                        ask_cloud.push(fp);
                        None
                    }
                }
                Some(Status::Failed | Status::New) | None => Some(Tier::Unique),
            };
            if let Some(t) = t {
                tier.insert(fp, t);
            }
        }
        let mut check_cloud = VirtualTime::ZERO;
        if !ask_cloud.is_empty() {
            let req = CheckRequest { fps: ask_cloud };
            let resp = CheckResponse {
                verdicts: cloud.cloud_check(&req.fps),
            };
            out.cloud_round_trips += 1;
            check_cloud = net.cloud_exchange(req.encoded_len() + resp.encoded_len());
            for (fp, v) in req.fps.iter().zip(resp.verdicts) {
                tier.insert(
                    *fp,
                    if v == CheckVerdict::Duplicate {
                        Tier::HitCloud
                    } else {
                        Tier::Unique
                    },
                );
            }
        }
        out.check_time = check_cloud + self.ecall_time(self.enclave.ecalls() - ecalls_check);

        for &(fp, idx) in &first {
            let t = tier[&fp];
            if t == Tier::Unique {
                out.upload.push(idx);
            }
            if let Some(u) = self.monitor.record(matches!(t, Tier::HitLocal | Tier::HitShare)) {
                self.stats.update_requests += 1;
                out.update = Some(u);
            }
        }
        out.tiers = begin.chunks.iter().map(|fp| tier[fp]).collect();

        if self.cfg.use_local {
            self.local.files.insert(begin.file_hash);
            for &(fp, _) in &first {
                self.local.chunks.insert(fp);
            }
        }
        Ok(out)
    }

    /// Share-index probe, allowed only for chunks whose ownership was
    /// proven in this session.
    fn tiered_share(&mut self, fp: &Fingerprint, status: &HashMap<Fingerprint, Status>) -> Result<bool> {
        if status.get(fp) != Some(&Status::Verified) {
            return Err(Error::NotVerified(*fp));
        }
        Ok(self.enclave.share_contains(fp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::CloudConfig;
    use crate::mle::Measurement;
    use crate::par::ExecPolicy;
    use crate::pow::{gen_response, Scope, Segments};
    use crate::types::{fingerprint_of, CipherChunk, FileRecipe, RecipeEntry};

    const CODE: &[u8] = b"edge-enclave";

    struct File {
        hash: Fingerprint,
        chunks: Vec<CipherChunk>,
    }

    impl File {
        fn new(tag: u8, n: usize) -> Self {
            let chunks: Vec<CipherChunk> =
                (0..n).map(|i| CipherChunk(vec![tag.wrapping_add(i as u8); 1500 + i])).collect();
            Self {
                hash: fingerprint_of(&[tag, 0xF1]).unwrap(),
                chunks,
            }
        }

        fn fps(&self) -> Vec<Fingerprint> {
            self.chunks.iter().map(|c| fingerprint_of(&c.0).unwrap()).collect()
        }

        fn begin(&self, client: u32) -> UploadBegin {
            UploadBegin {
                client: ClientId(client),
                file_hash: self.hash,
                chunks: self.fps(),
            }
        }

        fn respond(&self, chal: &PowChallenge) -> Result<PowResponse> {
            let bits = match chal.scope {
                Scope::File => gen_response(
                    &chal.seed,
                    &Segments::new(self.chunks.iter().map(|c| c.0.as_slice())),
                    chal.k,
                )?,
                Scope::Chunk(i) => gen_response(&chal.seed, self.chunks[i as usize].0.as_slice(), chal.k)?,
            };
            Ok(PowResponse { bits })
        }

        fn store(&self, cloud: &mut CloudServer) {
            let fps = self.fps();
            cloud
                .store_chunks(fps.iter().copied().zip(self.chunks.iter().cloned()).collect())
                .unwrap();
            cloud
                .store_recipe(FileRecipe {
                    file_hash: self.hash,
                    chunks: fps
                        .iter()
                        .zip(&self.chunks)
                        .map(|(fp, c)| RecipeEntry {
                            fingerprint: *fp,
                            length: c.len() as u64,
                        })
                        .collect(),
                })
                .unwrap();
        }
    }

    fn setup(cfg: EdgeConfig) -> (CloudServer, EdgeServer) {
        let mut cloud =
            CloudServer::new(CloudConfig::default(), Measurement::of_code(CODE), ExecPolicy::Sequential).unwrap();
        let edge = EdgeServer::attach(EdgeId(0), cfg, CODE, 9, &mut cloud).unwrap();
        (cloud, edge)
    }

    fn run(edge: &mut EdgeServer, cloud: &mut CloudServer, f: &File, client: u32) -> Result<SessionOutcome> {
        edge.session(&f.begin(client), &mut |c| f.respond(c), cloud, &LatencyModel::default())
    }

    #[test]
    fn new_file_is_all_unique_after_one_pool_request() {
        let (mut cloud, mut edge) = setup(EdgeConfig::default());
        let f = File::new(1, 5);
        let out = run(&mut edge, &mut cloud, &f, 0).unwrap();
        assert!(out.tiers.iter().all(|t| *t == Tier::Unique));
        assert_eq!(out.upload, vec![0, 1, 2, 3, 4]);
        assert_eq!(out.cloud_round_trips, 1);
        assert_eq!(out.pow_failures, 0);
    }

    #[test]
    fn stored_file_verifies_at_file_level_then_hits_locally() {
        let (mut cloud, mut edge) = setup(EdgeConfig::default());
        let f = File::new(2, 4);
        f.store(&mut cloud);
        let first = run(&mut edge, &mut cloud, &f, 0).unwrap();
        assert!(first.tiers.iter().all(|t| *t == Tier::HitCloud));
        assert!(first.upload.is_empty());
        assert_eq!(first.realtime, 0);
        let second = run(&mut edge, &mut cloud, &f, 1).unwrap();
        assert!(second.tiers.iter().all(|t| *t == Tier::HitLocal));
        assert_eq!(second.cloud_round_trips, 0);
        assert!(second.pow_time < first.pow_time);
    }

    #[test]
    fn no_local_ablation_never_hits_locally() {
        let cfg = EdgeConfig {
            use_local: false,
            ..EdgeConfig::default()
        };
        let (mut cloud, mut edge) = setup(cfg);
        let f = File::new(3, 3);
        f.store(&mut cloud);
        for c in 0..3 {
            let out = run(&mut edge, &mut cloud, &f, c).unwrap();
            assert!(out.tiers.iter().all(|t| *t == Tier::HitCloud));
        }
    }

    #[test]
    fn share_index_hits_after_delta() {
        let (mut cloud, mut edge) = setup(EdgeConfig {
            use_local: false,
            ..EdgeConfig::default()
        });
        let f = File::new(4, 6);
        f.store(&mut cloud);
        let reports = [(edge.id(), edge.report().unwrap())].into_iter().collect();
        let deltas = cloud.epoch_rebuild(&reports).unwrap();
        edge.apply_delta(&deltas[&edge.id()]).unwrap();
        assert!(edge.enclave().share_len() > 0);
        // A different file sharing those chunks.
        let g = File {
            hash: fingerprint_of(b"other file").unwrap(),
            chunks: f.chunks.clone(),
        };
        let out = run(&mut edge, &mut cloud, &g, 0).unwrap();
        assert!(out.tiers.contains(&Tier::HitShare));
        assert!(out.upload.is_empty());
    }

    #[test]
    fn repeated_chunks_share_one_verdict() {
        let (mut cloud, mut edge) = setup(EdgeConfig::default());
        let mut f = File::new(5, 2);
        f.chunks.push(f.chunks[0].clone());
        let out = run(&mut edge, &mut cloud, &f, 0).unwrap();
        assert_eq!(out.tiers.len(), 3);
        assert_eq!(out.upload, vec![0, 1]);
    }

    #[test]
    fn cheating_client_is_suspended() {
        let (mut cloud, mut edge) = setup(EdgeConfig::default());
        let victims: Vec<File> = (0..4).map(|i| File::new(10 + i, 2)).collect();
        for v in &victims {
            v.store(&mut cloud);
        }
        let mut aborted = false;
        for v in &victims {
            let liar = |c: &PowChallenge| -> Result<PowResponse> {
                let k = c.k as usize;
                Ok(PowResponse {
                    bits: crate::pow::BitString::from_fn(k, |_| false),
                })
            };
            let mut liar = liar;
            match edge.session(&v.begin(7), &mut liar, &mut cloud, &LatencyModel::default()) {
                Ok(out) => {
                    assert!(out.pow_failures > 0);
                    assert!(out.tiers.iter().all(|t| *t == Tier::Unique));
                }
                Err(Error::SessionAborted(7)) => aborted = true,
                Err(e) => panic!("{e}"),
            }
        }
        assert!(aborted);
        assert!(edge.is_suspicious(ClientId(7)));
        assert!(!edge.is_suspicious(ClientId(8)));
    }

    #[test]
    fn update_request_when_hits_are_rare() {
        let (mut cloud, mut edge) = setup(EdgeConfig {
            monitor_window: 8,
            ..EdgeConfig::default()
        });
        let mut fired = false;
        for i in 0..4 {
            let out = run(&mut edge, &mut cloud, &File::new(40 + 10 * i, 5), 0).unwrap();
            fired |= out.update.is_some();
        }
        assert!(fired);
    }

    #[test]
    fn upload_begin_round_trip() {
        let b = File::new(6, 3).begin(2);
        assert_eq!(UploadBegin::from_bytes(&b.to_bytes()).unwrap(), b);
    }
}
