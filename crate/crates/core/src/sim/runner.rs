//! Discrete-event replay of a workload through one upload mode.
//!
//! Clients work through their share of each snapshot one file at a time;
//! the next upload starts when the previous one finishes in virtual time.
//! Events are ordered by (time, client), so runs are deterministic.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet, VecDeque};
use std::io::Write;

use sha2::{Digest, Sha256};

use crate::client::{self, acquire_keys, ChunkPlan, UploadMode, UploadPlan, UploadReport};
use crate::cloud::CloudServer;
use crate::edge::{EdgeServer, TierCounts};
use crate::error::{Error, Result};
use crate::mle::{encrypt_chunk, KeyServer, Measurement, MleKey, RateLimit};
use crate::par::{self, ExecPolicy};
use crate::sim::config::RunConfig;
use crate::sim::workload::{ContentKey, Trace, Workload};
use crate::types::{fingerprint_of, ClientId, EdgeId, Fingerprint, PlainChunk, VirtualTime};

/// Code image the simulated enclaves are measured over.
pub const ENCLAVE_CODE: &[u8] = b"pmdedup edge enclave v1";

pub const CSV_HEADER: [&str; 12] = [
    "mode",
    "dataset_profile",
    "cloud_ratio",
    "overall_ms",
    "pow_ms",
    "check_ms",
    "transfer_ms",
    "bytes_sent",
    "hit_local",
    "hit_share",
    "hit_cloud",
    "unique",
];

const GIB: f64 = (1u64 << 30) as f64;

pub(crate) fn derive_seed(seed: u64, label: &str) -> u64 {
    let d = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(label.as_bytes())
        .finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Encrypted form of one distinct file content.
#[derive(Debug, Clone)]
pub struct CachedFile {
    pub file_hash: Fingerprint,
    pub plain_fps: Vec<Fingerprint>,
    pub chunks: Vec<ChunkPlan>,
}

/// A workload with its trace and every distinct file already encrypted.
///
/// Encryption is deterministic, so uploads reuse the cached ciphertext;
/// key acquisition is still charged per upload against the rate-limited
/// key server.
#[derive(Debug)]
pub struct Prepared {
    pub workload: Workload,
    pub trace: Trace,
    pub realized_ratio: f64,
    key_seed: u64,
    cache: HashMap<ContentKey, CachedFile>,
}

impl Prepared {
    pub fn new(cfg: &RunConfig, exec: ExecPolicy) -> Result<Self> {
        let workload = Workload::generate(&cfg.workload, cfg.seed, exec)?;
        Self::from_workload(workload, cfg.seed, exec)
    }

    pub fn from_workload(workload: Workload, seed: u64, exec: ExecPolicy) -> Result<Self> {
        let trace = workload.trace(exec);
        let realized_ratio = trace.stats().dedup_ratio();
        let key_seed = derive_seed(seed, "key-server");
        let mut seen = HashSet::new();
        let distinct: Vec<_> = trace
            .files
            .iter()
            .filter(|(_, key, _)| seen.insert(*key))
            .map(|(f, key, _)| (*f, *key))
            .collect();
        let chunker = workload.chunker();
        let built = par::map_slice(exec, &distinct, |(f, key)| -> Result<(ContentKey, CachedFile)> {
            let bytes = workload.file_bytes(f);
            let slices = chunker.slices(&bytes);
            let plain_fps: Vec<Fingerprint> = slices.iter().map(|s| fingerprint_of(s)).collect::<Result<_>>()?;
            // A private unthrottled server with the same secret.
            let keys = KeyServer::from_seed(key_seed, RateLimit::default()).derive_keys(
                ClientId(0),
                &plain_fps,
                VirtualTime::ZERO,
            )?;
            let chunks = slices
                .iter()
                .zip(keys)
                .map(|(s, key)| {
                    let cipher = encrypt_chunk(&PlainChunk(s.to_vec()), &key);
                    let fp = fingerprint_of(cipher.as_slice())?;
                    Ok(ChunkPlan {
                        plain_len: s.len() as u64,
                        key,
                        cipher,
                        fp,
                    })
                })
                .collect::<Result<_>>()?;
            Ok((
                *key,
                CachedFile {
                    file_hash: fingerprint_of(&bytes)?,
                    plain_fps,
                    chunks,
                },
            ))
        });
        let cache = built.into_iter().collect::<Result<_>>()?;
        Ok(Self {
            workload,
            trace,
            realized_ratio,
            key_seed,
            cache,
        })
    }

    pub fn cached(&self, key: &ContentKey) -> &CachedFile {
        &self.cache[key]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UploadRecord {
    pub snapshot: u32,
    pub client: ClientId,
    pub start: VirtualTime,
    pub report: UploadReport,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModeSummary {
    pub uploads: u64,
    pub logical_bytes: u64,
    pub bytes_sent: u64,
    pub recipe_bytes: u64,
    pub overall: VirtualTime,
    pub pow: VirtualTime,
    pub check: VirtualTime,
    pub transfer: VirtualTime,
    pub tiers: TierCounts,
    pub epochs: u64,
    pub update_requests: u64,
    pub makespan: VirtualTime,
}

impl ModeSummary {
    /// Milliseconds of `t` scaled to one GiB of logical upload:
    /// `t_ms * 2^30 / logical_bytes`.
    pub fn per_gib_ms(&self, t: VirtualTime) -> f64 {
        if self.logical_bytes == 0 {
            return 0.0;
        }
        t.as_millis_f64() * GIB / self.logical_bytes as f64
    }

    /// Share of chunk lookups answered at the edge.
    pub fn edge_hit_ratio(&self) -> f64 {
        let n = self.tiers.total();
        if n == 0 {
            return 0.0;
        }
        (self.tiers.local + self.tiers.share) as f64 / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeRun {
    pub mode: UploadMode,
    pub records: Vec<UploadRecord>,
    pub summary: ModeSummary,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub profile: String,
    pub cloud_ratio: f64,
    pub mutation_rate: f64,
    pub realized_ratio: f64,
    pub runs: Vec<ModeRun>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

impl Experiment {
    pub fn run(&self, mode: UploadMode) -> Option<&ModeRun> {
        self.runs.iter().find(|r| r.mode == mode)
    }

    pub fn violations(&self) -> Vec<String> {
        self.runs
            .iter()
            .flat_map(|r| r.violations.iter().map(move |v| format!("{}: {v}", r.mode.label())))
            .collect()
    }

    /// One row per upload. `prefix` values go in front of every row.
    pub fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>, prefix: &[String]) -> Result<()> {
        for run in &self.runs {
            for rec in &run.records {
                let r = &rec.report;
                let mut row: Vec<String> = prefix.to_vec();
                row.extend([
                    run.mode.label().to_string(),
                    self.profile.clone(),
                    self.cloud_ratio.to_string(),
                    format!("{:.6}", r.overall.as_millis_f64()),
                    format!("{:.6}", r.pow.as_millis_f64()),
                    format!("{:.6}", r.check.as_millis_f64()),
                    format!("{:.6}", r.transfer.as_millis_f64()),
                    r.bytes_sent.to_string(),
                    r.tiers.local.to_string(),
                    r.tiers.share.to_string(),
                    r.tiers.cloud.to_string(),
                    r.tiers.unique.to_string(),
                ]);
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        Ok(())
    }

    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        self.write_rows(&mut w, &[])?;
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }

    /// Per-mode totals, raw and normalized to one GiB of logical upload.
    pub fn summary_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "mode",
            "dataset_profile",
            "cloud_ratio",
            "uploads",
            "logical_bytes",
            "bytes_sent",
            "overall_ms",
            "pow_ms",
            "check_ms",
            "transfer_ms",
            "overall_ms_per_gib",
            "pow_ms_per_gib",
            "check_ms_per_gib",
            "transfer_ms_per_gib",
            "edge_hit_ratio",
            "epochs",
            "update_requests",
        ])
        .map_err(csv_err)?;
        for run in &self.runs {
            let s = &run.summary;
            w.write_record([
                run.mode.label().to_string(),
                self.profile.clone(),
                self.cloud_ratio.to_string(),
                s.uploads.to_string(),
                s.logical_bytes.to_string(),
                s.bytes_sent.to_string(),
                format!("{:.6}", s.overall.as_millis_f64()),
                format!("{:.6}", s.pow.as_millis_f64()),
                format!("{:.6}", s.check.as_millis_f64()),
                format!("{:.6}", s.transfer.as_millis_f64()),
                format!("{:.6}", s.per_gib_ms(s.overall)),
                format!("{:.6}", s.per_gib_ms(s.pow)),
                format!("{:.6}", s.per_gib_ms(s.check)),
                format!("{:.6}", s.per_gib_ms(s.transfer)),
                format!("{:.6}", s.edge_hit_ratio()),
                s.epochs.to_string(),
                s.update_requests.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }
}

/// Generates the workload and replays it under every configured mode.
pub fn run_experiment(cfg: &RunConfig, exec: ExecPolicy) -> Result<Experiment> {
    cfg.validate()?;
    let prepared = Prepared::new(cfg, exec)?;
    run_prepared(cfg, &prepared, exec)
}

/// Replays an already prepared workload, e.g. across a parameter sweep.
pub fn run_prepared(cfg: &RunConfig, prepared: &Prepared, exec: ExecPolicy) -> Result<Experiment> {
    cfg.validate()?;
    let runs = cfg
        .modes
        .iter()
        .map(|&mode| run_mode(cfg, prepared, mode, exec))
        .collect::<Result<_>>()?;
    Ok(Experiment {
        profile: prepared.workload.spec().profile.clone(),
        cloud_ratio: cfg.latency.cloud_ratio,
        mutation_rate: prepared.workload.mutation_rate(),
        realized_ratio: prepared.realized_ratio,
        runs,
    })
}

/// Writes a file straight into the cloud, bypassing every check.
pub fn store_direct(cloud: &mut CloudServer, file: &CachedFile) -> Result<()> {
    let mut seen = HashSet::new();
    let new: Vec<_> = file
        .chunks
        .iter()
        .filter(|c| seen.insert(c.fp) && !cloud.contains(&c.fp))
        .map(|c| (c.fp, c.cipher.clone()))
        .collect();
    if !new.is_empty() {
        cloud.store_chunks(new)?;
    }
    let plan = UploadPlan {
        client: ClientId(u32::MAX),
        file_hash: file.file_hash,
        chunks: file.chunks.clone(),
        keygen_time: VirtualTime::ZERO,
    };
    cloud.store_recipe(plan.recipe())
}

/// Share-index rebuild with every edge's report; afterwards each local
/// index is resized to track the cloud.
pub fn run_epoch(cloud: &mut CloudServer, edges: &mut [EdgeServer], local_fraction: Option<f64>) -> Result<()> {
    let mut reports = BTreeMap::new();
    for e in edges.iter_mut() {
        reports.insert(e.id(), e.report()?);
    }
    let deltas = cloud.epoch_rebuild(&reports)?;
    for e in edges.iter_mut() {
        if let Some(d) = deltas.get(&e.id()) {
            e.apply_delta(d)?;
        }
        if let Some(f) = local_fraction {
            let chunks = ((f * cloud.chunk_count() as f64).ceil() as usize).max(64);
            let files = e.config().local_file_capacity;
            e.resize_local(chunks, files);
        }
    }
    Ok(())
}

pub fn new_cloud(cfg: &RunConfig, exec: ExecPolicy, epoch_bytes: u64) -> Result<CloudServer> {
    let mut cloud_cfg = cfg.cloud.clone();
    cloud_cfg.seed = derive_seed(cfg.seed ^ cloud_cfg.seed, "cloud");
    cloud_cfg.epoch_bytes = epoch_bytes;
    CloudServer::new(cloud_cfg, Measurement::of_code(ENCLAVE_CODE), exec)
}

pub fn run_mode(cfg: &RunConfig, prepared: &Prepared, mode: UploadMode, exec: ExecPolicy) -> Result<ModeRun> {
    let workload = &prepared.workload;
    let trace = &prepared.trace;
    let snapshots = workload.snapshots().len();
    let preload = cfg.preload_snapshots();
    let epoch_bytes = cfg
        .run
        .epoch_bytes
        .unwrap_or_else(|| (workload.logical_bytes() / snapshots as u64).max(1));
    let mut cloud = new_cloud(cfg, exec, epoch_bytes)?;
    let mut keys = KeyServer::from_seed(prepared.key_seed, cfg.key_server);
    let net = &cfg.latency;

    let mut edges = Vec::new();
    if mode.uses_edge() {
        let mut edge_cfg = cfg.edge.clone();
        edge_cfg.use_local = mode == UploadMode::PmDedup && edge_cfg.use_local;
        for e in 0..cfg.topology.edges as u32 {
            let seed = derive_seed(cfg.seed, &format!("edge-{e}"));
            edges.push(EdgeServer::attach(EdgeId(e), edge_cfg.clone(), ENCLAVE_CODE, seed, &mut cloud)?);
        }
    }

    // Ciphertext size of every chunk the cloud should hold.
    let mut held: HashMap<Fingerprint, u64> = HashMap::new();
    let mut queues: Vec<VecDeque<usize>> = vec![VecDeque::new(); cfg.topology.clients];
    let mut per_snapshot = vec![0usize; snapshots];
    for (i, (f, key, _)) in trace.files.iter().enumerate() {
        let s = f.snapshot as usize;
        if s < preload {
            let file = prepared.cached(key);
            store_direct(&mut cloud, file)?;
            for c in &file.chunks {
                held.insert(c.fp, c.cipher.len() as u64);
            }
        } else {
            queues[per_snapshot[s] % cfg.topology.clients].push_back(i);
        }
        per_snapshot[s] += 1;
    }

    let mut summary = ModeSummary::default();
    if !edges.is_empty() {
        run_epoch(&mut cloud, &mut edges, cfg.run.local_fraction)?;
        summary.epochs += 1;
    }

    let mut violations = Vec::new();
    let mut records = Vec::new();
    let mut restores: Vec<(usize, Vec<MleKey>)> = Vec::new();
    let mut events: BinaryHeap<Reverse<(VirtualTime, u32)>> = (0..cfg.topology.clients as u32)
        .filter(|&c| !queues[c as usize].is_empty())
        .map(|c| Reverse((VirtualTime::ZERO, c)))
        .collect();

    while let Some(Reverse((now, c))) = events.pop() {
        let i = queues[c as usize].pop_front().expect("scheduled clients have work");
        let (fref, key, _) = &trace.files[i];
        let file = prepared.cached(key);
        let client = ClientId(c);
        let (_, keygen_time) = acquire_keys(client, &file.plain_fps, &mut keys, now, net, &cfg.client)?;
        let plan = UploadPlan {
            client,
            file_hash: file.file_hash,
            chunks: file.chunks.clone(),
            keygen_time,
        };

        let mut seen = HashSet::new();
        let expected_new: u64 = plan
            .chunks
            .iter()
            .filter(|ch| seen.insert(ch.fp) && !cloud.contains(&ch.fp))
            .map(|ch| ch.cipher.len() as u64)
            .sum();
        let all_cipher: u64 = plan.chunks.iter().map(|ch| ch.cipher.len() as u64).sum();

        let n_edges = edges.len().max(1);
        let report = client::upload(
            mode,
            &plan,
            edges.get_mut(c as usize % n_edges),
            &mut cloud,
            net,
            &cfg.client,
        )?;

        let id = records.len();
        if report.tiers.total() != plan.chunks.len() as u64 {
            violations.push(format!("upload {id}: {} tier verdicts for {} chunks", report.tiers.total(), plan.chunks.len()));
        }
        if report.pow_failures > 0 {
            violations.push(format!("upload {id}: {} ownership failures for an honest client", report.pow_failures));
        }
        let want = if mode == UploadMode::TargetBaseline { all_cipher } else { expected_new };
        if report.chunk_bytes != want {
            violations.push(format!("upload {id}: sent {} chunk bytes, expected {want}", report.chunk_bytes));
        }
        if report.overall < report.pow + report.check + report.transfer {
            violations.push(format!("upload {id}: overall latency below its components"));
        }
        for ch in &plan.chunks {
            held.insert(ch.fp, ch.cipher.len() as u64);
        }
        if cfg.run.restore_every > 0 && id % cfg.run.restore_every == 0 {
            restores.push((i, plan.keys()));
        }

        summary.uploads += 1;
        summary.logical_bytes += report.logical_bytes;
        summary.bytes_sent += report.bytes_sent;
        summary.recipe_bytes += report.recipe_bytes;
        summary.overall += report.overall;
        summary.pow += report.pow;
        summary.check += report.check;
        summary.transfer += report.transfer;
        summary.tiers.merge(&report.tiers);
        summary.update_requests += u64::from(report.update_requested);
        let done = now + report.overall;
        summary.makespan = summary.makespan.max(done);

        let epoch_due = !edges.is_empty() && (cloud.rebuild_due() || report.update_requested);
        records.push(UploadRecord {
            snapshot: fref.snapshot,
            client,
            start: now,
            report,
        });
        if epoch_due {
            run_epoch(&mut cloud, &mut edges, cfg.run.local_fraction)?;
            summary.epochs += 1;
        }
        if !queues[c as usize].is_empty() {
            events.push(Reverse((done, c)));
        }
    }

    let expected_bytes: u64 = held.values().sum();
    if cloud.stored_bytes() != expected_bytes {
        violations.push(format!("cloud stores {} bytes, expected {expected_bytes}", cloud.stored_bytes()));
    }
    for (i, keys) in restores {
        let (fref, key, _) = &trace.files[i];
        let restored = client::restore(&cloud, &prepared.cached(key).file_hash, &keys)?;
        if restored != workload.file_bytes(fref) {
            violations.push(format!("restore of trace entry {i} differs from the original"));
        }
    }

    Ok(ModeRun {
        mode,
        records,
        summary,
        violations,
    })
}
