//! Synthetic backup snapshots with a tunable deduplication ratio.
//!
//! Each snapshot has a cold part and a hot part. The cold part is a base
//! image split into files of fixed-size blocks; between snapshots every
//! block is rewritten with probability `mutation_rate`. Block draws use
//! common random numbers, so the realized ratio falls monotonically as the
//! rate rises and a bisection can hit a target ratio. The hot part is a
//! small pool of files uploaded over and over with Zipf popularity. Hot
//! files are edited periodically and clients move to a new version
//! gradually, which is what makes the hot set drift between epochs.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::chunking::{Chunker, ChunkerConfig};
use crate::error::{Error, Result};
use crate::par::{self, ExecPolicy};
use crate::types::{fingerprint_of, Fingerprint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnapshotSpec {
    pub profile: String,
    /// Cold bytes per snapshot.
    pub base_size: u64,
    pub cold_files: usize,
    pub snapshot_count: usize,
    /// Per-snapshot block rewrite probability. `None` calibrates it against
    /// `target_dedup_ratio`.
    pub mutation_rate: Option<f64>,
    pub target_dedup_ratio: f64,
    /// Share of each snapshot's bytes that come from the hot pool.
    pub hot_fraction: f64,
    pub hot_files: usize,
    pub hot_file_size: u64,
    /// Block rewrite probability when a hot file gets a new version.
    pub hot_edit_rate: f64,
    /// Snapshots between versions of a hot file; also how long clients
    /// take to adopt a new version.
    pub adoption_snapshots: u32,
    pub zipf_exponent: f64,
    pub block_size: u64,
    pub avg_chunk: usize,
}

impl Default for SnapshotSpec {
    fn default() -> Self {
        Self {
            profile: "custom".into(),
            base_size: 1 << 20,
            cold_files: 64,
            snapshot_count: 10,
            mutation_rate: None,
            target_dedup_ratio: 5.0,
            hot_fraction: 0.0,
            hot_files: 16,
            hot_file_size: 16 << 10,
            hot_edit_rate: 0.15,
            adoption_snapshots: 4,
            zipf_exponent: 1.0,
            block_size: 4 << 10,
            avg_chunk: 4 << 10,
        }
    }
}

/// Redundancy profiles after the public backup traces: (name, dedup ratio,
/// snapshots, hot fraction).
pub const PROFILES: [(&str, f64, usize, f64); 5] = [
    ("LAB", 27.1, 33, 0.9),
    ("FSL", 11.8, 20, 0.5),
    ("MS", 5.1, 30, 0.3),
    ("UBUNTU", 4.1, 12, 0.3),
    ("GCC", 1.4, 24, 0.0),
];

impl SnapshotSpec {
    /// A named profile at `base_size` cold bytes per snapshot.
    pub fn profile(name: &str, base_size: u64) -> Result<Self> {
        let &(profile, ratio, snapshots, hot) = PROFILES
            .iter()
            .find(|p| p.0.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown profile {name:?}")))?;
        let d = Self::default();
        let hot_pool = base_size / 8;
        Ok(Self {
            profile: profile.into(),
            base_size,
            cold_files: (base_size / (4 * d.block_size)).max(1) as usize,
            snapshot_count: snapshots,
            target_dedup_ratio: ratio,
            hot_fraction: hot,
            hot_files: (hot_pool / d.hot_file_size).max(2) as usize,
            ..d
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.snapshot_count == 0 || self.cold_files == 0 {
            return bad("snapshot_count and cold_files must be positive");
        }
        if self.block_size == 0 || self.base_size < self.block_size * self.cold_files as u64 {
            return bad("base_size must hold at least one block per cold file");
        }
        if let Some(m) = self.mutation_rate {
            if !(0.0..=1.0).contains(&m) {
                return bad("mutation_rate must lie in [0, 1]");
            }
        }
        if !(0.0..1.0).contains(&self.hot_fraction) {
            return bad("hot_fraction must lie in [0, 1)");
        }
        if self.hot_fraction > 0.0 && (self.hot_files == 0 || self.hot_file_size < self.block_size) {
            return bad("hot part needs files of at least one block");
        }
        if !(0.0..=1.0).contains(&self.hot_edit_rate) || self.adoption_snapshots == 0 {
            return bad("hot_edit_rate must lie in [0, 1] and adoption_snapshots be positive");
        }
        if self.zipf_exponent <= 0.0 {
            return bad("zipf_exponent must be positive");
        }
        ChunkerConfig::with_average(self.avg_chunk).validate()
    }

    fn cold_blocks(&self) -> u64 {
        self.base_size / self.block_size / self.cold_files as u64
    }

    fn hot_blocks(&self) -> u64 {
        (self.hot_file_size / self.block_size).max(1)
    }

    /// Hot uploads per snapshot.
    pub fn hot_uploads(&self) -> usize {
        if self.hot_fraction == 0.0 {
            return 0;
        }
        let hot_bytes = self.hot_fraction / (1.0 - self.hot_fraction) * self.base_size as f64;
        (hot_bytes / (self.hot_blocks() * self.block_size) as f64).round().max(1.0) as usize
    }
}

/// Stateless 64-bit mixer used for per-block random draws.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0x5EED, |h, w| mix(h ^ w))
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

const COLD: u64 = 1;
const HOT: u64 = 2;
const HOT_EDIT: u64 = 3;
const UPLOAD: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FileKind {
    Cold { file: u32 },
    Hot { file: u32, version: u32 },
}

/// One file of one snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub snapshot: u32,
    pub kind: FileKind,
}

/// Identifies file contents; equal keys mean equal bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentKey {
    kind: u64,
    file: u32,
    tag: u64,
}

/// Chunk fingerprints and lengths of one file's plaintext.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileChunks {
    pub file_hash: Fingerprint,
    pub chunks: Vec<(Fingerprint, u32)>,
}

impl FileChunks {
    pub fn len(&self) -> u64 {
        self.chunks.iter().map(|c| c.1 as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Workload {
    spec: SnapshotSpec,
    seed: u64,
    mutation_rate: f64,
    snapshots: Vec<Vec<FileRef>>,
}

impl Workload {
    /// Builds the workload, calibrating the mutation rate if the spec
    /// leaves it open.
    pub fn generate(spec: &SnapshotSpec, seed: u64, exec: ExecPolicy) -> Result<Self> {
        spec.validate()?;
        match spec.mutation_rate {
            Some(m) => Self::with_mutation_rate(spec, seed, m),
            None => calibrate(spec, seed, exec).map(|c| c.workload),
        }
    }

    pub fn with_mutation_rate(spec: &SnapshotSpec, seed: u64, mutation_rate: f64) -> Result<Self> {
        spec.validate()?;
        if !(0.0..=1.0).contains(&mutation_rate) {
            return Err(Error::Config("mutation_rate must lie in [0, 1]".into()));
        }
        let mut snapshots = Vec::with_capacity(spec.snapshot_count);
        let hot_n = spec.hot_uploads();
        let zipf = Zipf::new(spec.hot_files.max(1) as u64, spec.zipf_exponent)
            .map_err(|e| Error::Config(format!("zipf: {e}")))?;
        for s in 0..spec.snapshot_count as u32 {
            let mut files: Vec<FileRef> = (0..spec.cold_files as u32)
                .map(|file| FileRef {
                    snapshot: s,
                    kind: FileKind::Cold { file },
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(hash_words(&[seed, UPLOAD, s as u64]));
            for _ in 0..hot_n {
                let file = zipf.sample(&mut rng) as u32 - 1;
                let adopt: f64 = rng.gen();
                files.push(FileRef {
                    snapshot: s,
                    kind: FileKind::Hot {
                        file,
                        version: hot_version(spec, file, s, adopt),
                    },
                });
            }
            snapshots.push(files);
        }
        Ok(Self {
            spec: spec.clone(),
            seed,
            mutation_rate,
            snapshots,
        })
    }

    pub fn spec(&self) -> &SnapshotSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mutation_rate(&self) -> f64 {
        self.mutation_rate
    }

    pub fn snapshots(&self) -> &[Vec<FileRef>] {
        &self.snapshots
    }

    pub fn chunker(&self) -> Chunker {
        Chunker::new(ChunkerConfig::with_average(self.spec.avg_chunk)).expect("validated")
    }

    /// Version of cold block `b` of `file` at snapshot `s`.
    fn cold_block_version(&self, file: u32, b: u64, s: u32) -> u64 {
        (1..=s as u64)
            .filter(|&t| unit(hash_words(&[self.seed, COLD, file as u64, b, t])) < self.mutation_rate)
            .count() as u64
    }

    fn hot_block_version(&self, file: u32, b: u64, version: u32) -> u64 {
        (1..=version as u64)
            .filter(|&v| unit(hash_words(&[self.seed, HOT_EDIT, file as u64, b, v])) < self.spec.hot_edit_rate)
            .count() as u64
    }

    fn block_versions(&self, f: &FileRef) -> Vec<u64> {
        match f.kind {
            FileKind::Cold { file } => (0..self.spec.cold_blocks())
                .map(|b| self.cold_block_version(file, b, f.snapshot))
                .collect(),
            FileKind::Hot { file, version } => (0..self.spec.hot_blocks())
                .map(|b| self.hot_block_version(file, b, version))
                .collect(),
        }
    }

    pub fn content_key(&self, f: &FileRef) -> ContentKey {
        let versions = self.block_versions(f);
        match f.kind {
            FileKind::Cold { file } => ContentKey {
                kind: COLD,
                file,
                tag: hash_words(&versions),
            },
            FileKind::Hot { file, version } => ContentKey {
                kind: HOT,
                file,
                tag: hash_words(&versions) ^ ((version as u64) << 32),
            },
        }
    }

    pub fn file_bytes(&self, f: &FileRef) -> Vec<u8> {
        let (kind, file) = match f.kind {
            FileKind::Cold { file } => (COLD, file),
            FileKind::Hot { file, .. } => (HOT, file),
        };
        let bs = self.spec.block_size as usize;
        let versions = self.block_versions(f);
        let mut out = vec![0u8; versions.len() * bs];
        for (b, (v, block)) in versions.iter().zip(out.chunks_mut(bs)).enumerate() {
            ChaCha8Rng::seed_from_u64(hash_words(&[self.seed, kind, file as u64, b as u64, *v])).fill_bytes(block);
        }
        out
    }

    pub fn logical_bytes(&self) -> u64 {
        let cold = self.spec.cold_blocks() * self.spec.cold_files as u64;
        let hot = self.spec.hot_blocks() * self.spec.hot_uploads() as u64;
        (cold + hot) * self.spec.block_size * self.snapshots.len() as u64
    }

    /// Chunks every distinct file content once and lays the results out
    /// in upload order.
    pub fn trace(&self, exec: ExecPolicy) -> Trace {
        let chunker = self.chunker();
        let mut keys: Vec<ContentKey> = Vec::new();
        let mut slot: HashMap<ContentKey, usize> = HashMap::new();
        let mut refs: Vec<(FileRef, usize)> = Vec::new();
        let mut first: Vec<FileRef> = Vec::new();
        for f in self.snapshots.iter().flatten() {
            let key = self.content_key(f);
            let i = *slot.entry(key).or_insert_with(|| {
                keys.push(key);
                first.push(*f);
                keys.len() - 1
            });
            refs.push((*f, i));
        }
        let contents: Vec<Arc<FileChunks>> = par::map_slice(exec, &first, |f| {
            let bytes = self.file_bytes(f);
            Arc::new(FileChunks {
                file_hash: fingerprint_of(&bytes).expect("files are non-empty"),
                chunks: chunker
                    .slices(&bytes)
                    .into_iter()
                    .map(|s| (fingerprint_of(s).expect("non-empty"), s.len() as u32))
                    .collect(),
            })
        });
        Trace {
            files: refs
                .into_iter()
                .map(|(f, i)| (f, keys[i], Arc::clone(&contents[i])))
                .collect(),
        }
    }
}

/// Hot-file version a client uploads at snapshot `s`. Versions appear every
/// `adoption_snapshots` snapshots (staggered per file); a version of age
/// `a` is picked with probability `(a + 1) / (A + 1)`, otherwise the one
/// before it.
fn hot_version(spec: &SnapshotSpec, file: u32, s: u32, adopt: f64) -> u32 {
    let a = spec.adoption_snapshots;
    let phase = file % a;
    if s < phase {
        return 0;
    }
    let latest = (s - phase) / a + u32::from(phase > 0);
    let created = if latest == 0 {
        0
    } else {
        phase + (latest - u32::from(phase > 0)) * a
    };
    let age = s - created;
    let p = ((age + 1) as f64 / (a + 1) as f64).min(1.0);
    if latest == 0 || adopt < p {
        latest
    } else {
        latest - 1
    }
}

/// Chunk-level view of a workload in upload order.
#[derive(Debug, Clone)]
pub struct Trace {
    pub files: Vec<(FileRef, ContentKey, Arc<FileChunks>)>,
}

/// Per-fingerprint totals over a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStats {
    pub total_bytes: u64,
    pub unique_bytes: u64,
    pub total_chunks: u64,
    /// `(fingerprint, size, occurrences)` sorted by fingerprint.
    pub counts: Vec<(Fingerprint, u64, u64)>,
}

impl TraceStats {
    pub fn dedup_ratio(&self) -> f64 {
        if self.unique_bytes == 0 {
            return 1.0;
        }
        self.total_bytes as f64 / self.unique_bytes as f64
    }
}

impl Trace {
    pub fn stats(&self) -> TraceStats {
        Self::stats_of(self.files.iter().map(|(_, _, c)| c.as_ref()))
    }

    pub fn snapshot_stats(&self, upto: u32) -> TraceStats {
        Self::stats_of(
            self.files
                .iter()
                .filter(|(f, _, _)| f.snapshot <= upto)
                .map(|(_, _, c)| c.as_ref()),
        )
    }

    fn stats_of<'a>(files: impl Iterator<Item = &'a FileChunks>) -> TraceStats {
        let mut map: BTreeMap<Fingerprint, (u64, u64)> = BTreeMap::new();
        let (mut total, mut n) = (0u64, 0u64);
        for f in files {
            for (fp, len) in &f.chunks {
                total += *len as u64;
                n += 1;
                map.entry(*fp).or_insert((*len as u64, 0)).1 += 1;
            }
        }
        let unique = map.values().map(|v| v.0).sum();
        TraceStats {
            total_bytes: total,
            unique_bytes: unique,
            total_chunks: n,
            counts: map.into_iter().map(|(fp, (s, c))| (fp, s, c)).collect(),
        }
    }
}

/// Share of check traffic that stays at the edge if the `top_fraction`
/// most frequent fingerprints are held there: every occurrence after the
/// first of a held chunk is avoidable.
pub fn elimination_ratio(stats: &TraceStats, top_fraction: f64) -> Result<f64> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config("top_fraction must lie in (0, 1]".into()));
    }
    if stats.total_bytes == 0 {
        return Ok(0.0);
    }
    let mut ranked: Vec<&(Fingerprint, u64, u64)> = stats.counts.iter().collect();
    ranked.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    let take = (top_fraction * ranked.len() as f64).ceil() as usize;
    let avoidable: u64 = ranked[..take].iter().map(|(_, size, count)| size * (count - 1)).sum();
    Ok(avoidable as f64 / stats.total_bytes as f64)
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub workload: Workload,
    pub realized_ratio: f64,
    pub iterations: u32,
}

/// Bisects the mutation rate until the realized ratio is within 5% of
/// the target (the acceptance band is 10%).
pub fn calibrate(spec: &SnapshotSpec, seed: u64, exec: ExecPolicy) -> Result<Calibration> {
    let target = spec.target_dedup_ratio;
    if !(target >= 1.0) {
        return Err(Error::InfeasibleTarget(target));
    }
    let ratio_at = |m: f64| -> Result<(Workload, f64)> {
        let w = Workload::with_mutation_rate(spec, seed, m)?;
        let r = w.trace(exec).stats().dedup_ratio();
        Ok((w, r))
    };
    let close = |r: f64| (r / target - 1.0).abs() <= 0.05;
    let (w_lo, r_lo) = ratio_at(0.0)?;
    if close(r_lo) {
        return Ok(Calibration {
            workload: w_lo,
            realized_ratio: r_lo,
            iterations: 1,
        });
    }
    let (w_hi, r_hi) = ratio_at(1.0)?;
    if close(r_hi) {
        return Ok(Calibration {
            workload: w_hi,
            realized_ratio: r_hi,
            iterations: 2,
        });
    }
    if target > r_lo || target < r_hi {
        return Err(Error::InfeasibleTarget(target));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = (w_lo, r_lo);
    for i in 0..40 {
        let mid = 0.5 * (lo + hi);
        let (w, r) = ratio_at(mid)?;
        if (r / target - 1.0).abs() < (best.1 / target - 1.0).abs() {
            best = (w, r);
        }
        if close(best.1) {
            return Ok(Calibration {
                workload: best.0,
                realized_ratio: best.1,
                iterations: i + 3,
            });
        }
        // The ratio falls as the rate rises.
        if r > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::InfeasibleTarget(target))
}

/// Per-chunk ground truth: for every file in upload order, its chunks with
/// a flag telling whether the chunk is seen there for the first time.
pub fn manifest_csv(trace: &Trace) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["snapshot", "file", "version", "chunk_index", "fingerprint", "length", "unique"])
        .map_err(|e| Error::Io(e.to_string()))?;
    let mut seen = std::collections::HashSet::new();
    for (f, _, c) in &trace.files {
        let (name, version) = match f.kind {
            FileKind::Cold { file } => (format!("cold-{file}"), String::new()),
            FileKind::Hot { file, version } => (format!("hot-{file}"), version.to_string()),
        };
        for (i, (fp, len)) in c.chunks.iter().enumerate() {
            let unique = seen.insert(*fp);
            w.write_record([
                f.snapshot.to_string(),
                name.clone(),
                version.clone(),
                i.to_string(),
                fp.to_string(),
                len.to_string(),
                u8::from(unique).to_string(),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(snapshots: usize, hot: f64) -> SnapshotSpec {
        SnapshotSpec {
            base_size: 256 << 10,
            cold_files: 16,
            snapshot_count: snapshots,
            hot_fraction: hot,
            hot_files: 4,
            ..SnapshotSpec::default()
        }
    }

    fn ratio(spec: &SnapshotSpec, m: f64) -> f64 {
        Workload::with_mutation_rate(spec, 7, m)
            .unwrap()
            .trace(ExecPolicy::Sequential)
            .stats()
            .dedup_ratio()
    }

    #[test]
    fn zero_mutation_repeats_every_snapshot() {
        let spec = small(6, 0.0);
        assert!((ratio(&spec, 0.0) - 6.0).abs() < 1e-12);
        let w = Workload::with_mutation_rate(&spec, 7, 0.0).unwrap();
        let a = w.file_bytes(&w.snapshots()[0][3]);
        let b = w.file_bytes(&w.snapshots()[5][3]);
        assert_eq!(a, b);
    }

    #[test]
    fn full_mutation_leaves_almost_nothing_to_share() {
        let r = ratio(&small(6, 0.0), 1.0);
        assert!(r < 1.01, "{r}");
    }

    #[test]
    fn ratio_is_monotone_in_mutation_rate() {
        let spec = small(5, 0.3);
        let rs: Vec<f64> = [0.0, 0.1, 0.3, 0.6, 1.0].iter().map(|&m| ratio(&spec, m)).collect();
        assert!(rs.windows(2).all(|w| w[0] >= w[1]), "{rs:?}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small(3, 0.5);
        let a = Workload::with_mutation_rate(&spec, 11, 0.2).unwrap();
        let b = Workload::with_mutation_rate(&spec, 11, 0.2).unwrap();
        assert_eq!(a.snapshots(), b.snapshots());
        for (x, y) in a.snapshots().iter().flatten().zip(b.snapshots().iter().flatten()).step_by(7) {
            assert_eq!(a.file_bytes(x), b.file_bytes(y));
        }
        let c = Workload::with_mutation_rate(&spec, 12, 0.2).unwrap();
        let f = a.snapshots()[2][0];
        assert_ne!(a.file_bytes(&f), c.file_bytes(&f));
    }

    #[test]
    fn content_key_matches_bytes() {
        let spec = small(4, 0.5);
        let w = Workload::with_mutation_rate(&spec, 3, 0.3).unwrap();
        let mut by_key: HashMap<ContentKey, Vec<u8>> = HashMap::new();
        for f in w.snapshots().iter().flatten() {
            let bytes = w.file_bytes(f);
            if let Some(prev) = by_key.insert(w.content_key(f), bytes.clone()) {
                assert_eq!(prev, bytes);
            }
        }
    }

    #[test]
    fn hot_versions_are_adopted_gradually() {
        let spec = SnapshotSpec {
            adoption_snapshots: 4,
            ..SnapshotSpec::default()
        };
        // File 0: versions appear at snapshots 4, 8, ...
        assert_eq!(hot_version(&spec, 0, 3, 0.0), 0);
        assert_eq!(hot_version(&spec, 0, 4, 0.1), 1);
        assert_eq!(hot_version(&spec, 0, 4, 0.9), 0);
        assert_eq!(hot_version(&spec, 0, 7, 0.7), 1);
        assert_eq!(hot_version(&spec, 0, 7, 0.9), 0);
        // File 1 is staggered by one snapshot.
        assert_eq!(hot_version(&spec, 1, 0, 0.0), 0);
        assert_eq!(hot_version(&spec, 1, 1, 0.0), 1);
        assert_eq!(hot_version(&spec, 1, 5, 0.0), 2);
    }

    #[test]
    fn calibration_hits_target() {
        let spec = SnapshotSpec {
            target_dedup_ratio: 3.0,
            ..small(8, 0.3)
        };
        let c = calibrate(&spec, 5, ExecPolicy::Parallel).unwrap();
        assert!((c.realized_ratio / 3.0 - 1.0).abs() <= 0.10, "{}", c.realized_ratio);
        let again = c.workload.trace(ExecPolicy::Sequential).stats().dedup_ratio();
        assert_eq!(again, c.realized_ratio);
    }

    #[test]
    fn infeasible_targets_are_rejected() {
        for t in [0.5, 1000.0] {
            let spec = SnapshotSpec {
                target_dedup_ratio: t,
                ..small(4, 0.0)
            };
            assert_eq!(calibrate(&spec, 1, ExecPolicy::Sequential).unwrap_err(), Error::InfeasibleTarget(t));
        }
    }

    #[test]
    fn elimination_ratio_edge_cases() {
        let fp = |i: u8| Fingerprint([i; 32]);
        let all_unique = TraceStats {
            total_bytes: 30,
            unique_bytes: 30,
            total_chunks: 3,
            counts: (0..3).map(|i| (fp(i), 10, 1)).collect(),
        };
        assert_eq!(elimination_ratio(&all_unique, 1.0).unwrap(), 0.0);
        let one_hot = TraceStats {
            total_bytes: 1000 + 30,
            unique_bytes: 40,
            total_chunks: 103,
            counts: vec![(fp(9), 10, 100), (fp(1), 10, 1), (fp(2), 10, 1), (fp(3), 10, 1)],
        };
        let r = elimination_ratio(&one_hot, 0.25).unwrap();
        assert!((r - 990.0 / 1030.0).abs() < 1e-12);
        assert!(elimination_ratio(&one_hot, 0.0).is_err());
    }

    #[test]
    fn manifest_flags_first_occurrences() {
        let spec = small(2, 0.0);
        let trace = Workload::with_mutation_rate(&spec, 1, 0.0).unwrap().trace(ExecPolicy::Sequential);
        let text = String::from_utf8(manifest_csv(&trace).unwrap()).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        let unique = rows.iter().filter(|r| r.ends_with(",1")).count();
        assert_eq!(unique * 2, rows.len());
    }
}
