//! Client side: chunking, server-aided key generation, encryption, answering
//! ownership challenges, and the upload flows compared in experiments.

use std::collections::{HashMap, HashSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chunking::Chunker;
use crate::cloud::{CheckRequest, CheckResponse, CheckVerdict, CloudServer, StoreChunks};
use crate::edge::{EdgeServer, Tier, TierCounts, UploadBegin};
use crate::error::{Error, Result};
use crate::mle::{decrypt_chunk, encrypt_chunk, KeyServer, MleKey};
use crate::par::{self, ExecPolicy};
use crate::pow::{gen_response, ChunkVerdict, PowChallenge, PowResponse, Scope, Segments};
use crate::sim::LatencyModel;
use crate::types::{fingerprint_of, CipherChunk, ClientId, FileRecipe, Fingerprint, RecipeEntry, VirtualTime};
use crate::wire::Message;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    /// Retries after a rate-limited key request.
    pub key_retries: u32,
    /// First backoff; doubles per retry.
    pub key_backoff_us: u64,
    /// Cloud work to produce one challenge on demand in the source-based
    /// baseline (read the chunk, sample it).
    pub realtime_gen_us: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            key_retries: 3,
            key_backoff_us: 1_000,
            realtime_gen_us: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UploadMode {
    PmDedup,
    PmNoLocal,
    SourceBaseline,
    TargetBaseline,
}

impl UploadMode {
    pub const ALL: [UploadMode; 4] = [
        UploadMode::PmDedup,
        UploadMode::PmNoLocal,
        UploadMode::SourceBaseline,
        UploadMode::TargetBaseline,
    ];

    pub fn label(self) -> &'static str {
        match self {
            UploadMode::PmDedup => "pm_dedup",
            UploadMode::PmNoLocal => "pm_no_local",
            UploadMode::SourceBaseline => "source_baseline",
            UploadMode::TargetBaseline => "target_baseline",
        }
    }

    pub fn uses_edge(self) -> bool {
        matches!(self, UploadMode::PmDedup | UploadMode::PmNoLocal)
    }
}

impl FromStr for UploadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct ChunkPlan {
    pub plain_len: u64,
    pub key: MleKey,
    pub cipher: CipherChunk,
    pub fp: Fingerprint,
}

/// A file chunked, keyed and encrypted, ready for any upload flow.
#[derive(Debug, Clone)]
pub struct UploadPlan {
    pub client: ClientId,
    /// SHA-256 of the plaintext file.
    pub file_hash: Fingerprint,
    pub chunks: Vec<ChunkPlan>,
    /// Virtual time spent obtaining keys, backoff included.
    pub keygen_time: VirtualTime,
}

impl UploadPlan {
    pub fn begin(&self) -> UploadBegin {
        UploadBegin {
            client: self.client,
            file_hash: self.file_hash,
            chunks: self.chunks.iter().map(|c| c.fp).collect(),
        }
    }

    pub fn recipe(&self) -> FileRecipe {
        FileRecipe {
            file_hash: self.file_hash,
            chunks: self
                .chunks
                .iter()
                .map(|c| RecipeEntry {
                    fingerprint: c.fp,
                    length: c.plain_len,
                })
                .collect(),
        }
    }

    pub fn plain_len(&self) -> u64 {
        self.chunks.iter().map(|c| c.plain_len).sum()
    }

    pub fn keys(&self) -> Vec<MleKey> {
        self.chunks.iter().map(|c| c.key.clone()).collect()
    }

    /// Computes the response to a challenge over this upload's ciphertext.
    pub fn answer_challenge(&self, chal: &PowChallenge) -> Result<PowResponse> {
        let bits = match chal.scope {
            Scope::File => gen_response(
                &chal.seed,
                &Segments::new(self.chunks.iter().map(|c| c.cipher.as_slice())),
                chal.k,
            )?,
            Scope::Chunk(i) => {
                let c = self.chunks.get(i as usize).ok_or(Error::UnknownScope)?;
                gen_response(&chal.seed, c.cipher.as_slice(), chal.k)?
            }
        };
        Ok(PowResponse { bits })
    }
}

/// Fetches keys for a batch of plaintext fingerprints, backing off in
/// virtual time while the key server throttles. Returns the keys and the
/// time spent.
pub fn acquire_keys(
    client: ClientId,
    plain_fps: &[Fingerprint],
    keys: &mut KeyServer,
    now: VirtualTime,
    net: &LatencyModel,
    cfg: &ClientConfig,
) -> Result<(Vec<MleKey>, VirtualTime)> {
    let exchange = net.cloud_exchange(plain_fps.len() * 64);
    let mut elapsed = VirtualTime::ZERO;
    let mut attempt = 0;
    let chunk_keys = loop {
        elapsed += exchange;
        match keys.derive_keys(client, plain_fps, now + elapsed) {
            Ok(k) => break k,
            Err(Error::RateLimited) if attempt < cfg.key_retries => {
                elapsed += VirtualTime::from_micros(cfg.key_backoff_us << attempt);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    };
    Ok((chunk_keys, elapsed))
}

/// Chunks `data`, derives chunk keys from the key server (retrying with
/// exponential backoff when throttled) and encrypts every chunk.
#[allow(clippy::too_many_arguments)]
pub fn prepare_upload(
    client: ClientId,
    data: &[u8],
    chunker: &Chunker,
    keys: &mut KeyServer,
    now: VirtualTime,
    net: &LatencyModel,
    cfg: &ClientConfig,
    exec: ExecPolicy,
) -> Result<UploadPlan> {
    let file_hash = fingerprint_of(data)?;
    let slices = chunker.slices(data);
    let plain_fps: Vec<Fingerprint> = par::map_slice(exec, &slices, |s| fingerprint_of(s))
        .into_iter()
        .collect::<Result<_>>()?;

    let (chunk_keys, elapsed) = acquire_keys(client, &plain_fps, keys, now, net, cfg)?;

    let work: Vec<(&[u8], MleKey)> = slices.into_iter().zip(chunk_keys).collect();
    let chunks = par::map_slice(exec, &work, |(s, key)| {
        let cipher = encrypt_chunk(&crate::types::PlainChunk(s.to_vec()), key);
        let fp = fingerprint_of(cipher.as_slice()).expect("ciphertext is never empty");
        ChunkPlan {
            plain_len: s.len() as u64,
            key: key.clone(),
            cipher,
            fp,
        }
    });
    Ok(UploadPlan {
        client,
        file_hash,
        chunks,
        keygen_time: elapsed,
    })
}

/// Downloads and decrypts a file with the keys kept from its upload.
pub fn restore(cloud: &CloudServer, file_hash: &Fingerprint, keys: &[MleKey]) -> Result<Vec<u8>> {
    let chunks = cloud.fetch_file(file_hash)?;
    if chunks.len() != keys.len() {
        return Err(Error::Malformed("key count does not match recipe"));
    }
    let mut out = Vec::new();
    for (c, k) in chunks.into_iter().zip(keys) {
        out.extend_from_slice(&decrypt_chunk(c, k)?.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UploadReport {
    pub keygen: VirtualTime,
    pub pow: VirtualTime,
    pub check: VirtualTime,
    pub transfer: VirtualTime,
    pub overall: VirtualTime,
    /// Ciphertext plus recipe bytes sent to the cloud.
    pub bytes_sent: u64,
    pub chunk_bytes: u64,
    pub recipe_bytes: u64,
    pub logical_bytes: u64,
    pub tiers: TierCounts,
    pub pow_failures: u32,
    pub cloud_round_trips: u32,
    pub update_requested: bool,
}

impl UploadReport {
    fn finish(mut self) -> Self {
        self.bytes_sent = self.chunk_bytes + self.recipe_bytes;
        self.overall = self.keygen + self.pow + self.check + self.transfer;
        self
    }
}

/// Sends the chosen chunks and then the recipe to the cloud.
fn transfer(
    plan: &UploadPlan,
    upload: &[usize],
    cloud: &mut CloudServer,
    net: &LatencyModel,
    report: &mut UploadReport,
) -> Result<()> {
    let batch = StoreChunks {
        chunks: upload
            .iter()
            .map(|&i| (plan.chunks[i].fp, plan.chunks[i].cipher.clone()))
            .collect(),
    };
    let recipe = plan.recipe();
    report.chunk_bytes = batch.chunks.iter().map(|(_, c)| c.len() as u64).sum();
    report.recipe_bytes = recipe.encoded_len() as u64;
    let wire_bytes = if batch.chunks.is_empty() { 0 } else { batch.encoded_len() } + recipe.encoded_len();
    report.transfer = net.cloud_exchange(wire_bytes);
    report.cloud_round_trips += 1;
    if !batch.chunks.is_empty() {
        cloud.store_chunks(batch.chunks)?;
    }
    cloud.store_recipe(recipe)
}

fn first_occurrences(plan: &UploadPlan) -> Vec<usize> {
    let mut seen = HashSet::new();
    (0..plan.chunks.len()).filter(|&i| seen.insert(plan.chunks[i].fp)).collect()
}

/// Upload through an edge server: ownership proofs and tiered check at the
/// edge, then unique chunks straight to the cloud.
pub fn upload_pm(
    plan: &UploadPlan,
    edge: &mut EdgeServer,
    cloud: &mut CloudServer,
    net: &LatencyModel,
) -> Result<UploadReport> {
    let begin = plan.begin();
    let outcome = edge.session(&begin, &mut |c| plan.answer_challenge(c), cloud, net)?;
    let mut report = UploadReport {
        keygen: plan.keygen_time,
        pow: outcome.pow_time,
        check: outcome.check_time,
        logical_bytes: plan.plain_len(),
        pow_failures: outcome.pow_failures,
        cloud_round_trips: outcome.cloud_round_trips,
        update_requested: outcome.update.is_some(),
        ..UploadReport::default()
    };
    for t in &outcome.tiers {
        report.tiers.add(*t);
    }
    transfer(plan, &outcome.upload, cloud, net, &mut report)?;
    Ok(report.finish())
}

/// Source-based deduplication without edge servers: a duplicate check at
/// the cloud followed by challenges the cloud generates on demand.
pub fn upload_source_baseline(
    plan: &UploadPlan,
    cloud: &mut CloudServer,
    net: &LatencyModel,
    cfg: &ClientConfig,
) -> Result<UploadReport> {
    let first = first_occurrences(plan);
    let req = CheckRequest {
        fps: first.iter().map(|&i| plan.chunks[i].fp).collect(),
    };
    let resp = CheckResponse {
        verdicts: cloud.cloud_check(&req.fps),
    };
    let mut report = UploadReport {
        keygen: plan.keygen_time,
        check: net.cloud_exchange(req.encoded_len() + resp.encoded_len()),
        logical_bytes: plan.plain_len(),
        cloud_round_trips: 1,
        ..UploadReport::default()
    };

    let mut tier: HashMap<Fingerprint, Tier> = HashMap::new();
    let mut upload = Vec::new();
    let mut pow_bytes = 0usize;
    let mut challenges = 0u64;
    for (&i, v) in first.iter().zip(&resp.verdicts) {
        let fp = plan.chunks[i].fp;
        let owned = match v {
            CheckVerdict::Unique => false,
            CheckVerdict::Duplicate => {
                challenges += 1;
                let mut respond = |c: &PowChallenge| {
                    let r = plan.answer_challenge(c)?;
                    pow_bytes += c.encoded_len() + r.encoded_len();
                    Ok(r)
                };
                let verdict = cloud.realtime_verify_chunk(&fp, i as u32, &mut respond)?;
                if verdict != ChunkVerdict::Verified {
                    report.pow_failures += 1;
                }
                verdict == ChunkVerdict::Verified
            }
        };
        if owned {
            tier.insert(fp, Tier::HitCloud);
        } else {
            tier.insert(fp, Tier::Unique);
            upload.push(i);
        }
    }
    if challenges > 0 {
        report.pow = net.cloud_exchange(pow_bytes) + VirtualTime::from_micros(cfg.realtime_gen_us * challenges);
        report.cloud_round_trips += 1;
    }
    for c in &plan.chunks {
        report.tiers.add(tier[&c.fp]);
    }
    transfer(plan, &upload, cloud, net, &mut report)?;
    Ok(report.finish())
}

/// Target-based deduplication: every chunk is sent and the cloud
/// deduplicates on arrival.
pub fn upload_target_baseline(plan: &UploadPlan, cloud: &mut CloudServer, net: &LatencyModel) -> Result<UploadReport> {
    let mut report = UploadReport {
        keygen: plan.keygen_time,
        logical_bytes: plan.plain_len(),
        ..UploadReport::default()
    };
    let first = first_occurrences(plan);
    transfer(plan, &first, cloud, net, &mut report)?;
    // Repeated chunks within the file travel too.
    let all: u64 = plan.chunks.iter().map(|c| c.cipher.len() as u64).sum();
    let extra = all - report.chunk_bytes;
    report.chunk_bytes = all;
    report.transfer += net.cloud_exchange(extra as usize).saturating_sub(net.cloud_rtt());
    report.tiers.unique = plan.chunks.len() as u64;
    Ok(report.finish())
}

/// Dispatches to the flow for `mode`. Edge modes need `edge`.
pub fn upload(
    mode: UploadMode,
    plan: &UploadPlan,
    edge: Option<&mut EdgeServer>,
    cloud: &mut CloudServer,
    net: &LatencyModel,
    cfg: &ClientConfig,
) -> Result<UploadReport> {
    match mode {
        UploadMode::PmDedup | UploadMode::PmNoLocal => {
            let edge = edge.ok_or_else(|| Error::Config(format!("{} needs an edge server", mode.label())))?;
            upload_pm(plan, edge, cloud, net)
        }
        UploadMode::SourceBaseline => upload_source_baseline(plan, cloud, net, cfg),
        UploadMode::TargetBaseline => upload_target_baseline(plan, cloud, net),
    }
}

#[cfg(test)]
mod tests {
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::chunking::ChunkerConfig;
    use crate::cloud::CloudConfig;
    use crate::edge::EdgeConfig;
    use crate::mle::{Measurement, RateLimit};
    use crate::types::EdgeId;

    const CODE: &[u8] = b"client-test-enclave";

    fn data(n: usize, seed: u64) -> Vec<u8> {
        let mut v = vec![0u8; n];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut v);
        v
    }

    struct World {
        cloud: CloudServer,
        edge: EdgeServer,
        keys: KeyServer,
        chunker: Chunker,
        net: LatencyModel,
    }

    fn world(edge_cfg: EdgeConfig) -> World {
        let mut cloud =
            CloudServer::new(CloudConfig::default(), Measurement::of_code(CODE), ExecPolicy::Sequential).unwrap();
        let edge = EdgeServer::attach(EdgeId(0), edge_cfg, CODE, 1, &mut cloud).unwrap();
        World {
            cloud,
            edge,
            keys: KeyServer::from_seed(3, RateLimit::default()),
            chunker: Chunker::new(ChunkerConfig::with_average(4096)).unwrap(),
            net: LatencyModel::default(),
        }
    }

    fn plan(w: &mut World, client: u32, bytes: &[u8]) -> UploadPlan {
        prepare_upload(
            ClientId(client),
            bytes,
            &w.chunker,
            &mut w.keys,
            VirtualTime::ZERO,
            &w.net,
            &ClientConfig::default(),
            ExecPolicy::Sequential,
        )
        .unwrap()
    }

    #[test]
    fn plans_converge_across_clients_and_policies() {
        let mut w = world(EdgeConfig::default());
        let bytes = data(100_000, 1);
        let a = plan(&mut w, 0, &bytes);
        let b = prepare_upload(
            ClientId(1),
            &bytes,
            &w.chunker,
            &mut w.keys,
            VirtualTime::ZERO,
            &w.net,
            &ClientConfig::default(),
            ExecPolicy::Parallel,
        )
        .unwrap();
        assert_eq!(a.begin().chunks, b.begin().chunks);
        assert_eq!(a.file_hash, b.file_hash);
    }

    #[test]
    fn reupload_sends_only_the_recipe() {
        let mut w = world(EdgeConfig::default());
        let bytes = data(60_000, 2);
        let p = plan(&mut w, 0, &bytes);
        let first = upload_pm(&p, &mut w.edge, &mut w.cloud, &w.net).unwrap();
        assert_eq!(first.chunk_bytes, p.chunks.iter().map(|c| c.cipher.len() as u64).sum::<u64>());
        let q = plan(&mut w, 1, &bytes);
        let second = upload_pm(&q, &mut w.edge, &mut w.cloud, &w.net).unwrap();
        assert_eq!(second.chunk_bytes, 0);
        assert_eq!(second.bytes_sent, q.recipe().encoded_len() as u64);
        let restored = restore(&w.cloud, &q.file_hash, &q.keys()).unwrap();
        assert_eq!(restored, bytes);
    }

    #[test]
    fn challenge_out_of_range_is_rejected() {
        let mut w = world(EdgeConfig::default());
        let p = plan(&mut w, 0, &data(10_000, 3));
        let chal = PowChallenge {
            scope: Scope::Chunk(p.chunks.len() as u32),
            id: p.file_hash,
            seed: [0; 32],
            k: 64,
        };
        assert_eq!(p.answer_challenge(&chal), Err(Error::UnknownScope));
    }

    #[test]
    fn throttled_key_requests_back_off_then_fail() {
        let mut w = world(EdgeConfig::default());
        w.keys = KeyServer::from_seed(
            3,
            RateLimit {
                capacity: 4,
                refill_per_second: 1,
            },
        );
        let err = prepare_upload(
            ClientId(0),
            &data(200_000, 4),
            &w.chunker,
            &mut w.keys,
            VirtualTime::ZERO,
            &w.net,
            &ClientConfig::default(),
            ExecPolicy::Sequential,
        )
        .unwrap_err();
        assert_eq!(err, Error::RateLimited);
        // A drained bucket refills during the backoff.
        let small = data(20_000, 5);
        let n = w.chunker.slices(&small).len() as u64;
        w.keys = KeyServer::from_seed(
            3,
            RateLimit {
                capacity: n,
                refill_per_second: 200,
            },
        );
        let cfg = ClientConfig {
            key_backoff_us: 5_000,
            ..ClientConfig::default()
        };
        let prep = |w: &mut World| {
            prepare_upload(
                ClientId(0),
                &small,
                &w.chunker,
                &mut w.keys,
                VirtualTime::ZERO,
                &w.net,
                &cfg,
                ExecPolicy::Sequential,
            )
        };
        let first = prep(&mut w).unwrap();
        assert_eq!(first.keygen_time, w.net.cloud_exchange(n as usize * 64));
        let second = prep(&mut w).unwrap();
        assert!(second.keygen_time > first.keygen_time * 2);
    }

    #[test]
    fn source_baseline_proves_duplicates_at_the_cloud() {
        let mut w = world(EdgeConfig::default());
        let bytes = data(50_000, 6);
        let p = plan(&mut w, 0, &bytes);
        upload_target_baseline(&p, &mut w.cloud, &w.net).unwrap();
        let q = plan(&mut w, 1, &bytes);
        let r = upload_source_baseline(&q, &mut w.cloud, &w.net, &ClientConfig::default()).unwrap();
        assert_eq!(r.chunk_bytes, 0);
        assert_eq!(r.tiers.cloud, q.chunks.len() as u64);
        assert!(r.pow >= w.net.cloud_rtt());
        assert_eq!(w.cloud.stats().realtime_challenges, q.chunks.len() as u64);
    }

    #[test]
    fn target_baseline_counts_every_occurrence() {
        let mut w = world(EdgeConfig::default());
        let block = data(120_000, 7);
        let bytes = [block.clone(), block.clone(), block].concat();
        let p = plan(&mut w, 0, &bytes);
        let r = upload_target_baseline(&p, &mut w.cloud, &w.net).unwrap();
        assert_eq!(r.chunk_bytes, p.chunks.iter().map(|c| c.cipher.len() as u64).sum::<u64>());
        assert!(w.cloud.stored_bytes() < r.chunk_bytes);
        assert_eq!(restore(&w.cloud, &p.file_hash, &p.keys()).unwrap(), bytes);
    }

    #[test]
    fn mode_labels_round_trip() {
        for m in UploadMode::ALL {
            assert_eq!(m.label().parse::<UploadMode>().unwrap(), m);
        }
        assert!("nope".parse::<UploadMode>().is_err());
    }
}
