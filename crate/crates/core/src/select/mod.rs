//! Share-index selection: frequency estimation, locality scoring and the
//! combined assembly the cloud ships to edge enclaves each epoch.

pub mod cms;
pub mod locality;

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use cms::CountMinSketch;
pub use locality::{locality_select, proximity_scores, rank_order, ScoreMap, SCORE_RESOLUTION};

use crate::error::{Error, Result};
use crate::par::{self, ExecPolicy};
use crate::types::{FileRecipe, Fingerprint};
use crate::wire::{read_fps, put_fps, Message, Reader, Writer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShareIndexSpec {
    pub total_slots: usize,
    /// Share of slots filled by frequency; the rest come from locality.
    pub cms_fraction: f64,
    /// Minimum proximity score for a locality candidate.
    pub threshold: f64,
}

impl Default for ShareIndexSpec {
    fn default() -> Self {
        Self {
            total_slots: 1024,
            cms_fraction: 0.9,
            threshold: 0.5,
        }
    }
}

impl ShareIndexSpec {
    pub fn with_slots(total_slots: usize) -> Self {
        Self {
            total_slots,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_slots == 0 {
            return Err(Error::Config("share-index needs at least one slot".into()));
        }
        if !(0.0..=1.0).contains(&self.cms_fraction) {
            return Err(Error::Config("cms_fraction must lie in [0, 1]".into()));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(Error::Config("proximity threshold must be non-negative".into()));
        }
        Ok(())
    }

    pub fn frequency_slots(&self) -> usize {
        ((self.cms_fraction * self.total_slots as f64).ceil() as usize).min(self.total_slots)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionScheme {
    /// Exact per-fingerprint counters, all slots by frequency.
    Exact,
    /// Count-Min Sketch estimates, all slots by frequency.
    Cms,
    /// Sketch estimates for the frequency share, locality for the rest.
    CmsLocality,
}

impl SelectionScheme {
    pub fn label(self) -> &'static str {
        match self {
            SelectionScheme::Exact => "exact",
            SelectionScheme::Cms => "cms",
            SelectionScheme::CmsLocality => "cms_locality",
        }
    }
}

pub trait FrequencyEstimator {
    fn estimate(&self, fp: &Fingerprint) -> u64;
    fn memory_bytes(&self) -> usize;
}

impl FrequencyEstimator for CountMinSketch {
    fn estimate(&self, fp: &Fingerprint) -> u64 {
        self.frequency(fp)
    }

    fn memory_bytes(&self) -> usize {
        CountMinSketch::memory_bytes(self)
    }
}

/// Hash-map counter; the memory-hungry reference the sketch replaces.
#[derive(Debug, Clone, Default)]
pub struct ExactCounter {
    counts: HashMap<Fingerprint, u64>,
}

impl ExactCounter {
    pub fn add(&mut self, fp: &Fingerprint) {
        *self.counts.entry(*fp).or_insert(0) += 1;
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = &Fingerprint> {
        self.counts.keys()
    }
}

impl FrequencyEstimator for ExactCounter {
    fn estimate(&self, fp: &Fingerprint) -> u64 {
        self.counts.get(fp).copied().unwrap_or(0)
    }

    fn memory_bytes(&self) -> usize {
        // Key, value and one control byte per occupied bucket.
        self.counts.capacity() * (32 + 8 + 1)
    }
}

/// Bounded set of fingerprints the sketch may rank.
///
/// Holds at most `capacity` fingerprints together with the estimate seen at
/// their last observation. When full, the entry with the lowest recorded
/// estimate (largest fingerprint among ties) is dropped. Recorded estimates
/// can lag the sketch, which only grows, so rankings re-query the sketch.
#[derive(Debug, Clone)]
pub struct CandidateTracker {
    capacity: usize,
    recorded: HashMap<Fingerprint, u64>,
    order: BTreeSet<(u64, Reverse<Fingerprint>)>,
}

impl CandidateTracker {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            recorded: HashMap::new(),
            order: BTreeSet::new(),
        }
    }

    /// Sized at four times the share-index slot count.
    pub fn for_spec(spec: &ShareIndexSpec) -> Self {
        Self::new(spec.total_slots.saturating_mul(4))
    }

    pub fn observe(&mut self, fp: Fingerprint, estimate: u64) {
        if let Some(old) = self.recorded.insert(fp, estimate) {
            self.order.remove(&(old, Reverse(fp)));
        }
        self.order.insert((estimate, Reverse(fp)));
        if self.order.len() > self.capacity {
            let (_, Reverse(victim)) = self.order.pop_first().expect("non-empty");
            self.recorded.remove(&victim);
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Shrinking evicts lowest-estimate entries first.
    pub fn set_capacity(&mut self, capacity: usize) {
        self.capacity = capacity.max(1);
        while self.order.len() > self.capacity {
            let (_, Reverse(victim)) = self.order.pop_first().expect("non-empty");
            self.recorded.remove(&victim);
        }
    }

    pub fn len(&self) -> usize {
        self.recorded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recorded.is_empty()
    }

    pub fn contains(&self, fp: &Fingerprint) -> bool {
        self.recorded.contains_key(fp)
    }

    pub fn candidates(&self) -> Vec<Fingerprint> {
        let mut v: Vec<Fingerprint> = self.recorded.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn memory_bytes(&self) -> usize {
        self.recorded.capacity() * (32 + 8 + 1) + self.order.len() * (32 + 8 + 16)
    }
}

/// Sorted, duplicate-free fingerprint set.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShareIndex {
    fps: Vec<Fingerprint>,
}

impl ShareIndex {
    pub fn contains(&self, fp: &Fingerprint) -> bool {
        self.fps.binary_search(fp).is_ok()
    }

    pub fn len(&self) -> usize {
        self.fps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fps.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Fingerprint> {
        self.fps.iter()
    }

    pub fn as_slice(&self) -> &[Fingerprint] {
        &self.fps
    }

    /// `(added, removed)` going from `self` to `next`, both sorted.
    pub fn diff(&self, next: &ShareIndex) -> (Vec<Fingerprint>, Vec<Fingerprint>) {
        let (mut added, mut removed) = (Vec::new(), Vec::new());
        let (mut i, mut j) = (0, 0);
        while i < self.fps.len() || j < next.fps.len() {
            match (self.fps.get(i), next.fps.get(j)) {
                (Some(a), Some(b)) if a == b => {
                    i += 1;
                    j += 1;
                }
                (Some(a), Some(b)) if a < b => {
                    removed.push(*a);
                    i += 1;
                }
                (Some(_), Some(b)) => {
                    added.push(*b);
                    j += 1;
                }
                (Some(a), None) => {
                    removed.push(*a);
                    i += 1;
                }
                (None, Some(b)) => {
                    added.push(*b);
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        (added, removed)
    }
}

impl FromIterator<Fingerprint> for ShareIndex {
    fn from_iter<I: IntoIterator<Item = Fingerprint>>(iter: I) -> Self {
        let mut fps: Vec<Fingerprint> = iter.into_iter().collect();
        fps.sort_unstable();
        fps.dedup();
        Self { fps }
    }
}

impl Message for ShareIndex {
    fn encode(&self, w: &mut Writer) {
        put_fps(w, &self.fps);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let fps = read_fps(r)?;
        if fps.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Malformed("share-index is not strictly sorted"));
        }
        Ok(Self { fps })
    }
}

/// Candidates ordered by estimate descending, fingerprint ascending.
pub fn frequency_ranking<E>(est: &E, candidates: &[Fingerprint], exec: ExecPolicy) -> Vec<Fingerprint>
where
    E: FrequencyEstimator + Sync,
{
    let mut uniq = candidates.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let counts = par::map_slice(exec, &uniq, |fp| est.estimate(fp));
    let mut ranked: Vec<(u64, Fingerprint)> = counts.into_iter().zip(uniq).collect();
    ranked.sort_unstable_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ranked.into_iter().map(|(_, fp)| fp).collect()
}

/// How the slots of a share-index were filled.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub index: ShareIndex,
    pub by_frequency: usize,
    pub by_locality: usize,
    pub backfilled: usize,
}

/// Fills `cms_fraction` of the slots with the most frequent candidates and
/// the remainder with the best locality candidates. If locality yields too
/// few, the next most frequent candidates fill the gap.
pub fn select_share_index<E>(
    est: &E,
    candidates: &[Fingerprint],
    recipes: &[FileRecipe],
    spec: &ShareIndexSpec,
    exec: ExecPolicy,
) -> Selection
where
    E: FrequencyEstimator + Sync,
{
    let ranked = frequency_ranking(est, candidates, exec);
    let slots = spec.total_slots.min(ranked.len());
    let n_freq = spec.frequency_slots().min(slots);
    let frequent: BTreeSet<Fingerprint> = ranked[..n_freq].iter().copied().collect();
    let mut chosen = frequent.clone();

    let mut by_locality = 0;
    if n_freq < slots && !frequent.is_empty() {
        for (fp, _) in locality_select(&frequent, recipes, spec.threshold, exec) {
            if chosen.len() == slots {
                break;
            }
            if chosen.insert(fp) {
                by_locality += 1;
            }
        }
    }
    let mut backfilled = 0;
    for fp in &ranked[n_freq..] {
        if chosen.len() == slots {
            break;
        }
        if chosen.insert(*fp) {
            backfilled += 1;
        }
    }
    Selection {
        index: chosen.into_iter().collect(),
        by_frequency: n_freq,
        by_locality,
        backfilled,
    }
}

pub fn build_share_index<E>(
    est: &E,
    candidates: &[Fingerprint],
    recipes: &[FileRecipe],
    spec: &ShareIndexSpec,
    exec: ExecPolicy,
) -> ShareIndex
where
    E: FrequencyEstimator + Sync,
{
    select_share_index(est, candidates, recipes, spec, exec).index
}
