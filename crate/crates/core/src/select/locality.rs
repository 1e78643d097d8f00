//! Logical-locality proximity scoring over file recipes.
//!
//! For every frequent chunk `f` and every recipe containing it, each chunk
//! `c` of that recipe gains `1 / (1 + |pos(c) - pos(f)|)`. A chunk that
//! appears in many recipes next to frequent chunks accumulates a high score.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use crate::par::{self, ExecPolicy};
use crate::types::{FileRecipe, Fingerprint};

/// Frequent chunks are scored in fixed-size blocks whose partial sums are
/// merged in block order; the result is independent of thread count.
const BLOCK: usize = 32;

/// Scores closer than this are ranked as ties.
pub const SCORE_RESOLUTION: f64 = 1.0 / (1u64 << 20) as f64;

pub type ScoreMap = HashMap<Fingerprint, f64>;

/// Position of the first occurrence of each fingerprint in each recipe.
fn first_positions(recipes: &[FileRecipe]) -> HashMap<Fingerprint, Vec<(usize, usize)>> {
    let mut index: HashMap<Fingerprint, Vec<(usize, usize)>> = HashMap::new();
    for (ri, r) in recipes.iter().enumerate() {
        for (pos, e) in r.chunks.iter().enumerate() {
            let slot = index.entry(e.fingerprint).or_default();
            if slot.last().map(|&(last, _)| last) != Some(ri) {
                slot.push((ri, pos));
            }
        }
    }
    index
}

/// Cumulative proximity scores for every chunk near a frequent chunk.
/// `frequent` is processed in fingerprint order.
pub fn proximity_scores(
    frequent: &BTreeSet<Fingerprint>,
    recipes: &[FileRecipe],
    exec: ExecPolicy,
) -> ScoreMap {
    let index = first_positions(recipes);
    let seeds: Vec<&Fingerprint> = frequent.iter().filter(|f| index.contains_key(f)).collect();
    let blocks: Vec<&[&Fingerprint]> = seeds.chunks(BLOCK).collect();
    let partials = par::map_slice(exec, &blocks, |block| {
        let mut scores = ScoreMap::new();
        for f in block.iter() {
            for &(ri, pf) in &index[*f] {
                for (pos, c) in recipes[ri].chunks.iter().enumerate() {
                    let d = pos.abs_diff(pf);
                    *scores.entry(c.fingerprint).or_insert(0.0) += 1.0 / (1.0 + d as f64);
                }
            }
        }
        scores
    });
    let mut it = partials.into_iter();
    let mut total = it.next().unwrap_or_default();
    for part in it {
        // Deterministic merge: iterate the partial in key order.
        let mut keys: Vec<_> = part.into_iter().collect();
        keys.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        for (k, v) in keys {
            *total.entry(k).or_insert(0.0) += v;
        }
    }
    total
}

/// Orders by score descending at [`SCORE_RESOLUTION`], then fingerprint ascending.
pub fn rank_order(a: &(Fingerprint, f64), b: &(Fingerprint, f64)) -> Ordering {
    let qa = (a.1 / SCORE_RESOLUTION).round() as i64;
    let qb = (b.1 / SCORE_RESOLUTION).round() as i64;
    qb.cmp(&qa).then_with(|| a.0.cmp(&b.0))
}

/// Candidates scoring at least `threshold`, excluding the frequent set,
/// best first.
pub fn locality_select(
    frequent: &BTreeSet<Fingerprint>,
    recipes: &[FileRecipe],
    threshold: f64,
    exec: ExecPolicy,
) -> Vec<(Fingerprint, f64)> {
    let mut ranked: Vec<(Fingerprint, f64)> = proximity_scores(frequent, recipes, exec)
        .into_iter()
        .filter(|(fp, s)| *s + SCORE_RESOLUTION / 2.0 >= threshold && !frequent.contains(fp))
        .collect();
    ranked.sort_by(rank_order);
    ranked
}
