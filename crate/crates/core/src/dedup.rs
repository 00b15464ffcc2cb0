//! Removal of near-duplicate definitions within clusters by normalized
//! Levenshtein similarity.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::DefinitionCandidate;
use crate::text::fold_key;

pub const DEFAULT_THRESHOLD: f64 = 0.88;

/// Edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - lev / max(len)`. Two empty strings score 1.0.
pub fn fuzzy_match(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        log::debug!("fuzzy match on two empty strings");
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Case-folded with whitespace collapsed.
    #[default]
    Folded,
    Raw,
}

impl MatchMode {
    pub fn prepare(self, s: &str) -> String {
        match self {
            MatchMode::Folded => fold_key(s),
            MatchMode::Raw => s.to_string(),
        }
    }
}

pub fn fuzzy_score(a: &str, b: &str, mode: MatchMode) -> f64 {
    fuzzy_match(&mode.prepare(a), &mode.prepare(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupDecision {
    pub kept_id: String,
    pub dropped_id: String,
    pub score: f64,
    pub cluster: usize,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("dedup threshold {threshold} outside (0, 1]")))
    }
}

/// Greedy keep-earliest sweep over items `0..n`. Each item is compared with
/// the earlier survivors and dropped on the first score reaching
/// `threshold`. Returns survivors and `(kept, dropped, score)` triples.
pub fn greedy_sweep<F>(n: usize, threshold: f64, score: F) -> (Vec<usize>, Vec<(usize, usize, f64)>)
where
    F: Fn(usize, usize) -> f64,
{
    let mut survivors: Vec<usize> = Vec::with_capacity(n);
    let mut drops = Vec::new();
    for item in 0..n {
        let hit = survivors
            .iter()
            .map(|&kept| (kept, score(kept, item)))
            .find(|&(_, s)| s >= threshold);
        match hit {
            Some((kept, s)) => drops.push((kept, item, s)),
            None => survivors.push(item),
        }
    }
    (survivors, drops)
}

/// Deduplicates one cluster whose members are given in corpus order.
pub fn dedup_cluster(
    members: &[DefinitionCandidate],
    cluster: usize,
    threshold: f64,
    mode: MatchMode,
) -> Result<(Vec<DefinitionCandidate>, Vec<DedupDecision>)> {
    check_threshold(threshold)?;
    let keys: Vec<String> = members.iter().map(|m| mode.prepare(&m.sentence)).collect();
    let (survivors, drops) = greedy_sweep(members.len(), threshold, |a, b| fuzzy_match(&keys[a], &keys[b]));
    let decisions = drops
        .into_iter()
        .map(|(kept, dropped, score)| DedupDecision {
            kept_id: members[kept].id.clone(),
            dropped_id: members[dropped].id.clone(),
            score,
            cluster,
        })
        .collect();
    Ok((survivors.into_iter().map(|i| members[i].clone()).collect(), decisions))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossClusterPair {
    pub first_id: String,
    pub second_id: String,
    pub first_cluster: usize,
    pub second_cluster: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    /// Survivors in corpus order.
    pub survivors: Vec<DefinitionCandidate>,
    /// Ordered by cluster, then by the dropped item's corpus position.
    pub decisions: Vec<DedupDecision>,
}

/// Deduplicates every cluster independently. `candidates` must be in corpus
/// order; `clusters[i]` is the cluster of `candidates[i]`.
pub fn dedup_all(
    candidates: &[DefinitionCandidate],
    clusters: &[usize],
    threshold: f64,
    mode: MatchMode,
) -> Result<DedupOutcome> {
    check_threshold(threshold)?;
    if candidates.len() != clusters.len() {
        return Err(Error::DimensionMismatch {
            expected: candidates.len(),
            found: clusters.len(),
        });
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in clusters.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    let per_cluster: Vec<(Vec<usize>, Vec<DedupDecision>)> = groups
        .par_iter()
        .map(|(&cluster, members)| {
            let keys: Vec<String> = members.iter().map(|&i| mode.prepare(&candidates[i].sentence)).collect();
            let (kept, drops) = greedy_sweep(members.len(), threshold, |a, b| fuzzy_match(&keys[a], &keys[b]));
            let decisions = drops
                .into_iter()
                .map(|(k, d, score)| DedupDecision {
                    kept_id: candidates[members[k]].id.clone(),
                    dropped_id: candidates[members[d]].id.clone(),
                    score,
                    cluster,
                })
                .collect();
            (kept.into_iter().map(|k| members[k]).collect(), decisions)
        })
        .collect();
    let mut keep: Vec<usize> = Vec::new();
    let mut decisions = Vec::new();
    for (kept, d) in per_cluster {
        keep.extend(kept);
        decisions.extend(d);
    }
    keep.sort_unstable();
    Ok(DedupOutcome {
        survivors: keep.into_iter().map(|i| candidates[i].clone()).collect(),
        decisions,
    })
}

/// Pairs of survivors in different clusters scoring at least `threshold`.
/// Reported only; the within-cluster design leaves them in place.
pub fn cross_cluster_duplicates(
    survivors: &[DefinitionCandidate],
    clusters: &[usize],
    threshold: f64,
    mode: MatchMode,
) -> Vec<CrossClusterPair> {
    let keys: Vec<(String, usize)> = survivors
        .iter()
        .map(|s| {
            let k = mode.prepare(&s.sentence);
            let len = k.chars().count();
            (k, len)
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..survivors.len() {
        for j in i + 1..survivors.len() {
            if clusters[i] == clusters[j] {
                continue;
            }
            let (li, lj) = (keys[i].1, keys[j].1);
            let longest = li.max(lj);
            // the length gap alone bounds the score from above
            if longest > 0 && 1.0 - (li.abs_diff(lj) as f64 / longest as f64) < threshold {
                continue;
            }
            let score = fuzzy_match(&keys[i].0, &keys[j].0);
            if score >= threshold {
                out.push(CrossClusterPair {
                    first_id: survivors[i].id.clone(),
                    second_id: survivors[j].id.clone(),
                    first_cluster: clusters[i],
                    second_cluster: clusters[j],
                    score,
                });
            }
        }
    }
    out
}
