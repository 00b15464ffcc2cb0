//! k-means (k-means++ seeding, Lloyd iterations), staged cascade
//! clustering, and agglomerative hierarchical clustering.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest final inertia wins.
    pub n_init: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            seed: 42,
            max_iter: 300,
            tol: 1e-6,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment<T: Scalar> {
    pub k: usize,
    /// Point ids in input order.
    pub ids: Vec<String>,
    /// Cluster of each point, aligned with `ids`.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    pub inertia: T,
    pub seed: u64,
    pub iterations_run: usize,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_history: Vec<T>,
}

impl<T: Scalar> ClusterAssignment<T> {
    /// Sum of squared distances of each point to its assigned centroid.
    pub fn recompute_inertia(&self, points: &[Vec<T>]) -> T {
        points
            .iter()
            .zip(&self.labels)
            .map(|(p, &l)| squared_distance(p, &self.centroids[l]))
            .sum()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }
}

pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn check_points<T: Scalar>(ids: &[String], points: &[Vec<T>]) -> Result<usize> {
    if ids.len() != points.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ids for {} points",
            ids.len(),
            points.len()
        )));
    }
    let dim = points.first().map_or(0, Vec::len);
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    let mut seen = HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::DuplicateId(dup.clone()));
    }
    Ok(dim)
}

/// Nearest centroid; equal distances go to the lowest index.
fn nearest<T: Scalar>(point: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, squared_distance(point, &centroids[0]));
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<T: Scalar>(points: &[&Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut weights: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]).as_f64())
        .collect();
    while centroids.len() < k {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target at the very top of the range
            pick.unwrap_or_else(|| weights.iter().rposition(|&w| w > 0.0).expect("positive weight"))
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let centroid = points[pick].clone();
        for (w, p) in weights.iter_mut().zip(points) {
            *w = w.min(squared_distance(p, &centroid).as_f64());
        }
        centroids.push(centroid);
    }
    centroids
}

struct LloydRun<T: Scalar> {
    labels: Vec<usize>,
    centroids: Vec<Vec<T>>,
    inertia: T,
    iterations: usize,
    history: Vec<T>,
}

fn lloyd<T: Scalar>(points: &[&Vec<T>], mut centroids: Vec<Vec<T>>, params: &KMeansParams) -> LloydRun<T> {
    let k = centroids.len();
    let dim = points[0].len();
    let tol = T::of(params.tol);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut labels = vec![0; points.len()];
    for _ in 0..params.max_iter.max(1) {
        iterations += 1;
        let mut inertia = T::zero();
        for (label, p) in labels.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            *label = c;
            inertia = inertia + d;
        }
        history.push(inertia);

        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, &x) in sums[l].iter_mut().zip(p.iter()) {
                *s = *s + x;
            }
        }
        let mut updated: Vec<Vec<T>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((sum, &count), old)| {
                if count == 0 {
                    old.clone()
                } else {
                    let c = T::of_usize(count);
                    sum.into_iter().map(|s| s / c).collect()
                }
            })
            .collect();
        // empty clusters take the point farthest from its own centroid
        for empty in (0..k).filter(|&c| counts[c] == 0).collect::<Vec<_>>() {
            let mut best: Option<(usize, T)> = None;
            for (i, p) in points.iter().enumerate() {
                if counts[labels[i]] <= 1 {
                    continue;
                }
                let d = squared_distance(p, &updated[labels[i]]);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
            if let Some((i, _)) = best {
                counts[labels[i]] -= 1;
                labels[i] = empty;
                counts[empty] = 1;
                updated[empty] = points[i].clone();
            }
        }
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(T::zero(), T::max);
        centroids = updated;
        if shift < tol {
            break;
        }
    }
    let mut inertia = T::zero();
    for (label, p) in labels.iter_mut().zip(points) {
        let (c, d) = nearest(p, &centroids);
        *label = c;
        inertia = inertia + d;
    }
    history.push(inertia);
    LloydRun {
        labels,
        centroids,
        inertia,
        iterations,
        history,
    }
}

/// k-means over `points`, seeded by k-means++.
///
/// Points are processed in ascending id order and clusters are numbered by
/// their first member in that order, so permuting the input changes neither
/// the partition nor the inertia.
pub fn kmeans<T: Scalar>(
    ids: &[String],
    points: &[Vec<T>],
    k: usize,
    params: &KMeansParams,
) -> Result<ClusterAssignment<T>> {
    check_points(ids, points)?;
    let n = points.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds {n} points")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    let sorted: Vec<&Vec<T>> = order.iter().map(|&i| &points[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<LloydRun<T>> = None;
    for _ in 0..params.n_init.max(1) {
        let init = plus_plus_init(&sorted, k, &mut rng);
        let run = lloyd(&sorted, init, params);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");

    // renumber clusters by first appearance in id order
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &run.labels {
        if remap[l] == usize::MAX {
            remap[l] = next;
            next += 1;
        }
    }
    for slot in remap.iter_mut().filter(|s| **s == usize::MAX) {
        *slot = next;
        next += 1;
    }
    let mut centroids = vec![Vec::new(); k];
    for (old, c) in run.centroids.into_iter().enumerate() {
        centroids[remap[old]] = c;
    }
    let mut labels = vec![0; n];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = remap[run.labels[pos]];
    }
    Ok(ClusterAssignment {
        k,
        ids: ids.to_vec(),
        labels,
        centroids,
        inertia: run.inertia,
        seed: params.seed,
        iterations_run: run.iterations,
        inertia_history: run.history,
    })
}

/// What each cascade stage clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Restage {
    /// Stage i+1 clusters the centroids of stage i.
    #[default]
    Centroids,
    /// Every stage re-clusters the original vectors.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeResult<T: Scalar> {
    pub stages: Vec<ClusterAssignment<T>>,
    /// `membership[stage][i]`: cluster of original point `i` at that stage.
    pub membership: Vec<Vec<usize>>,
}

impl<T: Scalar> CascadeResult<T> {
    pub fn final_membership(&self) -> &[usize] {
        self.membership.last().map_or(&[], Vec::as_slice)
    }
}

/// Staged k-means with strictly decreasing `ks`.
pub fn cascade_cluster<T: Scalar>(
    ids: &[String],
    points: &[Vec<T>],
    ks: &[usize],
    params: &KMeansParams,
    restage: Restage,
) -> Result<CascadeResult<T>> {
    if ks.is_empty() {
        return Err(Error::InvalidArgument("no cluster counts given".into()));
    }
    if ks.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(format!(
            "cluster counts must be strictly decreasing, got {ks:?}"
        )));
    }
    if ks[0] > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {} exceeds {} points",
            ks[0],
            points.len()
        )));
    }
    let mut stages: Vec<ClusterAssignment<T>> = Vec::with_capacity(ks.len());
    let mut membership: Vec<Vec<usize>> = Vec::with_capacity(ks.len());
    for (stage, &k) in ks.iter().enumerate() {
        let assignment = match (restage, stages.last()) {
            (Restage::Centroids, Some(prev)) => {
                let centroid_ids: Vec<String> =
                    (0..prev.k).map(|c| format!("s{}c{c:06}", stage - 1)).collect();
                kmeans(&centroid_ids, &prev.centroids, k, params)?
            }
            _ => kmeans(ids, points, k, params)?,
        };
        let mapped = match (restage, membership.last()) {
            (Restage::Centroids, Some(prev)) => prev.iter().map(|&c| assignment.labels[c]).collect(),
            _ => assignment.labels.clone(),
        };
        membership.push(mapped);
        stages.push(assignment);
    }
    Ok(CascadeResult { stages, membership })
}

/// Rescales reference cluster counts to a corpus of `n` points:
/// `ceil(k * n / reference)`, clamped to `[1, n]`, keeping only strictly
/// decreasing values.
pub fn scale_ks(ks: &[usize], n: usize, reference: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for &k in ks {
        let scaled = if n >= reference {
            k.min(n)
        } else {
            (k * n).div_ceil(reference.max(1)).clamp(1, n.max(1))
        };
        if out.last().is_none_or(|&last| scaled < last) {
            out.push(scaled);
        }
    }
    out
}

/// Mean silhouette coefficient under Euclidean distance. `None` when fewer
/// than two clusters are populated.
pub fn silhouette_score<T: Scalar>(points: &[Vec<T>], labels: &[usize]) -> Option<f64> {
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *sizes.entry(l).or_default() += 1;
    }
    if sizes.len() < 2 {
        return None;
    }
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        if sizes[&labels[i]] == 1 {
            continue;
        }
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for j in 0..n {
            if i != j {
                *sums.entry(labels[j]).or_default() += squared_distance(&points[i], &points[j]).as_f64().sqrt();
            }
        }
        let own = sums.get(&labels[i]).copied().unwrap_or(0.0) / (sizes[&labels[i]] - 1) as f64;
        let other = sums
            .iter()
            .filter(|(&l, _)| l != labels[i])
            .map(|(l, s)| s / sizes[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = own.max(other);
        if denom > 0.0 {
            total += (other - own) / denom;
        }
    }
    Some(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

/// One agglomeration step. Leaves are nodes `0..n`; the merge at position
/// `m` creates node `n + m`. `left` holds the smaller leaf index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge<T: Scalar> {
    pub left: usize,
    pub right: usize,
    pub distance: T,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkageTree<T: Scalar> {
    pub merges: Vec<Merge<T>>,
    pub labels: Vec<String>,
}

impl<T: Scalar> LinkageTree<T> {
    pub fn leaves(&self) -> usize {
        self.labels.len()
    }
}

fn validate_dissimilarity<T: Scalar>(d: &[Vec<T>]) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Err(Error::InvalidMatrix("empty dissimilarity matrix".into()));
    }
    for (i, row) in d.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidMatrix(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        if row[i] != T::zero() {
            return Err(Error::InvalidMatrix(format!("nonzero diagonal at {i}")));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::InvalidMatrix(format!("negative or non-finite entry at ({i}, {j})")));
            }
            let w = d[j][i];
            let scale = T::one().max(v.abs()).max(w.abs());
            if (v - w).abs() > T::of(1e-12) * scale {
                return Err(Error::InvalidMatrix(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Agglomerative clustering of a symmetric, zero-diagonal, non-negative
/// dissimilarity matrix. Equal distances are broken by the smallest pair of
/// cluster minimum-leaf indices.
pub fn agglomerate<T: Scalar>(
    dissimilarity: &[Vec<T>],
    linkage: Linkage,
    labels: Option<Vec<String>>,
) -> Result<LinkageTree<T>> {
    validate_dissimilarity(dissimilarity)?;
    let n = dissimilarity.len();
    let labels = labels.unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!("{} labels for {n} leaves", labels.len())));
    }
    let mut dist: Vec<Vec<T>> = dissimilarity.to_vec();
    let mut active = vec![true; n];
    let mut node = (0..n).collect::<Vec<_>>();
    let mut size = vec![1usize; n];
    // slot i always holds the cluster whose minimum leaf is i
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for m in 0..n.saturating_sub(1) {
        let mut best: Option<(usize, usize, T)> = None;
        for a in (0..n).filter(|&a| active[a]) {
            for b in (a + 1..n).filter(|&b| active[b]) {
                let d = dist[a][b];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((a, b, d));
                }
            }
        }
        let (a, b, d) = best.expect("two active clusters");
        merges.push(Merge {
            left: node[a],
            right: node[b],
            distance: d,
            size: size[a] + size[b],
        });
        let (sa, sb) = (T::of_usize(size[a]), T::of_usize(size[b]));
        for c in (0..n).filter(|&c| active[c] && c != a && c != b) {
            let updated = match linkage {
                Linkage::Average => (sa * dist[a][c] + sb * dist[b][c]) / (sa + sb),
                Linkage::Complete => dist[a][c].max(dist[b][c]),
                Linkage::Single => dist[a][c].min(dist[b][c]),
            };
            dist[a][c] = updated;
            dist[c][a] = updated;
        }
        active[b] = false;
        size[a] += size[b];
        node[a] = n + m;
    }
    Ok(LinkageTree { merges, labels })
}

/// Leaf partition left after removing the `groups - 1` highest merges.
/// Groups are sorted, and ordered by their smallest leaf.
pub fn cut_tree<T: Scalar>(tree: &LinkageTree<T>, groups: usize) -> Result<Vec<Vec<usize>>> {
    let n = tree.leaves();
    if groups == 0 || groups > n {
        return Err(Error::InvalidArgument(format!("cannot cut {n} leaves into {groups} groups")));
    }
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    // linkages here are monotone, so the highest merges are the last ones
    for (m, merge) in tree.merges.iter().take(n - groups).enumerate() {
        let new = n + m;
        let l = root(&mut parent, merge.left);
        let r = root(&mut parent, merge.right);
        parent[l] = new;
        parent[r] = new;
    }
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for leaf in 0..n {
        let r = root(&mut parent, leaf);
        by_root.entry(r).or_default().push(leaf);
    }
    let mut out: Vec<Vec<usize>> = by_root.into_values().collect();
    out.sort_by_key(|g| g[0]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn k_equals_n_is_zero_inertia() {
        let pts = vec![vec![0.0, 1.0], vec![3.0, 4.0], vec![-2.0, 5.0]];
        let a = kmeans(&ids(3), &pts, 3, &KMeansParams::default()).unwrap();
        assert_eq!(a.inertia, 0.0);
        let mut labels = a.labels.clone();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn k_one_is_the_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let a = kmeans(&ids(3), &pts, 1, &KMeansParams::default()).unwrap();
        assert_relative_eq!(a.centroids[0][0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(a.centroids[0][1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(a.inertia, a.recompute_inertia(&pts), max_relative = 1e-6);
    }

    #[test]
    fn bad_k_is_rejected() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&ids(2), &pts, 0, &KMeansParams::default()).is_err());
        assert!(kmeans(&ids(2), &pts, 3, &KMeansParams::default()).is_err());
    }

    #[test]
    fn two_separated_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts = Vec::new();
        for g in 0..2 {
            for _ in 0..10 {
                let r: f64 = rng.random::<f64>();
                let t: f64 = rng.random::<f64>() * std::f64::consts::TAU;
                let c = 10.0 * g as f64;
                pts.push(vec![c + r * t.cos(), c + r * t.sin()]);
            }
        }
        let a = kmeans(&ids(20), &pts, 2, &KMeansParams::default()).unwrap();
        assert!(a.labels[..10].iter().all(|&l| l == a.labels[0]));
        assert!(a.labels[10..].iter().all(|&l| l == a.labels[10]));
        assert_ne!(a.labels[0], a.labels[10]);
    }

    #[test]
    fn permutation_invariance() {
        let pts: Vec<Vec<f64>> = (0..12).map(|i| vec![(i * 7 % 5) as f64, (i * 3 % 4) as f64]).collect();
        let names = ids(12);
        let a = kmeans(&names, &pts, 3, &KMeansParams::default()).unwrap();
        let perm: Vec<usize> = (0..12).rev().collect();
        let pts2: Vec<_> = perm.iter().map(|&i| pts[i].clone()).collect();
        let names2: Vec<_> = perm.iter().map(|&i| names[i].clone()).collect();
        let b = kmeans(&names2, &pts2, 3, &KMeansParams::default()).unwrap();
        assert_eq!(a.inertia, b.inertia);
        for (pos, &i) in perm.iter().enumerate() {
            assert_eq!(a.labels[i], b.labels[pos]);
        }
    }

    #[test]
    fn cascade_stages() {
        let pts: Vec<Vec<f64>> = (0..80).map(|i| vec![(i % 17) as f64, (i / 17) as f64]).collect();
        let names = ids(80);
        let params = KMeansParams {
            n_init: 1,
            ..KMeansParams::default()
        };
        let r = cascade_cluster(&names, &pts, &[40, 10, 5], &params, Restage::Centroids).unwrap();
        assert_eq!(r.stages.iter().map(|s| s.k).collect::<Vec<_>>(), vec![40, 10, 5]);
        assert!(r.final_membership().iter().all(|&c| c < 5));
        for i in 0..80 {
            let s0 = r.membership[0][i];
            assert_eq!(r.membership[1][i], r.stages[1].labels[s0]);
        }
        let raw = cascade_cluster(&names, &pts, &[10, 5], &params, Restage::Raw).unwrap();
        assert_eq!(raw.membership[1], raw.stages[1].labels);
        let single = cascade_cluster(&names, &pts, &[80], &params, Restage::Centroids).unwrap();
        assert_eq!(single.stages.len(), 1);
        assert!(cascade_cluster(&names, &pts, &[10, 20], &params, Restage::Centroids).is_err());
        assert!(cascade_cluster(&names, &pts, &[81], &params, Restage::Centroids).is_err());
    }

    #[test]
    fn desk_scale_ks() {
        assert_eq!(scale_ks(&[400, 100, 50], 80, 800), vec![40, 10, 5]);
        assert_eq!(scale_ks(&[400, 100, 50], 800, 800), vec![400, 100, 50]);
        assert_eq!(scale_ks(&[400, 100, 50], 3, 800), vec![2, 1]);
    }

    #[test]
    fn silhouette_of_separated_clusters() {
        let pts = vec![vec![0.0], vec![0.1], vec![10.0], vec![10.1]];
        let s = silhouette_score(&pts, &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.95);
        assert!(silhouette_score(&pts, &[0, 0, 0, 0]).is_none());
    }

    fn three_point() -> Vec<Vec<f64>> {
        vec![vec![0.0, 1.0, 10.0], vec![1.0, 0.0, 10.0], vec![10.0, 10.0, 0.0]]
    }

    #[test]
    fn hand_traced_linkage() {
        let tree = agglomerate(&three_point(), Linkage::Average, None).unwrap();
        assert_eq!(tree.merges.len(), 2);
        assert_eq!((tree.merges[0].left, tree.merges[0].right), (0, 1));
        assert_eq!(tree.merges[0].distance, 1.0);
        assert_eq!((tree.merges[1].left, tree.merges[1].right), (3, 2));
        assert_eq!(tree.merges[1].distance, 10.0);
        assert_eq!(tree.merges[1].size, 3);
        assert_eq!(cut_tree(&tree, 2).unwrap(), vec![vec![0, 1], vec![2]]);
        assert_eq!(cut_tree(&tree, 1).unwrap(), vec![vec![0, 1, 2]]);
        assert_eq!(cut_tree(&tree, 3).unwrap(), vec![vec![0], vec![1], vec![2]]);
        assert!(cut_tree(&tree, 0).is_err());
        assert!(cut_tree(&tree, 4).is_err());
    }

    #[test]
    fn two_leaves_single_merge() {
        let tree = agglomerate(&[vec![0.0, 2.0], vec![2.0, 0.0]], Linkage::Complete, None).unwrap();
        assert_eq!(tree.merges.len(), 1);
    }

    #[test]
    fn equal_distances_break_by_index() {
        let d = vec![
            vec![0.0, 1.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0, 0.0],
        ];
        let tree = agglomerate(&d, Linkage::Average, None).unwrap();
        assert!(tree.merges.iter().all(|m| m.distance == 1.0));
        assert_eq!((tree.merges[0].left, tree.merges[0].right), (0, 1));
        assert_eq!((tree.merges[1].left, tree.merges[1].right), (4, 2));
        assert_eq!((tree.merges[2].left, tree.merges[2].right), (5, 3));
    }

    #[test]
    fn invalid_matrices() {
        let asym = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        assert!(matches!(agglomerate(&asym, Linkage::Average, None), Err(Error::InvalidMatrix(_))));
        let neg = vec![vec![0.0, -1.0], vec![-1.0, 0.0]];
        assert!(matches!(agglomerate(&neg, Linkage::Average, None), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn linkage_variants_differ() {
        // d(0,1)=1, d(2,{0,1}) = 4 and 6
        let d = vec![vec![0.0, 1.0, 4.0], vec![1.0, 0.0, 6.0], vec![4.0, 6.0, 0.0]];
        let h = |l| agglomerate(&d, l, None).unwrap().merges[1].distance;
        assert_eq!(h(Linkage::Single), 4.0);
        assert_eq!(h(Linkage::Complete), 6.0);
        assert_eq!(h(Linkage::Average), 5.0);
    }

    proptest! {
        #[test]
        fn average_linkage_is_monotone(coords in proptest::collection::vec(-5.0f64..5.0, 2..24)) {
            let pts: Vec<f64> = coords;
            let n = pts.len();
            let d: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| (pts[i] - pts[j]).abs()).collect())
                .collect();
            let tree = agglomerate(&d, Linkage::Average, None).unwrap();
            prop_assert_eq!(tree.merges.len(), n - 1);
            for w in tree.merges.windows(2) {
                prop_assert!(w[1].distance >= w[0].distance - 1e-12);
            }
            prop_assert_eq!(cut_tree(&tree, n).unwrap().len(), n);
            prop_assert_eq!(cut_tree(&tree, 1).unwrap().len(), 1);
        }

        #[test]
        fn lloyd_inertia_never_increases(
            coords in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 4..30),
            k in 1usize..4,
            seed in 0u64..1000,
        ) {
            let pts: Vec<Vec<f64>> = coords.iter().map(|&(x, y)| vec![x, y]).collect();
            let params = KMeansParams { seed, n_init: 1, ..KMeansParams::default() };
            let a = kmeans(&ids(pts.len()), &pts, k, &params).unwrap();
            for w in a.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            prop_assert!((a.inertia - a.recompute_inertia(&pts)).abs() <= 1e-6 * a.inertia.max(1e-12));
            prop_assert!(a.labels.iter().all(|&l| l < k));
        }
    }
}
