use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ClusterLabels;
use crate::error::{Error, Result};
use crate::model::{sq_dist, DataMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Average,
    Centroid,
    Ward,
}

impl Linkage {
    pub const ALL: [Linkage; 4] = [Linkage::Single, Linkage::Average, Linkage::Centroid, Linkage::Ward];

    pub fn name(self) -> &'static str {
        match self {
            Linkage::Single => "single",
            Linkage::Average => "average",
            Linkage::Centroid => "centroid",
            Linkage::Ward => "ward",
        }
    }

    /// Heights never decrease along the merge sequence.
    pub fn is_monotone(self) -> bool {
        !matches!(self, Linkage::Centroid)
    }

    /// Lance-Williams update: distance from cluster `k` to the union of `i`
    /// and `j`. The same expression is applied coefficient-wise when tracking
    /// distances as functions of the perturbation, so keep it the single
    /// source of truth.
    #[inline]
    pub(crate) fn update(self, d_ki: f64, d_kj: f64, d_ij: f64, n_i: usize, n_j: usize, n_k: usize) -> f64 {
        let (ni, nj, nk) = (n_i as f64, n_j as f64, n_k as f64);
        match self {
            Linkage::Single => d_ki.min(d_kj),
            Linkage::Average => (ni * d_ki + nj * d_kj) / (ni + nj),
            Linkage::Centroid => {
                let nij = ni + nj;
                (ni * d_ki + nj * d_kj) / nij - ni * nj * d_ij / (nij * nij)
            }
            Linkage::Ward => ((nk + ni) * d_ki + (nk + nj) * d_kj - nk * d_ij) / (ni + nj + nk),
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Linkage::Single),
            "average" => Ok(Linkage::Average),
            "centroid" => Ok(Linkage::Centroid),
            "ward" | "ward.d" => Ok(Linkage::Ward),
            other => Err(Error::invalid(format!("unknown linkage '{other}'"))),
        }
    }
}

/// One agglomeration step. Leaves have ids `0..n`; the cluster created at
/// step `l` has id `n + l`. `left < right` always.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSequence {
    pub linkage: Linkage,
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl MergeSequence {
    pub fn heights(&self) -> impl Iterator<Item = f64> + '_ {
        self.merges.iter().map(|m| m.height)
    }
}

/// Ordering key of a candidate pair: distance, then older id, then younger id.
#[derive(Debug, Clone, Copy)]
struct PairKey {
    d: f64,
    lo: usize,
    hi: usize,
}

impl PairKey {
    fn new(d: f64, a: usize, b: usize) -> Self {
        Self { d, lo: a.min(b), hi: a.max(b) }
    }

    fn less(&self, other: &PairKey) -> bool {
        match self.d.partial_cmp(&other.d).unwrap_or(Ordering::Equal) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => (self.lo, self.hi) < (other.lo, other.hi),
        }
    }
}

/// Greedy agglomeration over squared Euclidean distances: every step merges
/// the alive pair with the smallest linkage distance, ties going to the
/// lexicographically smallest `(older id, younger id)`.
pub fn hierarchical(x: &DataMatrix, linkage: Linkage) -> Result<MergeSequence> {
    let n = x.n();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for k in (i + 1)..n {
            let d = sq_dist(x.row(i), x.row(k));
            dist[i * n + k] = d;
            dist[k * n + i] = d;
        }
    }
    if dist.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("distance matrix has non-finite entries"));
    }

    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    // Cached nearest alive neighbour of each slot.
    let mut nn: Vec<(PairKey, usize)> = vec![(PairKey::new(f64::INFINITY, usize::MAX, usize::MAX), usize::MAX); n];

    let recompute = |s: usize, dist: &[f64], id: &[usize], alive: &[bool]| -> (PairKey, usize) {
        let mut best = (PairKey::new(f64::INFINITY, usize::MAX, usize::MAX), usize::MAX);
        for t in 0..n {
            if t != s && alive[t] {
                let key = PairKey::new(dist[s * n + t], id[s], id[t]);
                if best.1 == usize::MAX || key.less(&best.0) {
                    best = (key, t);
                }
            }
        }
        best
    };
    for (s, slot) in nn.iter_mut().enumerate() {
        *slot = recompute(s, &dist, &id, &alive);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best_slot = usize::MAX;
        for s in (0..n).filter(|&s| alive[s]) {
            if best_slot == usize::MAX || nn[s].0.less(&nn[best_slot].0) {
                best_slot = s;
            }
        }
        let (key, partner) = nn[best_slot];
        // Slot of the older cluster keeps the merged cluster.
        let (a, b) = if id[best_slot] < id[partner] { (best_slot, partner) } else { (partner, best_slot) };
        let d_ab = dist[a * n + b];
        for k in 0..n {
            if !alive[k] || k == a || k == b {
                continue;
            }
            let d = linkage.update(dist[k * n + a], dist[k * n + b], d_ab, size[a], size[b], size[k]);
            dist[k * n + a] = d;
            dist[a * n + k] = d;
        }
        merges.push(Merge { left: id[a], right: id[b], height: key.d, size: size[a] + size[b] });
        alive[b] = false;
        size[a] += size[b];
        id[a] = n + step;

        for k in 0..n {
            if !alive[k] || k == a {
                continue;
            }
            if nn[k].1 == a || nn[k].1 == b {
                nn[k] = recompute(k, &dist, &id, &alive);
            } else {
                let cand = PairKey::new(dist[k * n + a], id[k], id[a]);
                if cand.less(&nn[k].0) {
                    nn[k] = (cand, a);
                }
            }
        }
        nn[a] = recompute(a, &dist, &id, &alive);
    }
    Ok(MergeSequence { linkage, n, merges })
}

/// Undo the last `k - 1` merges. Clusters are numbered in order of their
/// smallest member.
pub fn cut_dendrogram(m: &MergeSequence, k: usize) -> Result<ClusterLabels> {
    let n = m.n;
    if k < 1 || k > n {
        return Err(Error::invalid(format!("cannot cut {n} observations into {k} clusters")));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    // Representative leaf of every cluster id.
    let mut rep: Vec<usize> = (0..n).collect();
    for merge in &m.merges[..n - k] {
        let ra = find(&mut parent, rep[merge.left]);
        let rb = find(&mut parent, rep[merge.right]);
        parent[rb] = ra;
        rep.push(ra);
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    let labels = (0..n)
        .map(|i| {
            let r = find(&mut parent, i);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect();
    ClusterLabels::new(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    /// Reference agglomerator: recomputes every cluster distance from the
    /// member points at every step.
    fn naive(x: &DataMatrix, linkage: Linkage) -> Vec<(Vec<usize>, Vec<usize>, f64)> {
        let n = x.n();
        let q = x.q();
        let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
        let centroid = |m: &[usize]| -> Vec<f64> {
            (0..q).map(|j| m.iter().map(|&i| x.get(i, j)).sum::<f64>() / m.len() as f64).collect()
        };
        let dist = |a: &[usize], b: &[usize]| -> f64 {
            match linkage {
                Linkage::Single => a
                    .iter()
                    .flat_map(|&i| b.iter().map(move |&k| (i, k)))
                    .map(|(i, k)| sq_dist(x.row(i), x.row(k)))
                    .fold(f64::INFINITY, f64::min),
                Linkage::Average => {
                    let s: f64 = a.iter().flat_map(|&i| b.iter().map(move |&k| sq_dist(x.row(i), x.row(k)))).sum();
                    s / (a.len() * b.len()) as f64
                }
                Linkage::Centroid => sq_dist(&centroid(a), &centroid(b)),
                Linkage::Ward => {
                    let (na, nb) = (a.len() as f64, b.len() as f64);
                    2.0 * na * nb / (na + nb) * sq_dist(&centroid(a), &centroid(b))
                }
            }
        };
        let mut out = Vec::new();
        let mut next_id = n;
        while clusters.len() > 1 {
            let mut best = (f64::INFINITY, 0, 0);
            for s in 0..clusters.len() {
                for t in (s + 1)..clusters.len() {
                    let d = dist(&clusters[s].1, &clusters[t].1);
                    if d < best.0 - 1e-9 {
                        best = (d, s, t);
                    }
                }
            }
            let (d, s, t) = best;
            let b = clusters.remove(t);
            let a = clusters.remove(s);
            let mut merged = [a.1.clone(), b.1.clone()].concat();
            merged.sort_unstable();
            out.push((a.1, b.1, d));
            clusters.push((next_id, merged));
            next_id += 1;
        }
        out
    }

    fn members(m: &MergeSequence, id: usize) -> Vec<usize> {
        if id < m.n {
            return vec![id];
        }
        let merge = m.merges[id - m.n];
        let mut v = [members(m, merge.left), members(m, merge.right)].concat();
        v.sort_unstable();
        v
    }

    #[test]
    fn three_point_examples() {
        let x = DataMatrix::new(3, 1, vec![0.0, 1.0, 10.0]).unwrap();
        let m = hierarchical(&x, Linkage::Single).unwrap();
        assert_eq!((m.merges[0].left, m.merges[0].right, m.merges[0].height), (0, 1, 1.0));
        assert_eq!((m.merges[1].left, m.merges[1].right, m.merges[1].height), (2, 3, 81.0));
        let m = hierarchical(&x, Linkage::Average).unwrap();
        assert_eq!(m.merges[1].height, 90.5);

        assert_eq!(cut_dendrogram(&m, 1).unwrap().labels(), &[0, 0, 0]);
        assert_eq!(cut_dendrogram(&m, 2).unwrap().labels(), &[0, 0, 1]);
        assert_eq!(cut_dendrogram(&m, 3).unwrap().labels(), &[0, 1, 2]);
        assert!(cut_dendrogram(&m, 0).is_err());
        assert!(cut_dendrogram(&m, 4).is_err());
    }

    #[test]
    fn ties_go_to_the_oldest_pair() {
        let x = DataMatrix::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let m = hierarchical(&x, Linkage::Single).unwrap();
        assert_eq!((m.merges[0].left, m.merges[0].right), (0, 1));
        assert_eq!((m.merges[1].left, m.merges[1].right), (2, 3));
    }

    #[test]
    fn matches_naive_agglomerator() {
        let mut r = rng::seeded(42);
        for trial in 0..25 {
            let n = 12;
            let vals: Vec<f64> = (0..n * 3).map(|_| r.random_range(-5.0..5.0)).collect();
            let x = DataMatrix::new(n, 3, vals).unwrap();
            for linkage in Linkage::ALL {
                let fast = hierarchical(&x, linkage).unwrap();
                let slow = naive(&x, linkage);
                for (step, (merge, (a, b, d))) in fast.merges.iter().zip(&slow).enumerate() {
                    let mut fa = members(&fast, merge.left);
                    let mut fb = members(&fast, merge.right);
                    let (mut sa, mut sb) = (a.clone(), b.clone());
                    sa.sort_unstable();
                    sb.sort_unstable();
                    if fa > fb {
                        std::mem::swap(&mut fa, &mut fb);
                    }
                    if sa > sb {
                        std::mem::swap(&mut sa, &mut sb);
                    }
                    assert_eq!((fa, fb), (sa, sb), "trial {trial} {linkage} step {step}");
                    assert!((merge.height - d).abs() < 1e-9 * d.max(1.0), "{linkage} step {step}");
                }
            }
        }
    }

    #[test]
    fn heights_monotone_and_cuts_nest() {
        let mut r = rng::seeded(3);
        for _ in 0..10 {
            let vals: Vec<f64> = (0..40 * 2).map(|_| r.random_range(-5.0..5.0)).collect();
            let x = DataMatrix::new(40, 2, vals).unwrap();
            for linkage in Linkage::ALL {
                let m = hierarchical(&x, linkage).unwrap();
                if linkage.is_monotone() {
                    let h: Vec<f64> = m.heights().collect();
                    assert!(h.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{linkage}");
                }
                for k in 2..=40 {
                    let fine = cut_dendrogram(&m, k).unwrap();
                    let coarse = cut_dendrogram(&m, k - 1).unwrap();
                    assert_eq!(fine.k(), k);
                    assert!(fine.refines(&coarse));
                }
            }
        }
    }
}
