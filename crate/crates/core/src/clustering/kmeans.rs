use serde::{Deserialize, Serialize};

use super::ClusterLabels;
use crate::error::{Error, Result};
use crate::model::{sq_dist, DataMatrix};
use crate::rng;

/// A cluster that lost all of its members during an update step. Its centroid
/// from the previous step is carried forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyClusterEvent {
    /// Index of the assignment vector whose centroids were being computed.
    pub step: usize,
    pub cluster: usize,
}

/// Full history of one run of Lloyd's algorithm.
///
/// `assignments[0]` is the assignment to the sampled initial rows;
/// `assignments[t]` for `t >= 1` follows the `t`-th centroid update. The loop
/// ran `iterations = assignments.len() - 1` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansTrace {
    pub k: usize,
    pub seed: u64,
    pub t_max: usize,
    pub init_rows: Vec<usize>,
    pub assignments: Vec<Vec<usize>>,
    pub converged: bool,
    pub empty_events: Vec<EmptyClusterEvent>,
}

impl KMeansTrace {
    pub fn iterations(&self) -> usize {
        self.assignments.len() - 1
    }

    pub fn final_assignment(&self) -> &[usize] {
        self.assignments.last().expect("trace holds at least the initial assignment")
    }
}

/// Index of the nearest centroid; the lowest index wins ties.
#[inline]
pub(crate) fn nearest(row: &[f64], centroids: &[f64], q: usize) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, m) in centroids.chunks_exact(q).enumerate() {
        let d = sq_dist(row, m);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Means of the rows in each cluster. Empty clusters keep `previous`.
pub(crate) fn update_centroids(
    x: &DataMatrix,
    assignment: &[usize],
    previous: &[f64],
    k: usize,
) -> (Vec<f64>, Vec<usize>) {
    let q = x.q();
    let mut sums = vec![0.0; k * q];
    let mut counts = vec![0usize; k];
    for (row, &c) in x.rows().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c * q..(c + 1) * q].iter_mut().zip(row) {
            *s += v;
        }
    }
    let mut empty = Vec::new();
    for c in 0..k {
        if counts[c] == 0 {
            sums[c * q..(c + 1) * q].copy_from_slice(&previous[c * q..(c + 1) * q]);
            empty.push(c);
        } else {
            let inv = counts[c] as f64;
            sums[c * q..(c + 1) * q].iter_mut().for_each(|s| *s /= inv);
        }
    }
    (sums, empty)
}

/// Lloyd's algorithm with `k` initial centroids sampled (without replacement)
/// from the rows using `seed`, running at most `t_max` update iterations.
pub fn kmeans_lloyd(x: &DataMatrix, k: usize, t_max: usize, seed: u64) -> Result<KMeansTrace> {
    if k < 2 || k > x.n() {
        return Err(Error::invalid(format!("k-means needs 2 <= K <= n, got K={k}, n={}", x.n())));
    }
    if t_max < 1 {
        return Err(Error::invalid("t_max must be at least 1"));
    }
    let init_rows = rng::sample_without_replacement(&mut rng::seeded(seed), x.n(), k);
    Ok(lloyd_from_init(x, &init_rows, t_max, seed))
}

pub(crate) fn lloyd_from_init(x: &DataMatrix, init_rows: &[usize], t_max: usize, seed: u64) -> KMeansTrace {
    let q = x.q();
    let k = init_rows.len();
    let mut centroids: Vec<f64> = init_rows.iter().flat_map(|&r| x.row(r).iter().copied()).collect();
    let assign = |centroids: &[f64]| -> Vec<usize> { x.rows().map(|row| nearest(row, centroids, q)).collect() };

    let mut assignments = vec![assign(&centroids)];
    let mut empty_events = Vec::new();
    let mut converged = false;
    for t in 1..=t_max {
        let (next, empty) = update_centroids(x, &assignments[t - 1], &centroids, k);
        empty_events.extend(empty.into_iter().map(|cluster| EmptyClusterEvent { step: t, cluster }));
        centroids = next;
        let a = assign(&centroids);
        let same = a == assignments[t - 1];
        assignments.push(a);
        if same {
            converged = true;
            break;
        }
    }
    KMeansTrace { k, seed, t_max, init_rows: init_rows.to_vec(), assignments, converged, empty_events }
}

/// Final partition with empty clusters dropped.
pub fn kmeans_labels(trace: &KMeansTrace) -> ClusterLabels {
    ClusterLabels::compact(trace.final_assignment())
}

/// Within-cluster sum of squares of an assignment around its cluster means.
pub fn kmeans_objective(x: &DataMatrix, assignment: &[usize], k: usize) -> f64 {
    let (centroids, _) = update_centroids(x, assignment, &vec![0.0; k * x.q()], k);
    x.rows().zip(assignment).map(|(row, &c)| sq_dist(row, &centroids[c * x.q()..(c + 1) * x.q()])).sum()
}
