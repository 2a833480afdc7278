//! Trace-recording clustering: Lloyd's k-means and agglomerative hierarchical
//! clustering over squared Euclidean distances.

mod hierarchical;
mod kmeans;

pub use hierarchical::{cut_dendrogram, hierarchical, Linkage, Merge, MergeSequence};
pub(crate) use kmeans::update_centroids;
pub use kmeans::{kmeans_labels, kmeans_lloyd, kmeans_objective, EmptyClusterEvent, KMeansTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A partition of `0..n` into `k` nonempty clusters labelled `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabels {
    labels: Vec<usize>,
    k: usize,
}

impl ClusterLabels {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; k];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("cluster label {missing} has no members")));
        }
        Ok(Self { labels, k })
    }

    /// Relabel arbitrary ids to `0..k` preserving the order of the original ids.
    pub fn compact(raw: &[usize]) -> Self {
        let mut ids: Vec<usize> = raw.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let labels = raw.iter().map(|r| ids.binary_search(r).unwrap()).collect();
        Self { labels, k: ids.len() }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == cluster).map(|(i, _)| i).collect()
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// `true` when every cluster of `self` lies inside a cluster of `coarser`.
    pub fn refines(&self, coarser: &ClusterLabels) -> bool {
        let mut image = vec![usize::MAX; self.k];
        self.labels.iter().zip(&coarser.labels).all(|(&f, &c)| {
            if image[f] == usize::MAX {
                image[f] = c;
            }
            image[f] == c
        })
    }
}
