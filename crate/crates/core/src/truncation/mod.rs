//! Truncation sets: the values of the statistic for which perturbing the data
//! along the line leaves the clustering (or its full iteration history)
//! unchanged. Both clustering families reduce to intersecting solution sets
//! of quadratic inequalities in the statistic.

pub mod hierarchical;
pub mod kmeans;

pub use hierarchical::{merge_constraints, pairwise_quadratic, truncation_set_hier, PairQuadratic};
pub use kmeans::{
    affine_centroids, assignment_constraints, centroid_affine, truncation_set_kmeans, AffineCentroid,
};

use crate::clustering::ClusterLabels;
use crate::error::{Error, Result};
use crate::interval::{contains, IntervalUnion, QuadraticInequality};
use crate::model::{Contrast, PerturbationLine};

/// Both contrast groups must be complete clusters of `labels`.
pub(crate) fn check_groups_are_clusters(contrast: &Contrast, labels: &ClusterLabels) -> Result<()> {
    for group in [contrast.group_a(), contrast.group_b()] {
        let label = labels.labels()[group[0]];
        let members = labels.members(label);
        if members != group {
            return Err(Error::invalid(format!(
                "tested group starting at observation {} is not a cluster of the fitted partition",
                group[0]
            )));
        }
    }
    Ok(())
}

pub(crate) fn require_anchor(set: IntervalUnion, line: &PerturbationLine<'_>) -> Result<IntervalUnion> {
    if !contains(&set, line.anchor()) {
        return Err(Error::AnchorExcluded { statistic: line.anchor() });
    }
    Ok(set)
}

/// Drop constraints whose coefficients agree to 1e-12 relative.
pub(crate) fn dedup(mut constraints: Vec<QuadraticInequality>) -> Vec<QuadraticInequality> {
    constraints.sort_by(|x, y| {
        x.center
            .total_cmp(&y.center)
            .then(x.a.total_cmp(&y.a))
            .then(x.b.total_cmp(&y.b))
            .then(x.c.total_cmp(&y.c))
    });
    let close = |p: f64, q: f64| (p - q).abs() <= 1e-12 * p.abs().max(q.abs());
    constraints.dedup_by(|next, kept| {
        next.center == kept.center && close(next.a, kept.a) && close(next.b, kept.b) && close(next.c, kept.c)
    });
    constraints
}
