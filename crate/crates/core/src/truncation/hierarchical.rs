//! Truncation sets for agglomerative clustering.
//!
//! Both tested groups are whole clusters of the cut, so the first `n - K`
//! merges all happen inside final clusters and their heights do not move
//! with the perturbation. The cut is unchanged exactly when no pair of
//! clusters from different final clusters ever undercuts the merge that
//! happened while both were alive:
//!
//! ```text
//! d_AB(phi) >= max { h_l : A and B both alive at step l },   l < n - K
//! ```
//!
//! For average, centroid and Ward linkage every `d_AB(phi)` is a quadratic in
//! `s = phi - phi_hat`, carried through the merges by applying the linkage
//! update to each coefficient. Single linkage is a minimum over point pairs,
//! so every cross point pair is constrained by the largest height instead.

use crate::clustering::{cut_dendrogram, Linkage, MergeSequence};
use crate::error::{Error, Result};
use crate::interval::{solve_system, IntervalUnion, QuadraticInequality};
use crate::model::{sq_dist, PerturbationLine};

use super::{check_groups_are_clusters, dedup, require_anchor};

/// `d(s) = a s^2 + b s + c`, a squared distance along the line with
/// `s = phi - phi_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairQuadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PairQuadratic {
    pub fn eval(&self, s: f64) -> f64 {
        (self.a * s + self.b) * s + self.c
    }

    fn combine(linkage: Linkage, ki: Self, kj: Self, ij: Self, n_i: usize, n_j: usize, n_k: usize) -> Self {
        let f = |p: f64, q: f64, r: f64| linkage.update(p, q, r, n_i, n_j, n_k);
        Self { a: f(ki.a, kj.a, ij.a), b: f(ki.b, kj.b, ij.b), c: f(ki.c, kj.c, ij.c) }
    }

    /// `d(s) >= height` written as `<= 0`.
    fn at_least(&self, height: f64, center: f64) -> QuadraticInequality {
        QuadraticInequality::centered(-self.a, -self.b, height - self.c, center)
    }
}

/// Squared distance between observations `i` and `k` of `x'(phi)`. The
/// constant term is the distance in the observed data, computed exactly as
/// the clustering computes it.
pub fn pairwise_quadratic(line: &PerturbationLine<'_>, i: usize, k: usize) -> PairQuadratic {
    let x = line.base();
    let w = line.col_direction();
    let d = line.row_direction()[i] - line.row_direction()[k];
    let c = sq_dist(x.row(i), x.row(k));
    if d == 0.0 {
        return PairQuadratic { a: 0.0, b: 0.0, c };
    }
    let rw: f64 = x.row(i).iter().zip(x.row(k)).zip(w).map(|((p, q), wk)| (p - q) * wk).sum();
    let ww: f64 = w.iter().map(|v| v * v).sum();
    PairQuadratic { a: d * d * ww, b: 2.0 * d * rw, c }
}

/// Range maximum over a fixed slice.
struct SparseMax {
    levels: Vec<Vec<f64>>,
}

impl SparseMax {
    fn new(values: &[f64]) -> Self {
        let mut levels = vec![values.to_vec()];
        let mut width = 1;
        while 2 * width <= values.len() {
            let prev = levels.last().unwrap();
            let next = (0..=values.len() - 2 * width).map(|i| prev[i].max(prev[i + width])).collect();
            levels.push(next);
            width *= 2;
        }
        Self { levels }
    }

    /// Maximum over `lo..=hi`.
    fn max(&self, lo: usize, hi: usize) -> f64 {
        let len = hi - lo + 1;
        let level = (usize::BITS - 1 - len.leading_zeros()) as usize;
        let row = &self.levels[level];
        row[lo].max(row[hi + 1 - (1 << level)])
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    /// One constraint per cross pair with the largest height over its lifetime.
    Lifetime,
    /// One constraint per cross pair per step. Quadratically many; kept as a
    /// cross-check of the lifetime reduction.
    #[cfg_attr(not(test), allow(dead_code))]
    PerStep,
}

fn constrain(pq: PairQuadratic, height: f64, center: f64, out: &mut Vec<QuadraticInequality>) -> Result<()> {
    if pq.a == 0.0 && pq.b == 0.0 {
        if pq.c < height - 1e-10 * height.abs().max(1.0) {
            return Err(Error::AnchorExcluded { statistic: center });
        }
        return Ok(());
    }
    out.push(pq.at_least(height, center));
    Ok(())
}

fn replay(line: &PerturbationLine<'_>, m: &MergeSequence, k: usize, mode: Mode) -> Result<Vec<QuadraticInequality>> {
    let n = m.n;
    if line.base().n() != n {
        return Err(Error::invalid("merge sequence and data have different sizes"));
    }
    let labels = cut_dendrogram(m, k)?;
    check_groups_are_clusters(line.contrast(), &labels)?;
    let steps = n - k;
    let heights: Vec<f64> = m.merges[..steps].iter().map(|mg| mg.height).collect();
    let center = line.anchor();
    let mut out = Vec::new();
    if steps == 0 {
        return Ok(out);
    }
    let label = labels.labels();

    if m.linkage == Linkage::Single {
        let top = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            for j in (i + 1)..n {
                if label[i] == label[j] {
                    continue;
                }
                let pq = pairwise_quadratic(line, i, j);
                match mode {
                    Mode::Lifetime => constrain(pq, top, center, &mut out)?,
                    Mode::PerStep => {
                        for &h in &heights {
                            constrain(pq, h, center, &mut out)?;
                        }
                    }
                }
            }
        }
        return Ok(dedup(out));
    }

    let range_max = SparseMax::new(&heights);
    let mut tri = vec![PairQuadratic { a: 0.0, b: 0.0, c: 0.0 }; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let pq = pairwise_quadratic(line, i, j);
            tri[i * n + j] = pq;
            tri[j * n + i] = pq;
        }
    }
    // First step at which each slot pair was compared with its current value.
    let mut birth = vec![0usize; n * n];
    let mut slot_of = vec![usize::MAX; n + steps];
    for (i, s) in slot_of.iter_mut().enumerate().take(n) {
        *s = i;
    }
    let slot_label = label;
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];

    for (step, merge) in m.merges[..steps].iter().enumerate() {
        let (sa, sb) = (slot_of[merge.left], slot_of[merge.right]);
        if sa == usize::MAX || sb == usize::MAX || !alive[sa] || !alive[sb] {
            return Err(Error::invalid(format!("merge {step} refers to a cluster that is not alive")));
        }
        if slot_label[sa] != slot_label[sb] {
            return Err(Error::invalid("merge below the cut joins two final clusters"));
        }
        match mode {
            Mode::Lifetime => {
                // Pairs involving the two merged clusters end here.
                for t in (0..n).filter(|&t| alive[t] && t != sa && t != sb && slot_label[t] != slot_label[sa]) {
                    for s in [sa, sb] {
                        let h = range_max.max(birth[s * n + t], step);
                        constrain(tri[s * n + t], h, center, &mut out)?;
                    }
                }
            }
            Mode::PerStep => {
                for s in (0..n).filter(|&s| alive[s]) {
                    for t in ((s + 1)..n).filter(|&t| alive[t] && slot_label[t] != slot_label[s]) {
                        constrain(tri[s * n + t], heights[step], center, &mut out)?;
                    }
                }
            }
        }
        let ab = tri[sa * n + sb];
        for t in (0..n).filter(|&t| alive[t] && t != sa && t != sb) {
            let d = PairQuadratic::combine(m.linkage, tri[t * n + sa], tri[t * n + sb], ab, size[sa], size[sb], size[t]);
            tri[t * n + sa] = d;
            tri[sa * n + t] = d;
            birth[t * n + sa] = step + 1;
            birth[sa * n + t] = step + 1;
        }
        alive[sb] = false;
        size[sa] += size[sb];
        slot_of[n + step] = sa;
    }

    if mode == Mode::Lifetime {
        for s in (0..n).filter(|&s| alive[s]) {
            for t in ((s + 1)..n).filter(|&t| alive[t] && slot_label[t] != slot_label[s]) {
                let lo = birth[s * n + t];
                if lo < steps {
                    constrain(tri[s * n + t], range_max.max(lo, steps - 1), center, &mut out)?;
                }
            }
        }
    }
    Ok(dedup(out))
}

/// Quadratic constraints on the statistic under which the merge sequence
/// below the `k`-cluster cut is reproduced. Empty when nothing moves the
/// cut.
pub fn merge_constraints(line: &PerturbationLine<'_>, m: &MergeSequence, k: usize) -> Result<Vec<QuadraticInequality>> {
    replay(line, m, k, Mode::Lifetime)
}

/// The set of statistic values whose perturbed data yield the same `k`
/// clusters. Both tested groups must be clusters of that cut.
pub fn truncation_set_hier(line: &PerturbationLine<'_>, m: &MergeSequence, k: usize) -> Result<IntervalUnion> {
    let constraints = merge_constraints(line, m, k)?;
    require_anchor(solve_system(&constraints)?, line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::hierarchical;
    use crate::model::{perturb, Contrast, DataMatrix, FeatureCovariance};
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, q: usize, seed: u64) -> DataMatrix {
        let mut r = rng::seeded(seed);
        DataMatrix::new(n, q, (0..n * q).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
    }

    fn two_clusters(m: &MergeSequence, k: usize) -> (Vec<usize>, Vec<usize>) {
        let groups = cut_dendrogram(m, k).unwrap().groups();
        (groups[0].clone(), groups[1].clone())
    }

    fn same_sets(a: &IntervalUnion, b: &IntervalUnion) -> bool {
        a.intervals().len() == b.intervals().len()
            && a.intervals().iter().zip(b.intervals()).all(|(p, q)| {
                let close = |x: f64, y: f64| x == y || (x - y).abs() <= 1e-8 * x.abs().max(1.0);
                close(p.0, q.0) && close(p.1, q.1)
            })
    }

    #[test]
    fn lifetime_reduction_matches_per_step_constraints() {
        let sigma = FeatureCovariance::equicorrelated(3, 0.3).unwrap();
        for seed in 0..15u64 {
            let x = gaussian(14, 3, seed);
            for linkage in Linkage::ALL {
                let m = hierarchical(&x, linkage).unwrap();
                for k in [2, 3, 5] {
                    let (a, b) = two_clusters(&m, k);
                    let line = PerturbationLine::new(&x, Contrast::new(&a, &b, 14).unwrap(), &sigma, 1).unwrap();
                    let fast = solve_system(&replay(&line, &m, k, Mode::Lifetime).unwrap()).unwrap();
                    let slow = solve_system(&replay(&line, &m, k, Mode::PerStep).unwrap()).unwrap();
                    assert!(same_sets(&fast, &slow), "{linkage} k={k} seed={seed}: {fast} vs {slow}");
                    assert!(crate::interval::contains(&fast, line.anchor()));
                }
            }
        }
    }

    #[test]
    fn pair_quadratic_matches_perturbed_distance() {
        let x = gaussian(9, 4, 2);
        let sigma = FeatureCovariance::equicorrelated(4, 0.5).unwrap();
        let line = PerturbationLine::new(&x, Contrast::new(&[0, 1, 2], &[5, 6], 9).unwrap(), &sigma, 3).unwrap();
        for phi in [-4.0, -0.5, 0.0, 2.0, 9.0] {
            let moved = perturb(&line, phi);
            for i in 0..9 {
                for k in 0..9 {
                    let pq = pairwise_quadratic(&line, i, k);
                    let direct = sq_dist(moved.row(i), moved.row(k));
                    assert!((pq.eval(phi - line.anchor()) - direct).abs() < 1e-9 * direct.max(1.0));
                }
            }
        }
    }

    #[test]
    fn set_reproduces_clustering_inside_and_not_outside() {
        let sigma = FeatureCovariance::identity(2);
        for seed in 0..10u64 {
            let x = gaussian(12, 2, 100 + seed);
            for linkage in Linkage::ALL {
                let m = hierarchical(&x, linkage).unwrap();
                let labels = cut_dendrogram(&m, 3).unwrap();
                let (a, b) = two_clusters(&m, 3);
                let line = PerturbationLine::new(&x, Contrast::new(&a, &b, 12).unwrap(), &sigma, 0).unwrap();
                let set = truncation_set_hier(&line, &m, 3).unwrap();
                for step in -40..=40 {
                    let phi = line.anchor() + 0.15 * step as f64;
                    // Skip points within numerical reach of a boundary.
                    let near = set.finite_endpoints().iter().any(|e| (e - phi).abs() < 1e-6);
                    if near {
                        continue;
                    }
                    let moved = perturb(&line, phi);
                    let again = cut_dendrogram(&hierarchical(&moved, linkage).unwrap(), 3).unwrap();
                    assert_eq!(set.contains(phi), again == labels, "{linkage} seed={seed} phi={phi} set={set}");
                }
            }
        }
    }

    #[test]
    fn invariant_under_translation_of_all_rows() {
        let x = gaussian(10, 3, 8);
        let shifted = DataMatrix::new(10, 3, x.values().iter().enumerate().map(|(p, v)| v + [5.0, -2.0, 0.25][p % 3]).collect())
            .unwrap();
        let sigma = FeatureCovariance::equicorrelated(3, 0.2).unwrap();
        let m = hierarchical(&x, Linkage::Average).unwrap();
        let (a, b) = two_clusters(&m, 2);
        let c = Contrast::new(&a, &b, 10).unwrap();
        let s1 = truncation_set_hier(&PerturbationLine::new(&x, c.clone(), &sigma, 0).unwrap(), &m, 2).unwrap();
        let m2 = hierarchical(&shifted, Linkage::Average).unwrap();
        let s2 = truncation_set_hier(&PerturbationLine::new(&shifted, c, &sigma, 0).unwrap(), &m2, 2).unwrap();
        // The statistic shifts by the feature-0 offset difference, which is zero.
        assert!(same_sets(&s1, &s2), "{s1} vs {s2}");
    }

    #[test]
    fn k_equals_n_leaves_everything_free() {
        let x = gaussian(5, 2, 1);
        let m = hierarchical(&x, Linkage::Ward).unwrap();
        let line = PerturbationLine::new(&x, Contrast::new(&[0], &[1], 5).unwrap(), &FeatureCovariance::identity(2), 0)
            .unwrap();
        assert!(merge_constraints(&line, &m, 5).unwrap().is_empty());
        assert!(truncation_set_hier(&line, &m, 5).unwrap().is_real_line());
    }

    #[test]
    fn groups_must_be_clusters() {
        let x = gaussian(8, 2, 4);
        let m = hierarchical(&x, Linkage::Average).unwrap();
        let (a, _) = two_clusters(&m, 2);
        let rest: Vec<usize> = (0..8).filter(|i| !a.contains(i)).collect();
        let partial = &a[..a.len().saturating_sub(1).max(1)];
        if partial.len() < a.len() {
            let line =
                PerturbationLine::new(&x, Contrast::new(partial, &rest, 8).unwrap(), &FeatureCovariance::identity(2), 0)
                    .unwrap();
            assert!(truncation_set_hier(&line, &m, 2).is_err());
        }
    }
}
