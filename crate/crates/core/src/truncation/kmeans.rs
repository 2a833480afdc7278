//! Truncation sets for Lloyd's algorithm.
//!
//! Conditioning is on the whole history: the same initial rows, and every
//! recorded assignment vector. Along the line each centroid is affine in
//! `s = phi - phi_hat`,
//!
//! ```text
//! m_c(s) = intercept_c + s * drift_c * w,
//! ```
//!
//! where `drift_c` is the mean of `u` over the rows behind it, so every
//! "row i stays with its centroid" condition is a quadratic inequality.

use crate::clustering::{kmeans_labels, KMeansTrace};
use crate::error::{Error, Result};
use crate::interval::{solve_system, IntervalUnion, QuadraticInequality};
use crate::model::{dot, sq_dist, PerturbationLine};

use super::{check_groups_are_clusters, require_anchor};

/// Centroid along the line: `intercept + (phi - phi_hat) * slope` with
/// `slope = drift * w`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCentroid {
    pub intercept: Vec<f64>,
    pub slope: Vec<f64>,
    pub drift: f64,
}

impl AffineCentroid {
    pub fn at(&self, s: f64) -> Vec<f64> {
        self.intercept.iter().zip(&self.slope).map(|(m, d)| m + s * d).collect()
    }
}

fn check_trace(trace: &KMeansTrace, line: &PerturbationLine<'_>) -> Result<()> {
    let n = line.base().n();
    if trace.assignments.is_empty() || trace.init_rows.len() != trace.k {
        return Err(Error::invalid("k-means trace is incomplete"));
    }
    if trace.init_rows.iter().any(|&r| r >= n) {
        return Err(Error::invalid("k-means trace has an initial row outside the data"));
    }
    for a in &trace.assignments {
        if a.len() != n || a.iter().any(|&c| c >= trace.k) {
            return Err(Error::invalid("k-means trace does not match the data"));
        }
    }
    Ok(())
}

/// Centroids behind every recorded assignment: entry `t` holds the
/// centroids that produced `assignments[t]`.
pub fn affine_centroids(trace: &KMeansTrace, line: &PerturbationLine<'_>) -> Result<Vec<Vec<AffineCentroid>>> {
    check_trace(trace, line)?;
    let x = line.base();
    let u = line.row_direction();
    let w = line.col_direction();
    let k = trace.k;
    let with_drift = |intercept: Vec<f64>, drift: f64| AffineCentroid {
        slope: w.iter().map(|v| drift * v).collect(),
        intercept,
        drift,
    };

    let mut intercepts: Vec<f64> = trace.init_rows.iter().flat_map(|&r| x.row(r).iter().copied()).collect();
    let mut drifts: Vec<f64> = trace.init_rows.iter().map(|&r| u[r]).collect();
    let collect = |intercepts: &[f64], drifts: &[f64]| -> Vec<AffineCentroid> {
        intercepts.chunks_exact(x.q()).zip(drifts).map(|(m, &d)| with_drift(m.to_vec(), d)).collect()
    };
    let mut out = vec![collect(&intercepts, &drifts)];
    for t in 1..trace.assignments.len() {
        let prev = &trace.assignments[t - 1];
        let (next, _) = crate::clustering::update_centroids(x, prev, &intercepts, k);
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&c, &ui) in prev.iter().zip(u) {
            sums[c] += ui;
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                drifts[c] = sums[c] / counts[c] as f64;
            }
        }
        intercepts = next;
        out.push(collect(&intercepts, &drifts));
    }
    Ok(out)
}

/// The centroid of cluster `c` that produced `assignments[t]`.
pub fn centroid_affine(trace: &KMeansTrace, line: &PerturbationLine<'_>, t: usize, c: usize) -> Result<AffineCentroid> {
    if t >= trace.assignments.len() || c >= trace.k {
        return Err(Error::IndexOutOfRange { index: t.max(c), size: trace.assignments.len().max(trace.k) });
    }
    let mut all = affine_centroids(trace, line)?;
    Ok(all.swap_remove(t).swap_remove(c))
}

/// One inequality per recorded step, row and competing centroid:
/// `|x_i(s) - m_c(s)|^2 - |x_i(s) - m_k(s)|^2 <= 0` for the assigned `c`.
/// There are `n (K - 1) (T + 1)` of them for `T` iterations.
pub fn assignment_constraints(trace: &KMeansTrace, line: &PerturbationLine<'_>) -> Result<Vec<QuadraticInequality>> {
    let centroids = affine_centroids(trace, line)?;
    let x = line.base();
    let u = line.row_direction();
    let w = line.col_direction();
    let ww = dot(w, w);
    let center = line.anchor();
    let k = trace.k;
    let xw: Vec<f64> = x.rows().map(|r| dot(r, w)).collect();

    let mut out = Vec::with_capacity(x.n() * (k - 1) * trace.assignments.len());
    for (assignment, cents) in trace.assignments.iter().zip(&centroids) {
        let mw: Vec<f64> = cents.iter().map(|m| dot(&m.intercept, w)).collect();
        for (i, &c) in assignment.iter().enumerate() {
            let row = x.row(i);
            let dc = sq_dist(row, &cents[c].intercept);
            let ec = u[i] - cents[c].drift;
            let rc = xw[i] - mw[c];
            for kk in (0..k).filter(|&kk| kk != c) {
                let dk = sq_dist(row, &cents[kk].intercept);
                let ek = u[i] - cents[kk].drift;
                let rk = xw[i] - mw[kk];
                out.push(QuadraticInequality::centered(
                    (ec * ec - ek * ek) * ww,
                    2.0 * (ec * rc - ek * rk),
                    dc - dk,
                    center,
                ));
            }
        }
    }
    Ok(out)
}

/// The set of statistic values whose perturbed data reproduce every
/// recorded assignment of the run. Both tested groups must be clusters of
/// the final assignment.
pub fn truncation_set_kmeans(trace: &KMeansTrace, line: &PerturbationLine<'_>) -> Result<IntervalUnion> {
    check_trace(trace, line)?;
    check_groups_are_clusters(line.contrast(), &kmeans_labels(trace))?;
    let constraints = assignment_constraints(trace, line)?;
    require_anchor(solve_system(&constraints)?, line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::kmeans_lloyd;
    use crate::model::{perturb, Contrast, DataMatrix, FeatureCovariance};
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn setup(n: usize, q: usize, seed: u64, k: usize, t_max: usize) -> (DataMatrix, KMeansTrace, Contrast) {
        let mut r = rng::seeded(seed);
        let x = DataMatrix::new(n, q, (0..n * q).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap();
        let trace = kmeans_lloyd(&x, k, t_max, seed).unwrap();
        let groups = kmeans_labels(&trace).groups();
        let c = Contrast::new(&groups[0], &groups[1], n).unwrap();
        (x, trace, c)
    }

    #[test]
    fn affine_centroids_match_recomputed_means() {
        let (x, trace, c) = setup(30, 3, 4, 3, 20);
        let sigma = FeatureCovariance::equicorrelated(3, 0.4).unwrap();
        let line = PerturbationLine::new(&x, c, &sigma, 2).unwrap();
        let cents = affine_centroids(&trace, &line).unwrap();
        for phi in [-3.0, 0.0, 1.7] {
            let moved = perturb(&line, phi);
            let s = phi - line.anchor();
            for (t, cs) in cents.iter().enumerate() {
                for (cl, m) in cs.iter().enumerate() {
                    let expected: Vec<f64> = if t == 0 {
                        moved.row(trace.init_rows[cl]).to_vec()
                    } else {
                        let members: Vec<usize> =
                            (0..30).filter(|&i| trace.assignments[t - 1][i] == cl).collect();
                        if members.is_empty() {
                            continue;
                        }
                        (0..3).map(|j| members.iter().map(|&i| moved.get(i, j)).sum::<f64>() / members.len() as f64).collect()
                    };
                    for (a, b) in m.at(s).iter().zip(&expected) {
                        assert!((a - b).abs() < 1e-10, "t={t} c={cl}");
                    }
                }
            }
        }
    }

    #[test]
    fn constraint_count_and_anchor() {
        let (x, trace, c) = setup(40, 2, 9, 3, 30);
        let line = PerturbationLine::new(&x, c, &FeatureCovariance::identity(2), 0).unwrap();
        let cons = assignment_constraints(&trace, &line).unwrap();
        assert_eq!(cons.len(), 40 * 2 * (trace.iterations() + 1));
        assert!(cons.iter().all(|qi| qi.eval(line.anchor()) <= 0.0));
        let set = truncation_set_kmeans(&trace, &line).unwrap();
        assert!(set.contains(line.anchor()));
    }

    #[test]
    fn set_reproduces_trace_inside_and_not_outside() {
        let sigma = FeatureCovariance::identity(2);
        for seed in 0..10u64 {
            let (x, trace, c) = setup(24, 2, 50 + seed, 3, 30);
            let line = PerturbationLine::new(&x, c, &sigma, 1).unwrap();
            let set = truncation_set_kmeans(&trace, &line).unwrap();
            for step in -40..=40 {
                let phi = line.anchor() + 0.1 * step as f64;
                if set.finite_endpoints().iter().any(|e| (e - phi).abs() < 1e-6) {
                    continue;
                }
                let again = kmeans_lloyd(&perturb(&line, phi), 3, 30, trace.seed).unwrap();
                assert_eq!(set.contains(phi), again.assignments == trace.assignments, "seed={seed} phi={phi} {set}");
            }
        }
    }

    #[test]
    fn longer_runs_shrink_the_set() {
        let (x, trace_long, c) = setup(36, 2, 3, 3, 30);
        let line = PerturbationLine::new(&x, c.clone(), &FeatureCovariance::identity(2), 0).unwrap();
        let long = assignment_constraints(&trace_long, &line).unwrap();
        for t_max in 1..trace_long.iterations() {
            let short = kmeans_lloyd(&x, 3, t_max, trace_long.seed).unwrap();
            assert_eq!(short.assignments[..], trace_long.assignments[..=t_max]);
            let s_short = solve_system(&assignment_constraints(&short, &line).unwrap()).unwrap();
            let s_long = solve_system(&long).unwrap();
            assert!(s_long.is_subset_of(&s_short));
        }
    }
}
