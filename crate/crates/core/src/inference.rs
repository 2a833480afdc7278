//! Truncated-Gaussian probabilities, selective and naive p-values, and the
//! glue that runs a clustering method and tests one feature for one pair of
//! its clusters.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::clustering::{cut_dendrogram, hierarchical, kmeans_labels, kmeans_lloyd, ClusterLabels, KMeansTrace, Linkage, MergeSequence};
use crate::error::{Error, Result};
use crate::interval::{contains, IntervalUnion};
use crate::model::{Contrast, DataMatrix, FeatureCovariance, PerturbationLine};
use crate::normal::{log_interval_mass, log_sum_exp, sf};
use crate::truncation::{truncation_set_hier, truncation_set_kmeans};

/// `N(mean, sd^2)` restricted to `support`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedGaussian {
    mean: f64,
    sd: f64,
    support: IntervalUnion,
    log_total: f64,
}

impl TruncatedGaussian {
    pub fn new(mean: f64, sd: f64, support: IntervalUnion) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(Error::invalid(format!("need finite mean and positive sd, got N({mean}, {sd}^2)")));
        }
        let log_total = log_mass(mean, sd, &support);
        if !log_total.is_finite() {
            return Err(Error::DegenerateSupport(format!(
                "support {support} has no representable mass under N({mean}, {sd}^2)"
            )));
        }
        Ok(Self { mean, sd, support, log_total })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    pub fn support(&self) -> &IntervalUnion {
        &self.support
    }

    /// `ln P(Z in support)`.
    pub fn log_total_mass(&self) -> f64 {
        self.log_total
    }

    /// `ln P(Z in set | Z in support)`.
    pub fn log_conditional_mass(&self, set: &IntervalUnion) -> f64 {
        let part = log_mass(self.mean, self.sd, &self.support.intersect(set));
        (part - self.log_total).min(0.0)
    }
}

/// `ln` of the `N(mean, sd^2)` mass of a union, summed in log space.
pub fn log_mass(mean: f64, sd: f64, set: &IntervalUnion) -> f64 {
    let terms: Vec<f64> =
        set.intervals().iter().map(|&(lo, hi)| log_interval_mass((lo - mean) / sd, (hi - mean) / sd)).collect();
    log_sum_exp(&terms)
}

/// `P(Z <= t)` for `Z` drawn from the truncated Gaussian.
pub fn trunc_cdf(t: f64, g: &TruncatedGaussian) -> f64 {
    g.log_conditional_mass(&IntervalUnion::interval(f64::NEG_INFINITY, t)).exp().clamp(0.0, 1.0)
}

/// Two-sided p-value of `statistic` under `N(0, sd^2)` truncated to `s`:
/// the conditional mass of `|Z| >= |statistic|`.
pub fn selective_p(statistic: f64, sd: f64, s: &IntervalUnion) -> Result<f64> {
    if !contains(s, statistic) {
        return Err(Error::AnchorExcluded { statistic });
    }
    let g = TruncatedGaussian::new(0.0, sd, s.clone())?;
    let t = statistic.abs();
    let tails = IntervalUnion::from_intervals(vec![(f64::NEG_INFINITY, -t), (t, f64::INFINITY)]);
    // At t = 0 the two tails merge into the real line.
    let tails = if t == 0.0 { IntervalUnion::real_line() } else { tails };
    Ok(g.log_conditional_mass(&tails).exp().clamp(1e-300, 1.0))
}

/// Two-sided Z-test treating the groups as fixed in advance:
/// `2 (1 - Phi(|statistic| / sd))`.
pub fn naive_p(statistic: f64, sd: f64) -> f64 {
    (2.0 * sf(statistic.abs() / sd)).clamp(1e-300, 1.0)
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_adjust(pvals: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {bad} is outside [0, 1]")));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        running = running.min(m as f64 * pvals[idx] / (rank + 1) as f64).min(1.0);
        // Rounding in m p / m can land a hair below p.
        out[idx] = running.max(pvals[idx]);
    }
    Ok(out)
}

/// Pooled within-cluster covariance with divisor `n - K`, floored to be
/// positive definite.
pub fn estimate_covariance(x: &DataMatrix, labels: &ClusterLabels) -> Result<FeatureCovariance> {
    let (n, q, k) = (x.n(), x.q(), labels.k());
    if labels.n() != n {
        return Err(Error::invalid("labels and data have different sizes"));
    }
    if n <= k {
        return Err(Error::invalid(format!("need more observations than clusters, got n={n}, K={k}")));
    }
    let mut means = vec![0.0; k * q];
    let mut counts = vec![0usize; k];
    for (row, &l) in x.rows().zip(labels.labels()) {
        counts[l] += 1;
        for (m, v) in means[l * q..(l + 1) * q].iter_mut().zip(row) {
            *m += v;
        }
    }
    for l in 0..k {
        means[l * q..(l + 1) * q].iter_mut().for_each(|m| *m /= counts[l] as f64);
    }
    let mut s = vec![0.0; q * q];
    let mut r = vec![0.0; q];
    for (row, &l) in x.rows().zip(labels.labels()) {
        for j in 0..q {
            r[j] = row[j] - means[l * q + j];
        }
        for a in 0..q {
            for b in a..q {
                s[a * q + b] += r[a] * r[b];
            }
        }
    }
    let df = (n - k) as f64;
    for a in 0..q {
        for b in a..q {
            let v = s[a * q + b] / df;
            s[a * q + b] = v;
            s[b * q + a] = v;
        }
    }
    let mean_diag = (0..q).map(|j| s[j * q + j]).sum::<f64>() / q as f64;
    let floor = if mean_diag > 0.0 { 1e-8 * mean_diag } else { 1e-8 };
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(q, q, &s));
    if eig.eigenvalues.iter().any(|&v| v < floor) {
        let clipped = eig.eigenvalues.map(|v| v.max(floor));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        for a in 0..q {
            for b in 0..q {
                s[a * q + b] = 0.5 * (rebuilt[(a, b)] + rebuilt[(b, a)]);
            }
        }
    }
    FeatureCovariance::new(q, s)
}

/// How the clusters were estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClusteringMethod {
    KMeans { k: usize, t_max: usize, seed: u64 },
    Hierarchical { linkage: Linkage, k: usize },
}

impl ClusteringMethod {
    pub fn k(&self) -> usize {
        match *self {
            ClusteringMethod::KMeans { k, .. } | ClusteringMethod::Hierarchical { k, .. } => k,
        }
    }

    pub fn fit(&self, x: &DataMatrix) -> Result<ClusteringFit> {
        match *self {
            ClusteringMethod::KMeans { k, t_max, seed } => Ok(ClusteringFit::KMeans(kmeans_lloyd(x, k, t_max, seed)?)),
            ClusteringMethod::Hierarchical { linkage, k } => {
                let merges = hierarchical(x, linkage)?;
                cut_dendrogram(&merges, k)?;
                Ok(ClusteringFit::Hierarchical { merges, k })
            }
        }
    }
}

impl fmt::Display for ClusteringMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusteringMethod::KMeans { .. } => f.write_str("kmeans"),
            ClusteringMethod::Hierarchical { linkage, .. } => f.write_str(linkage.name()),
        }
    }
}

/// Everything about a clustering run that the conditioning event needs.
#[derive(Debug, Clone, PartialEq)]
pub enum ClusteringFit {
    KMeans(KMeansTrace),
    Hierarchical { merges: MergeSequence, k: usize },
}

impl ClusteringFit {
    pub fn labels(&self) -> ClusterLabels {
        match self {
            ClusteringFit::KMeans(trace) => kmeans_labels(trace),
            ClusteringFit::Hierarchical { merges, k } => cut_dendrogram(merges, *k).expect("k validated at fit time"),
        }
    }

    /// Values of the statistic for which the perturbed data reproduce this
    /// clustering.
    pub fn truncation_set(&self, line: &PerturbationLine<'_>) -> Result<IntervalUnion> {
        match self {
            ClusteringFit::KMeans(trace) => truncation_set_kmeans(trace, line),
            ClusteringFit::Hierarchical { merges, k } => truncation_set_hier(line, merges, *k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaSource {
    Supplied,
    Estimated,
}

/// Result of one test. Indices are one-based, as reported to users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub feature: usize,
    pub clusters: (usize, usize),
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
    pub statistic: f64,
    pub sd: f64,
    pub truncation: IntervalUnion,
    pub p_selective: f64,
    pub p_naive: f64,
    pub method: String,
    pub sigma_source: SigmaSource,
}

/// Test feature `feature` for clusters `pair` (zero-based labels of
/// `fit.labels()`).
pub fn test_fitted(
    x: &DataMatrix,
    sigma: &FeatureCovariance,
    fit: &ClusteringFit,
    method: &ClusteringMethod,
    pair: (usize, usize),
    feature: usize,
    sigma_source: SigmaSource,
) -> Result<TestReport> {
    let labels = fit.labels();
    if pair.0 == pair.1 {
        return Err(Error::invalid("the two tested clusters must differ"));
    }
    for c in [pair.0, pair.1] {
        if c >= labels.k() {
            return Err(Error::IndexOutOfRange { index: c, size: labels.k() });
        }
    }
    let contrast = Contrast::new(&labels.members(pair.0), &labels.members(pair.1), x.n())?;
    let line = PerturbationLine::new(x, contrast, sigma, feature)?;
    let sd = (line.contrast().nu_sq_norm() * sigma.get(feature, feature)).sqrt();
    let truncation = fit.truncation_set(&line)?;
    let statistic = line.anchor();
    let p_selective = selective_p(statistic, sd, &truncation)?;
    let one_based = |g: &[usize]| g.iter().map(|i| i + 1).collect::<Vec<_>>();
    Ok(TestReport {
        feature: feature + 1,
        clusters: (pair.0 + 1, pair.1 + 1),
        group_a: one_based(line.contrast().group_a()),
        group_b: one_based(line.contrast().group_b()),
        statistic,
        sd,
        truncation,
        p_selective,
        p_naive: naive_p(statistic, sd),
        method: method.to_string(),
        sigma_source,
    })
}

/// Cluster `x` with `method` and test one feature for one pair of clusters.
pub fn run_test(
    x: &DataMatrix,
    sigma: &FeatureCovariance,
    method: &ClusteringMethod,
    pair: (usize, usize),
    feature: usize,
) -> Result<TestReport> {
    let fit = method.fit(x)?;
    test_fitted(x, sigma, &fit, method, pair, feature, SigmaSource::Supplied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal::cdf;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn cdf_examples() {
        let g = TruncatedGaussian::new(0.0, 1.0, IntervalUnion::real_line()).unwrap();
        assert!((trunc_cdf(0.0, &g) - 0.5).abs() < 1e-15);
        let half = TruncatedGaussian::new(0.0, 1.0, IntervalUnion::interval(0.0, f64::INFINITY)).unwrap();
        for t in [0.0, 0.3, 1.7, 4.0] {
            assert!((trunc_cdf(t, &half) - (2.0 * cdf(t) - 1.0)).abs() < 1e-14);
        }
        let far = TruncatedGaussian::new(0.0, 1.0, IntervalUnion::interval(-40.0, -39.0)).unwrap();
        // Mass piles up at the end nearer 0: roughly exp(-(39.5^2 - 39^2) / 2).
        let v = trunc_cdf(-39.5, &far);
        assert!(v.is_finite() && v > 1e-10 && v < 1e-7, "{v}");
        assert!(matches!(
            TruncatedGaussian::new(0.0, 1.0, IntervalUnion::empty()),
            Err(Error::DegenerateSupport(_))
        ));
    }

    #[test]
    fn selective_reduces_to_naive_on_the_real_line() {
        let mut r = rng::seeded(1);
        for _ in 0..200 {
            let stat: f64 = r.random_range(-6.0..6.0);
            let sd: f64 = r.random_range(0.1..3.0);
            let a = selective_p(stat, sd, &IntervalUnion::real_line()).unwrap();
            let b = naive_p(stat, sd);
            assert!((a - b).abs() <= 1e-12, "{stat} {sd}: {a} vs {b}");
        }
        assert_eq!(naive_p(0.0, 1.0), 1.0);
        assert!((naive_p(1.959964, 1.0) - 0.05).abs() < 1e-6);
    }

    #[test]
    fn boundary_statistic_gives_one() {
        let s = IntervalUnion::from_intervals(vec![(f64::NEG_INFINITY, -1.3), (1.3, f64::INFINITY)]);
        assert!((selective_p(1.3, 0.7, &s).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(selective_p(0.0, 1.0, &s), Err(Error::AnchorExcluded { .. })));
    }

    #[test]
    fn uniform_under_fixed_truncation() {
        // Draw the statistic from N(0, sd^2) restricted to a fixed set and
        // check the p-values are uniform.
        let s = IntervalUnion::from_intervals(vec![(-3.0, -0.5), (0.2, 0.9), (2.0, f64::INFINITY)]);
        let sd = 1.4;
        let mut r = rng::seeded(77);
        let mut ps = Vec::new();
        while ps.len() < 4000 {
            let z: f64 = StandardNormal.sample(&mut r);
            let phi = sd * z;
            if s.contains(phi) {
                ps.push(selective_p(phi, sd, &s).unwrap());
            }
        }
        ps.sort_by(f64::total_cmp);
        let m = ps.len() as f64;
        let d = ps.iter().enumerate().map(|(i, &p)| (p - i as f64 / m).abs().max(((i + 1) as f64 / m - p).abs())).fold(0.0, f64::max);
        // Kolmogorov 0.1% critical value ~ 1.95 / sqrt(m).
        assert!(d < 1.95 / m.sqrt(), "KS distance {d}");
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh_adjust(&[0.01, 0.02, 0.03, 0.04]).unwrap(), vec![0.04; 4]);
        assert_eq!(bh_adjust(&[0.3]).unwrap(), vec![0.3]);
        assert!(bh_adjust(&[1.2]).is_err());
        assert!(bh_adjust(&[]).unwrap().is_empty());
    }

    #[test]
    fn bh_matches_direct_step_up() {
        let mut r = rng::seeded(3);
        for _ in 0..20 {
            let p: Vec<f64> = (0..500).map(|_| r.random::<f64>().powi(3)).collect();
            let adj = bh_adjust(&p).unwrap();
            let mut sorted = p.clone();
            sorted.sort_by(f64::total_cmp);
            let m = p.len() as f64;
            let cutoff = (0..p.len()).rev().find(|&i| sorted[i] <= 0.2 * (i + 1) as f64 / m).map(|i| sorted[i]);
            for (pi, ai) in p.iter().zip(&adj) {
                let direct = cutoff.is_some_and(|c| *pi <= c);
                assert_eq!(*ai <= 0.2, direct);
                assert!(ai >= pi);
            }
        }
    }

    #[test]
    fn covariance_matches_two_pass() {
        let mut r = rng::seeded(5);
        let x = DataMatrix::new(40, 3, (0..120).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap();
        let labels = ClusterLabels::new((0..40).map(|i| i % 4).collect()).unwrap();
        let est = estimate_covariance(&x, &labels).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let mut acc = 0.0;
                for l in 0..4 {
                    let members = labels.members(l);
                    let ma = members.iter().map(|&i| x.get(i, a)).sum::<f64>() / members.len() as f64;
                    let mb = members.iter().map(|&i| x.get(i, b)).sum::<f64>() / members.len() as f64;
                    acc += members.iter().map(|&i| (x.get(i, a) - ma) * (x.get(i, b) - mb)).sum::<f64>();
                }
                assert!((est.get(a, b) - acc / 36.0).abs() < 1e-10);
            }
        }
        let one = ClusterLabels::new(vec![0; 40]).unwrap();
        let full = estimate_covariance(&x, &one).unwrap();
        let col: Vec<f64> = x.column(0);
        let mean = col.iter().sum::<f64>() / 40.0;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 39.0;
        assert!((full.get(0, 0) - var).abs() < 1e-12);
    }

    #[test]
    fn covariance_floor_on_constant_clusters() {
        let x = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![5.0, 0.0], vec![5.0, 0.0]]).unwrap();
        let labels = ClusterLabels::new(vec![0, 0, 1, 1]).unwrap();
        let est = estimate_covariance(&x, &labels).unwrap();
        assert!((est.get(0, 0) - 1e-8).abs() < 1e-20);
        assert!(est.get(0, 1).abs() < 1e-20);
        assert!(estimate_covariance(&x, &ClusterLabels::new(vec![0, 1, 2, 3]).unwrap()).is_err());
    }

    #[test]
    fn run_test_end_to_end() {
        let mut r = rng::seeded(9);
        let mut vals = Vec::new();
        for i in 0..30 {
            let shift = if i < 15 { 0.0 } else { 4.0 };
            let z: f64 = StandardNormal.sample(&mut r);
            vals.push(shift + z);
            vals.push(StandardNormal.sample(&mut r));
        }
        let x = DataMatrix::new(30, 2, vals).unwrap();
        let sigma = FeatureCovariance::identity(2);
        for method in [
            ClusteringMethod::KMeans { k: 2, t_max: 20, seed: 1 },
            ClusteringMethod::Hierarchical { linkage: Linkage::Average, k: 2 },
        ] {
            let rep = run_test(&x, &sigma, &method, (0, 1), 0).unwrap();
            assert!(rep.truncation.contains(rep.statistic));
            assert!(rep.p_selective > 0.0 && rep.p_selective <= 1.0);
            assert!(rep.p_naive < 1e-10);
            let json = serde_json::to_value(&rep).unwrap();
            assert!(json["truncation"].is_array());
            assert!(run_test(&x, &sigma, &method, (0, 0), 0).is_err());
        }
    }

    proptest! {
        #[test]
        fn cdf_is_monotone(lo in -30.0f64..30.0, w in 0.01f64..5.0, t1 in -40.0f64..40.0, t2 in -40.0f64..40.0) {
            let s = IntervalUnion::from_intervals(vec![(lo, lo + w), (lo + w + 1.0, lo + w + 2.5)]);
            let g = TruncatedGaussian::new(0.0, 1.0, s).unwrap();
            let (a, b) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(trunc_cdf(a, &g) <= trunc_cdf(b, &g));
            prop_assert_eq!(trunc_cdf(lo - 1.0, &g), 0.0);
            prop_assert!((trunc_cdf(lo + w + 3.0, &g) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn bh_dominates_and_is_monotone(p in proptest::collection::vec(0.0f64..=1.0, 1..60)) {
            let adj = bh_adjust(&p).unwrap();
            let mut pairs: Vec<(f64, f64)> = p.iter().copied().zip(adj.iter().copied()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            for (pi, ai) in &pairs {
                prop_assert!(ai >= pi);
            }
        }
    }
}
