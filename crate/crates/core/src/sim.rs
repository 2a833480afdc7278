//! Simulation campaigns: Type I error under a global null for the tested
//! features, and conditional power / detection probability with three true
//! clusters.
//!
//! Every replicate draws from its own stream derived from `(seed, replicate)`
//! so results do not depend on scheduling; rows are returned in replicate
//! order.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{ClusterLabels, Linkage};
use crate::error::{Error, Result};
use crate::inference::{test_fitted, ClusteringMethod, SigmaSource};
use crate::model::{DataMatrix, FeatureCovariance};
use crate::rng;

const SALT_CHOICE: u64 = 0x6368_6f69_6365;
const SALT_KMEANS: u64 = 0x6b6d_6561_6e73;

/// Environment variable holding the worker count for replicate pools.
pub const WORKERS_ENV: &str = "CLUSTERTEST_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    NullTwoCluster,
    ThreeClusterPower,
}

/// Clustering method without its per-run parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Kmeans,
    Single,
    Average,
    Centroid,
    Ward,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] =
        [MethodKind::Kmeans, MethodKind::Single, MethodKind::Average, MethodKind::Centroid, MethodKind::Ward];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Kmeans => "kmeans",
            MethodKind::Single => "single",
            MethodKind::Average => "average",
            MethodKind::Centroid => "centroid",
            MethodKind::Ward => "ward",
        }
    }

    pub fn with(self, k: usize, t_max: usize, seed: u64) -> ClusteringMethod {
        let linkage = match self {
            MethodKind::Kmeans => return ClusteringMethod::KMeans { k, t_max, seed },
            MethodKind::Single => Linkage::Single,
            MethodKind::Average => Linkage::Average,
            MethodKind::Centroid => Linkage::Centroid,
            MethodKind::Ward => Linkage::Ward,
        };
        ClusteringMethod::Hierarchical { linkage, k }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" | "k-means" => Ok(MethodKind::Kmeans),
            other => match other.parse::<Linkage>()? {
                Linkage::Single => Ok(MethodKind::Single),
                Linkage::Average => Ok(MethodKind::Average),
                Linkage::Centroid => Ok(MethodKind::Centroid),
                Linkage::Ward => Ok(MethodKind::Ward),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub design: Design,
    pub n: usize,
    pub q: usize,
    #[serde(default)]
    pub rho: f64,
    /// Mean separation; only used by the power design.
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    pub method: MethodKind,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    3
}

fn default_t_max() -> usize {
    30
}

fn default_alpha() -> f64 {
    0.05
}

impl SimConfig {
    /// Two true clusters, 100 rows, ten equicorrelated features.
    pub fn null(method: MethodKind, rho: f64, replicates: usize, seed: u64) -> Self {
        Self {
            design: Design::NullTwoCluster,
            n: 100,
            q: 10,
            rho,
            delta: 0.0,
            k: 3,
            method,
            t_max: default_t_max(),
            replicates,
            alpha: 0.05,
            seed,
        }
    }

    /// Three true clusters of 50 rows, ten features, the upper half shifted
    /// by `∓delta`.
    pub fn power(method: MethodKind, rho: f64, delta: f64, replicates: usize, seed: u64) -> Self {
        Self { design: Design::ThreeClusterPower, n: 150, delta, ..Self::null(method, rho, replicates, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(Error::invalid("need at least one replicate"));
        }
        if !(self.rho < 1.0) || !self.rho.is_finite() {
            return Err(Error::invalid(format!("rho must be below 1, got {}", self.rho)));
        }
        if self.k < 2 || self.k > self.n {
            return Err(Error::invalid(format!("need 2 <= K <= n, got K={}", self.k)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1]"));
        }
        if self.t_max < 1 {
            return Err(Error::invalid("t_max must be at least 1"));
        }
        let min_q = if self.design == Design::NullTwoCluster { 3 } else { 2 };
        if self.q < min_q {
            return Err(Error::invalid(format!("this design needs at least {min_q} features")));
        }
        self.sigma().map(|_| ())
    }

    pub fn sigma(&self) -> Result<FeatureCovariance> {
        FeatureCovariance::equicorrelated(self.q, self.rho)
    }

    fn method_for(&self, replicate: u64) -> ClusteringMethod {
        self.method.with(self.k, self.t_max, rng::derive_seed(self.seed, replicate, SALT_KMEANS))
    }
}

fn gaussian_rows(cfg: &SimConfig, replicate: u64, mean: impl Fn(usize, usize) -> f64) -> Result<DataMatrix> {
    let (n, q) = (cfg.n, cfg.q);
    let chol = cfg.sigma()?.cholesky_lower();
    let mut r = rng::stream(cfg.seed, replicate);
    let mut values = Vec::with_capacity(n * q);
    let mut z = vec![0.0; q];
    for i in 0..n {
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut r));
        for a in 0..q {
            let noise: f64 = (0..=a).map(|b| chol[a * q + b] * z[b]).sum();
            values.push(mean(i, a) + noise);
        }
    }
    DataMatrix::new(n, q, values)
}

/// Rows in the first half have mean `(1, 0, ..., 0)`, the rest
/// `(0, ..., 0, 1)`.
pub fn gen_null(cfg: &SimConfig, replicate: u64) -> Result<DataMatrix> {
    let (half, q) = (cfg.n / 2, cfg.q);
    gaussian_rows(cfg, replicate, |i, a| f64::from(u8::from(if i < half { a == 0 } else { a == q - 1 })))
}

/// True block (0, 1 or 2) of row `i` when `n` rows are split in thirds.
pub fn power_block(i: usize, n: usize) -> usize {
    (3 * i / n).min(2)
}

/// Thirds of the rows have means `-delta`, `0`, `+delta` on the last
/// `ceil(q/2)` features and 0 elsewhere. Returns the data and the true
/// blocks. The noise depends only on `(seed, replicate)`, so designs that
/// differ only in `delta` share it.
pub fn gen_power(cfg: &SimConfig, replicate: u64) -> Result<(DataMatrix, ClusterLabels)> {
    let (n, q, delta) = (cfg.n, cfg.q, cfg.delta);
    let first_signal = q / 2;
    let x = gaussian_rows(cfg, replicate, |i, a| {
        if a < first_signal {
            0.0
        } else {
            [-delta, 0.0, delta][power_block(i, n)]
        }
    })?;
    let truth = ClusterLabels::new((0..n).map(|i| power_block(i, n)).collect())?;
    Ok((x, truth))
}

fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()).filter(|&w| w > 0)
}

/// Map replicates `0..count` in parallel, keeping replicate order.
fn replicate_map<T: Send>(count: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    let run = || (0..count as u64).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    match worker_count() {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {w} workers: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Uniform random pair of distinct clusters out of `k`.
fn random_pair<R: Rng>(r: &mut R, k: usize) -> (usize, usize) {
    let a = r.random_range(0..k);
    let b = (a + r.random_range(1..k)) % k;
    (a, b)
}

/// One replicate of the Type I campaign. Indices are one-based; p-values
/// are NaN when the fit produced fewer than two clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Type1Row {
    pub replicate: u64,
    pub method: String,
    pub feature: usize,
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub statistic: f64,
    pub p_selective: f64,
    pub p_naive: f64,
}

/// For each replicate: cluster null data, pick a random pair of clusters and
/// a random feature among those with no true mean difference, and test.
pub fn run_type1(cfg: &SimConfig) -> Result<Vec<Type1Row>> {
    if cfg.design != Design::NullTwoCluster {
        return Err(Error::invalid("run_type1 needs the null_two_cluster design"));
    }
    cfg.validate()?;
    let sigma = cfg.sigma()?;
    replicate_map(cfg.replicates, |rep| {
        let x = gen_null(cfg, rep)?;
        let method = cfg.method_for(rep);
        let fit = method.fit(&x)?;
        let mut choice = rng::stream(rng::derive_seed(cfg.seed, rep, SALT_CHOICE), rep);
        let k = fit.labels().k();
        if k < 2 {
            return Ok(Type1Row {
                replicate: rep,
                method: method.to_string(),
                feature: 0,
                cluster_a: 0,
                cluster_b: 0,
                statistic: f64::NAN,
                p_selective: f64::NAN,
                p_naive: f64::NAN,
            });
        }
        let pair = random_pair(&mut choice, k);
        let feature = choice.random_range(1..cfg.q - 1);
        let rep_out = test_fitted(&x, &sigma, &fit, &method, pair, feature, SigmaSource::Supplied)?;
        Ok(Type1Row {
            replicate: rep,
            method: method.to_string(),
            feature: feature + 1,
            cluster_a: pair.0 + 1,
            cluster_b: pair.1 + 1,
            statistic: rep_out.statistic,
            p_selective: rep_out.p_selective,
            p_naive: rep_out.p_naive,
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Type1Summary {
    pub replicates: usize,
    /// Replicates with a test (fits with at least two clusters).
    pub tested: usize,
    pub selective_rejection_rate: f64,
    pub naive_rejection_rate: f64,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
}

pub fn summarize_type1(rows: &[Type1Row], alpha: f64) -> Type1Summary {
    let tested: Vec<&Type1Row> = rows.iter().filter(|r| r.p_selective.is_finite()).collect();
    let m = tested.len().max(1) as f64;
    let rate = |f: &dyn Fn(&Type1Row) -> f64| tested.iter().filter(|r| f(r) <= alpha).count() as f64 / m;
    let sel: Vec<f64> = tested.iter().map(|r| r.p_selective).collect();
    let (d, p) = ks_uniform(&sel);
    Type1Summary {
        replicates: rows.len(),
        tested: tested.len(),
        selective_rejection_rate: rate(&|r| r.p_selective),
        naive_rejection_rate: rate(&|r| r.p_naive),
        ks_statistic: d,
        ks_pvalue: p,
    }
}

/// One-sample Kolmogorov-Smirnov test against Uniform(0, 1): the statistic
/// and its asymptotic p-value with the small-sample correction
/// `(sqrt(m) + 0.12 + 0.11 / sqrt(m)) D`.
pub fn ks_uniform(sample: &[f64]) -> (f64, f64) {
    if sample.is_empty() {
        return (0.0, 1.0);
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &p)| (p - i as f64 / m).max((i + 1) as f64 / m - p))
        .fold(0.0, f64::max);
    let sm = m.sqrt();
    (d, kolmogorov_sf((sm + 0.12 + 0.11 / sm) * d))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One replicate of the power campaign. Indices are one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub replicate: u64,
    pub method: String,
    pub feature: usize,
    pub cluster_a: usize,
    pub cluster_b: usize,
    /// `|mean of mu_j over one group - mean over the other|`.
    pub effect: f64,
    pub p_selective: f64,
    pub reject: bool,
    /// Both tested clusters coincide with true blocks.
    pub true_clusters: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    pub replicates: usize,
    /// Replicates whose tested clusters are both true blocks.
    pub detections: usize,
    /// Rejections among those.
    pub detected_rejections: usize,
    /// `detected_rejections / detections`, or 0 when nothing was detected.
    pub conditional_power: f64,
    pub detection_probability: f64,
}

impl PowerSummary {
    pub fn from_rows(rows: &[PowerRow]) -> Self {
        let detections = rows.iter().filter(|r| r.true_clusters).count();
        let detected_rejections = rows.iter().filter(|r| r.true_clusters && r.reject).count();
        Self {
            replicates: rows.len(),
            detections,
            detected_rejections,
            conditional_power: if detections == 0 { 0.0 } else { detected_rejections as f64 / detections as f64 },
            detection_probability: detections as f64 / rows.len().max(1) as f64,
        }
    }
}

/// For each replicate: cluster three-block data, pick a random pair of
/// clusters and a random feature carrying signal, and test at `alpha`.
pub fn run_power(cfg: &SimConfig) -> Result<(PowerSummary, Vec<PowerRow>)> {
    if cfg.design != Design::ThreeClusterPower {
        return Err(Error::invalid("run_power needs the three_cluster_power design"));
    }
    cfg.validate()?;
    let sigma = cfg.sigma()?;
    let first_signal = cfg.q / 2;
    let rows = replicate_map(cfg.replicates, |rep| {
        let (x, truth) = gen_power(cfg, rep)?;
        let method = cfg.method_for(rep);
        let fit = method.fit(&x)?;
        let labels = fit.labels();
        let mut choice = rng::stream(rng::derive_seed(cfg.seed, rep, SALT_CHOICE), rep);
        let feature = choice.random_range(first_signal..cfg.q);
        if labels.k() < 2 {
            return Ok(PowerRow {
                replicate: rep,
                method: method.to_string(),
                feature: feature + 1,
                cluster_a: 0,
                cluster_b: 0,
                effect: 0.0,
                p_selective: f64::NAN,
                reject: false,
                true_clusters: false,
            });
        }
        let pair = random_pair(&mut choice, labels.k());
        let report = test_fitted(&x, &sigma, &fit, &method, pair, feature, SigmaSource::Supplied)?;
        let blocks = truth.groups();
        let (ga, gb) = (labels.members(pair.0), labels.members(pair.1));
        let block_mean = |g: &[usize]| {
            g.iter().map(|&i| [-cfg.delta, 0.0, cfg.delta][power_block(i, cfg.n)]).sum::<f64>() / g.len() as f64
        };
        Ok(PowerRow {
            replicate: rep,
            method: method.to_string(),
            feature: feature + 1,
            cluster_a: pair.0 + 1,
            cluster_b: pair.1 + 1,
            effect: (block_mean(&ga) - block_mean(&gb)).abs(),
            p_selective: report.p_selective,
            reject: report.p_selective <= cfg.alpha,
            true_clusters: blocks.contains(&ga) && blocks.contains(&gb),
        })
    })?;
    Ok((PowerSummary::from_rows(&rows), rows))
}

/// Serialize rows as CSV with a header.
pub fn write_rows_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_design_shape_and_determinism() {
        let cfg = SimConfig::null(MethodKind::Kmeans, 0.0, 5, 11);
        let a = gen_null(&cfg, 3).unwrap();
        let b = gen_null(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_null(&cfg, 4).unwrap());
        let big = SimConfig { n: 4000, ..cfg.clone() };
        let x = gen_null(&big, 0).unwrap();
        for j in 1..9 {
            let mean = x.column(j).iter().sum::<f64>() / 4000.0;
            assert!(mean.abs() < 0.1, "feature {j} mean {mean}");
        }
        let first: f64 = (0..2000).map(|i| x.get(i, 0)).sum::<f64>() / 2000.0;
        let last: f64 = (2000..4000).map(|i| x.get(i, 9)).sum::<f64>() / 2000.0;
        assert!((first - 1.0).abs() < 0.1 && (last - 1.0).abs() < 0.1);
        assert!(SimConfig { rho: 1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn power_design_blocks() {
        let cfg = SimConfig::power(MethodKind::Average, 0.0, 0.0, 3, 1);
        let (x0, truth) = gen_power(&cfg, 0).unwrap();
        assert_eq!(truth.groups(), vec![(0..50).collect::<Vec<_>>(), (50..100).collect(), (100..150).collect()]);
        let shifted = SimConfig { delta: 6.0, ..cfg };
        let (x6, _) = gen_power(&shifted, 0).unwrap();
        for i in [0, 75, 149] {
            for j in 0..10 {
                let expected = if j < 5 { 0.0 } else { [-6.0, 0.0, 6.0][power_block(i, 150)] };
                assert!((x6.get(i, j) - x0.get(i, j) - expected).abs() < 1e-12);
            }
        }
        assert_eq!(power_block(99, 100), 2);
        assert_eq!(power_block(33, 100), 0);
    }

    #[test]
    fn ks_examples() {
        let grid: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let (d, p) = ks_uniform(&grid);
        assert!(d <= 0.0005 + 1e-12);
        assert!(p > 0.99);
        let squeezed: Vec<f64> = grid.iter().map(|v| v * 0.5).collect();
        assert!(ks_uniform(&squeezed).1 < 1e-10);
        // Kolmogorov distribution: P(K > 1.3581) ~ 0.05.
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn type1_rows_are_ordered_and_reproducible() {
        let cfg = SimConfig { n: 40, ..SimConfig::null(MethodKind::Average, 0.4, 12, 5) };
        let a = run_type1(&cfg).unwrap();
        let b = run_type1(&cfg).unwrap();
        assert_eq!(a.len(), 12);
        assert!(a.iter().enumerate().all(|(i, r)| r.replicate == i as u64));
        assert!(a.iter().all(|r| (2..=9).contains(&r.feature)));
        let bits = |rows: &[Type1Row]| rows.iter().map(|r| r.p_selective.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("replicate,method,feature,cluster_a,cluster_b,statistic,p_selective,p_naive\n"));
    }

    #[test]
    fn power_summary_counts() {
        let cfg = SimConfig { n: 60, ..SimConfig::power(MethodKind::Kmeans, 0.0, 0.0, 10, 2) };
        let (summary, rows) = run_power(&cfg).unwrap();
        assert!(summary.detected_rejections <= summary.detections && summary.detections <= summary.replicates);
        assert_eq!(rows.len(), 10);
        let empty = PowerSummary::from_rows(&[]);
        assert_eq!(empty.conditional_power, 0.0);
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{"design":"three_cluster_power","n":90,"q":6,"rho":0.4,"delta":5,"method":"centroid","replicates":7}"#;
        let cfg: SimConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.alpha, 0.05);
        let back: SimConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
        assert!("Ward".parse::<MethodKind>().is_ok());
        assert!("complete".parse::<MethodKind>().is_err());
    }
}
