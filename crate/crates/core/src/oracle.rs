//! Brute-force validators that share no code path with the analytic
//! machinery: re-clustering on a grid of statistic values, adaptive
//! Gauss-Kronrod quadrature of the Gaussian density, and Monte Carlo
//! sampling of the truncated null.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::Linkage;
use crate::error::{Error, Result};
use crate::inference::{ClusteringFit, ClusteringMethod};
use crate::interval::{contains, IntervalUnion};
use crate::model::{Contrast, DataMatrix, FeatureCovariance, PerturbationLine};
use crate::rng;

/// Grid of statistic values with "reproduces the clustering" flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScan {
    pub phis: Vec<f64>,
    pub membership: Vec<bool>,
}

/// `points` values centred on `anchor` spanning `±half_width`; the middle
/// point is exactly `anchor`.
pub fn centered_grid(anchor: f64, half_width: f64, points: usize) -> Vec<f64> {
    let half = (points / 2) as f64;
    let step = half_width / half;
    (0..points).map(|i| anchor + (i as f64 - half) * step).collect()
}

/// Default grid: 4001 points over `phi_hat ± 6 sd`.
pub fn default_grid(line: &PerturbationLine<'_>, sd: f64) -> Vec<f64> {
    centered_grid(line.anchor(), 6.0 * sd, 4001)
}

/// Re-cluster `x'(phi)` at every grid point and compare with `reference`.
/// k-means reruns use the same seed and iteration cap, and every recorded
/// assignment vector has to match.
pub fn grid_membership(
    line: &PerturbationLine<'_>,
    reference: &ClusteringFit,
    method: &ClusteringMethod,
    grid: &[f64],
) -> Result<GridScan> {
    let labels = reference.labels();
    let membership = grid
        .par_iter()
        .map(|&phi| -> Result<bool> {
            let moved = line.perturb(phi);
            let fit = method.fit(&moved)?;
            Ok(match (&fit, reference) {
                (ClusteringFit::KMeans(a), ClusteringFit::KMeans(b)) => a.assignments == b.assignments,
                _ => fit.labels() == labels,
            })
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(GridScan { phis: grid.to_vec(), membership })
}

/// Pointwise comparison of an analytic set with a grid scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAgreement {
    pub points: usize,
    pub agreeing: usize,
    /// Disagreements within one grid step of a finite analytic endpoint.
    pub boundary: usize,
    /// All other disagreements.
    pub interior: usize,
    pub anchor_member: bool,
}

impl GridAgreement {
    pub fn fraction(&self) -> f64 {
        self.agreeing as f64 / self.points as f64
    }
}

pub fn compare_with_grid(analytic: &IntervalUnion, scan: &GridScan, anchor: f64) -> GridAgreement {
    let step = if scan.phis.len() > 1 { scan.phis[1] - scan.phis[0] } else { 0.0 };
    let ends = analytic.finite_endpoints();
    let mut out = GridAgreement { points: scan.phis.len(), agreeing: 0, boundary: 0, interior: 0, anchor_member: false };
    for (&phi, &member) in scan.phis.iter().zip(&scan.membership) {
        if phi == anchor {
            out.anchor_member = member;
        }
        if contains(analytic, phi) == member {
            out.agreeing += 1;
        } else if ends.iter().any(|e| (e - phi).abs() <= step * (1.0 + 1e-9)) {
            out.boundary += 1;
        } else {
            out.interior += 1;
        }
    }
    out
}

/// CSV with columns `phi,member_analytic,member_grid`.
pub fn write_scan_csv<W: Write>(out: W, analytic: &IntervalUnion, scan: &GridScan) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["phi", "member_analytic", "member_grid"])?;
    for (&phi, &member) in scan.phis.iter().zip(&scan.membership) {
        w.write_record([format!("{phi:.17e}"), contains(analytic, phi).to_string(), member.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

// 15-point Kronrod nodes on [-1, 1] (non-negative half) and weights, with the
// embedded 7-point Gauss weights at the odd-indexed nodes.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

/// Adaptive bisection of Gauss-Kronrod panels until every panel's error
/// estimate is below `rel_tol` of the running total.
fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    let mut panels = vec![(a, b, gk15(&f, a, b))];
    for _ in 0..20_000 {
        let total: f64 = panels.iter().map(|p| p.2 .0).sum();
        let (worst, err) = panels
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.2 .1))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("at least one panel");
        let err_total: f64 = panels.iter().map(|p| p.2 .1).sum();
        if err_total <= rel_tol * total.abs() || err == 0.0 {
            return Ok(total);
        }
        let (lo, hi, _) = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        panels.push((lo, mid, gk15(&f, lo, mid)));
        panels.push((mid, hi, gk15(&f, mid, hi)));
    }
    Err(Error::NoConvergence(format!("quadrature on [{a}, {b}] exceeded its panel budget")))
}

/// `ln P(lo <= Z <= hi)` for standard normal `Z` by quadrature. Each piece on
/// one side of zero is written as `phi(a) * int_0^{b-a} exp(-a u - u^2/2) du`
/// so that far-tail masses keep full relative precision.
fn log_mass_quadrature(lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Ok(f64::NEG_INFINITY);
    }
    if lo < 0.0 && hi > 0.0 {
        let left = log_mass_quadrature(0.0, -lo)?;
        let right = log_mass_quadrature(0.0, hi)?;
        let m = left.max(right);
        return Ok(m + ((left - m).exp() + (right - m).exp()).ln());
    }
    if hi <= 0.0 {
        return log_mass_quadrature(-hi, -lo);
    }
    let a = lo;
    // Beyond this the integrand is below exp(-800).
    let cap = -a + (a * a + 1600.0).sqrt();
    let width = (hi - a).min(cap);
    let integral = integrate(|u| (-a * u - 0.5 * u * u).exp(), 0.0, width, 1e-14)?;
    Ok(-0.5 * a * a - 0.5 * (2.0 * std::f64::consts::PI).ln() + integral.ln())
}

fn log_union_quadrature(mean: f64, sd: f64, s: &IntervalUnion) -> Result<f64> {
    let mut acc = f64::NEG_INFINITY;
    for &(lo, hi) in s.intervals() {
        let part = log_mass_quadrature((lo - mean) / sd, (hi - mean) / sd)?;
        let m = acc.max(part);
        if m > f64::NEG_INFINITY {
            acc = m + ((acc - m).exp() + (part - m).exp()).ln();
        }
    }
    Ok(acc)
}

/// `P(Z <= t | Z in s)` for `Z ~ N(mean, sd^2)`, by quadrature.
pub fn quadrature_trunc_cdf(t: f64, mean: f64, sd: f64, s: &IntervalUnion) -> Result<f64> {
    let total = log_union_quadrature(mean, sd, s)?;
    if !total.is_finite() {
        return Err(Error::DegenerateSupport(format!("support {s} has no mass")));
    }
    let below = log_union_quadrature(mean, sd, &s.clip_above(t))?;
    Ok((below - total).exp().min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// Draws landing in the support.
    pub accepted: usize,
    pub importance: bool,
}

/// Tail hits below which the binomial standard error is not trusted.
const MIN_HITS: usize = 100;

/// Monte Carlo estimate of `P(|Z| >= |statistic| | Z in s)` for
/// `Z ~ N(0, sd^2)`. Rejection sampling collects `draws` accepted values.
/// When a pilot shows acceptance below 1e-3, or either outcome is seen
/// fewer than 100 times, importance sampling is used instead.
pub fn mc_selective_p(statistic: f64, sd: f64, s: &IntervalUnion, draws: usize, seed: u64) -> Result<McEstimate> {
    if draws < 10_000 {
        return Err(Error::invalid("Monte Carlo needs at least 10^4 draws"));
    }
    if s.is_empty() {
        return Err(Error::DegenerateSupport("empty support".into()));
    }
    let t = statistic.abs();
    let mut r = rng::seeded(seed);
    let pilot = 10_000usize;
    let pilot_hits = (0..pilot).filter(|_| s.contains(sd * Distribution::<f64>::sample(&StandardNormal, &mut r))).count();

    if pilot_hits as f64 >= 1e-3 * pilot as f64 {
        let (mut accepted, mut extreme) = (0usize, 0usize);
        let budget = draws.saturating_mul(10_000);
        let mut proposals = 0usize;
        while accepted < draws && proposals < budget {
            proposals += 1;
            let z: f64 = StandardNormal.sample(&mut r);
            let phi = sd * z;
            if s.contains(phi) {
                accepted += 1;
                extreme += usize::from(phi.abs() >= t);
            }
        }
        if accepted == 0 {
            return Err(Error::DegenerateSupport("no accepted draws".into()));
        }
        if extreme.min(accepted - extreme) >= MIN_HITS {
            let p = extreme as f64 / accepted as f64;
            return Ok(McEstimate { estimate: p, stderr: (p * (1.0 - p) / accepted as f64).sqrt(), accepted, importance: false });
        }
    }
    stratified(t, sd, s, draws, &mut r)
}

/// `(-t, t)`, empty for `t = 0`.
fn core(t: f64) -> IntervalUnion {
    if t > 0.0 {
        IntervalUnion::interval(-t, t)
    } else {
        IntervalUnion::empty()
    }
}

/// Stratified importance sampling over the pieces of `s` inside and outside
/// `|phi| >= t`, so a rare tail piece is sampled as often as the rest.
fn stratified(t: f64, sd: f64, s: &IntervalUnion, draws: usize, r: &mut rng::StreamRng) -> Result<McEstimate> {
    let tails = IntervalUnion::from_intervals(vec![(f64::NEG_INFINITY, -t), (t, f64::INFINITY)]);
    let pieces: Vec<((f64, f64), bool)> = s
        .intersect(&tails)
        .intervals()
        .iter()
        .map(|&iv| (iv, true))
        .chain(s.intersect(&core(t)).intervals().iter().map(|&iv| (iv, false)))
        .collect();
    // One proposal N(m_i, sd^2) per piece, m_i its point nearest 0. On
    // piece i the density ratio is exp(-m_i^2 / 2sd^2) * exp(-(phi - m_i) m_i / sd^2),
    // and the second factor is at most 1 there.
    let per = (draws / pieces.len()).max(2);
    let offsets: Vec<f64> = pieces.iter().map(|&(iv, _)| -nearest_to_zero_of(iv).powi(2) / (2.0 * sd * sd)).collect();
    let top = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut strata = Vec::with_capacity(offsets.len());
    let mut accepted = 0usize;
    for (&((lo, hi), hit), &offset) in pieces.iter().zip(&offsets) {
        let m = nearest_to_zero_of((lo, hi));
        let proposal = Normal::new(m, sd).expect("sd validated positive");
        let mut samples = Vec::with_capacity(per);
        for _ in 0..per {
            let phi: f64 = proposal.sample(r);
            if phi >= lo && phi <= hi {
                accepted += 1;
                samples.push(((-(phi - m) * m / (sd * sd)).exp(), hit));
            } else {
                samples.push((0.0, false));
            }
        }
        strata.push(((offset - top).exp(), samples));
    }
    if accepted == 0 {
        return Err(Error::DegenerateSupport("no accepted draws after reweighting".into()));
    }
    let mean = |v: &[(f64, bool)], f: &dyn Fn(f64, bool) -> f64| v.iter().map(|&(w, h)| f(w, h)).sum::<f64>() / v.len() as f64;
    let num: f64 = strata.iter().map(|(c, v)| c * mean(v, &|w, h| if h { w } else { 0.0 })).sum();
    let den: f64 = strata.iter().map(|(c, v)| c * mean(v, &|w, _| w)).sum();
    let p = num / den;
    // Delta method for a ratio of independent stratified means.
    let var: f64 = strata
        .iter()
        .map(|(c, v)| {
            let g = |w: f64, h: bool| (f64::from(u8::from(h)) - p) * w;
            let mu = mean(v, &g);
            let s2 = v.iter().map(|&(w, h)| (g(w, h) - mu).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
            c * c * s2 / v.len() as f64
        })
        .sum::<f64>()
        / (den * den);
    Ok(McEstimate { estimate: p, stderr: var.sqrt(), accepted, importance: true })
}

fn nearest_to_zero_of((lo, hi): (f64, f64)) -> f64 {
    if lo <= 0.0 && hi >= 0.0 {
        0.0
    } else if lo > 0.0 {
        lo
    } else {
        hi
    }
}

/// A small random testing problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInstance {
    pub x: DataMatrix,
    pub sigma: FeatureCovariance,
    pub method: ClusteringMethod,
    /// Zero-based cluster labels.
    pub pair: (usize, usize),
    /// Zero-based feature.
    pub feature: usize,
}

/// Random instance with `n <= 15`, `q <= 3`; the method cycles through
/// k-means and the four linkages with `index`.
pub fn random_instance(seed: u64, index: u64) -> Result<OracleInstance> {
    let mut r = rng::stream(seed, index);
    let n = r.random_range(6..=15usize);
    let q = r.random_range(1..=3usize);
    let k = r.random_range(2..=3usize);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..q).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
    let rho = if q > 1 { r.random_range(0.0..0.6) } else { 0.0 };
    let sigma = FeatureCovariance::equicorrelated(q, rho)?;
    let chol = sigma.cholesky_lower();
    let mut values = Vec::with_capacity(n * q);
    for i in 0..n {
        let z: Vec<f64> = (0..q).map(|_| StandardNormal.sample(&mut r)).collect();
        for a in 0..q {
            let noise: f64 = (0..=a).map(|b| chol[a * q + b] * z[b]).sum();
            values.push(centers[i % k][a] + noise);
        }
    }
    let x = DataMatrix::new(n, q, values)?;
    let method = match index % 5 {
        0 => ClusteringMethod::KMeans { k, t_max: r.random_range(1..=6usize), seed: r.random() },
        m => ClusteringMethod::Hierarchical { linkage: Linkage::ALL[m as usize - 1], k },
    };
    let fitted_k = method.fit(&x)?.labels().k();
    if fitted_k < 2 {
        return random_instance(seed, index + 1_000_000);
    }
    let a = r.random_range(0..fitted_k);
    let b = (a + r.random_range(1..fitted_k)) % fitted_k;
    let feature = r.random_range(0..q);
    Ok(OracleInstance { x, sigma, method, pair: (a, b), feature })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceCheck {
    pub method: String,
    pub n: usize,
    pub q: usize,
    pub analytic: IntervalUnion,
    pub statistic: f64,
    pub agreement: GridAgreement,
    #[serde(skip)]
    pub scan: GridScan,
}

impl InstanceCheck {
    /// Agreement on at least 99.5% of points, every disagreement next to an
    /// analytic endpoint, and the observed statistic reproduced.
    pub fn passes(&self) -> bool {
        self.agreement.fraction() >= 0.995 && self.agreement.interior == 0 && self.agreement.anchor_member
    }
}

/// Analytic truncation set against grid re-clustering for one instance.
pub fn check_instance(inst: &OracleInstance, points: usize) -> Result<InstanceCheck> {
    let fit = inst.method.fit(&inst.x)?;
    let labels = fit.labels();
    let contrast = Contrast::new(&labels.members(inst.pair.0), &labels.members(inst.pair.1), inst.x.n())?;
    let line = PerturbationLine::new(&inst.x, contrast, &inst.sigma, inst.feature)?;
    let sd = (line.contrast().nu_sq_norm() * inst.sigma.get(inst.feature, inst.feature)).sqrt();
    let analytic = fit.truncation_set(&line)?;
    let grid = centered_grid(line.anchor(), 6.0 * sd, points);
    let scan = grid_membership(&line, &fit, &inst.method, &grid)?;
    let agreement = compare_with_grid(&analytic, &scan, line.anchor());
    Ok(InstanceCheck {
        method: inst.method.to_string(),
        n: inst.x.n(),
        q: inst.x.q(),
        analytic,
        statistic: line.anchor(),
        agreement,
        scan,
    })
}
