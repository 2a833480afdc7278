//! Data matrix, feature covariance, contrast vectors and the one-dimensional
//! perturbation line along which the test statistic moves.
//!
//! For a contrast `nu` over two groups and a feature `j`, every data set on the
//! line is
//!
//! ```text
//! x'(phi) = x + (phi - phi_hat) * u * w^T,   u = nu / |nu|^2,  w = Sigma_j / Sigma_jj
//! ```
//!
//! and the residual `U(x) = x - u * w^T * phi_hat` is constant along it.
//!
//! Indices are zero-based throughout the library; the CLI, JSON reports and
//! Python bindings convert to one-based numbering at the boundary.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `n x q` matrix of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    n: usize,
    q: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n: usize, q: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 observations, got {n}")));
        }
        if q < 1 {
            return Err(Error::invalid("need at least one feature"));
        }
        if values.len() != n * q {
            return Err(Error::invalid(format!(
                "expected {} values for a {n}x{q} matrix, got {}",
                n * q,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / q, col: pos % q });
        }
        Ok(Self { n, q, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let q = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != q) {
            return Err(Error::invalid(format!("row {bad} has {} columns, expected {q}", rows[bad].len())));
        }
        Self::new(n, q, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.q + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.q..(i + 1) * self.q]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.q)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub(crate) fn check_feature(&self, j: usize) -> Result<()> {
        if j >= self.q {
            return Err(Error::IndexOutOfRange { index: j, size: self.q });
        }
        Ok(())
    }
}

/// Squared Euclidean distance between two rows.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Known (or plug-in) positive-definite `q x q` covariance shared by all rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCovariance {
    q: usize,
    sigma: Vec<f64>,
}

impl FeatureCovariance {
    pub fn new(q: usize, sigma: Vec<f64>) -> Result<Self> {
        if q == 0 || sigma.len() != q * q {
            return Err(Error::invalid(format!("covariance must be {q}x{q}")));
        }
        if let Some(pos) = sigma.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / q, col: pos % q });
        }
        for a in 0..q {
            for b in (a + 1)..q {
                let (s, t) = (sigma[a * q + b], sigma[b * q + a]);
                let scale = s.abs().max(t.abs()).max(f64::MIN_POSITIVE);
                if (s - t).abs() > 1e-10 * scale {
                    return Err(Error::NotSymmetric(a, b));
                }
            }
        }
        if let Some(j) = (0..q).find(|&j| sigma[j * q + j] <= 0.0) {
            return Err(Error::invalid(format!("diagonal entry {j} is not positive")));
        }
        let trace: f64 = (0..q).map(|j| sigma[j * q + j]).sum();
        let min_eig = min_eigenvalue(q, &sigma);
        if min_eig <= 1e-12 * trace / q as f64 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue: min_eig });
        }
        Ok(Self { q, sigma })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let q = rows.len();
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::invalid("covariance rows must form a square matrix"));
        }
        Self::new(q, rows.concat())
    }

    pub fn identity(q: usize) -> Self {
        Self::equicorrelated(q, 0.0).expect("identity is positive definite")
    }

    /// `Sigma_ab = 1{a = b} + rho * 1{a != b}`.
    pub fn equicorrelated(q: usize, rho: f64) -> Result<Self> {
        let mut sigma = vec![rho; q * q];
        for j in 0..q {
            sigma[j * q + j] = 1.0;
        }
        Self::new(q, sigma)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn values(&self) -> &[f64] {
        &self.sigma
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.sigma[a * self.q + b]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.q).map(|a| self.get(a, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.sigma.chunks_exact(self.q).map(<[f64]>::to_vec).collect()
    }

    /// Lower Cholesky factor, row-major.
    pub fn cholesky_lower(&self) -> Vec<f64> {
        let m = DMatrix::from_row_slice(self.q, self.q, &self.sigma);
        let l = m.cholesky().expect("validated positive definite").l();
        let mut out = vec![0.0; self.q * self.q];
        for a in 0..self.q {
            for b in 0..=a {
                out[a * self.q + b] = l[(a, b)];
            }
        }
        out
    }
}

pub(crate) fn min_eigenvalue(q: usize, sigma: &[f64]) -> f64 {
    let m = DMatrix::from_row_slice(q, q, sigma);
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Contrast vector comparing the means of two disjoint groups of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contrast {
    group_a: Vec<usize>,
    group_b: Vec<usize>,
    nu: Vec<f64>,
    nu_sq_norm: f64,
}

impl Contrast {
    /// Groups are zero-based observation indices into `0..n`.
    pub fn new(group_a: &[usize], group_b: &[usize], n: usize) -> Result<Self> {
        if group_a.is_empty() || group_b.is_empty() {
            return Err(Error::EmptyGroup);
        }
        let mut membership = vec![0u8; n];
        for (tag, group) in [(1u8, group_a), (2u8, group_b)] {
            for &i in group {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, size: n });
                }
                if membership[i] != 0 {
                    return Err(if membership[i] == tag {
                        Error::invalid(format!("observation {i} listed twice"))
                    } else {
                        Error::OverlappingGroups(i)
                    });
                }
                membership[i] = tag;
            }
        }
        let wa = 1.0 / group_a.len() as f64;
        let wb = 1.0 / group_b.len() as f64;
        let nu = membership
            .iter()
            .map(|&m| match m {
                1 => wa,
                2 => -wb,
                _ => 0.0,
            })
            .collect();
        let mut group_a = group_a.to_vec();
        let mut group_b = group_b.to_vec();
        group_a.sort_unstable();
        group_b.sort_unstable();
        Ok(Self { group_a, group_b, nu, nu_sq_norm: wa + wb })
    }

    pub fn group_a(&self) -> &[usize] {
        &self.group_a
    }

    pub fn group_b(&self) -> &[usize] {
        &self.group_b
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// `1/|G| + 1/|G'|`.
    pub fn nu_sq_norm(&self) -> f64 {
        self.nu_sq_norm
    }

    pub fn n(&self) -> usize {
        self.nu.len()
    }
}

/// Difference of the two group means of feature `j`.
pub fn test_statistic(x: &DataMatrix, c: &Contrast, j: usize) -> Result<f64> {
    x.check_feature(j)?;
    if c.n() != x.n() {
        return Err(Error::invalid("contrast length does not match the data"));
    }
    let mean = |g: &[usize]| g.iter().map(|&i| x.get(i, j)).sum::<f64>() / g.len() as f64;
    Ok(mean(c.group_a()) - mean(c.group_b()))
}

/// Null distribution of the statistic before truncation: `N(0, |nu|^2 Sigma_jj)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianNullSpec {
    pub mean_diff: f64,
    pub sd: f64,
}

impl GaussianNullSpec {
    pub fn new(c: &Contrast, sigma: &FeatureCovariance, j: usize) -> Self {
        Self { mean_diff: 0.0, sd: (c.nu_sq_norm() * sigma.get(j, j)).sqrt() }
    }
}

/// The affine family `x'(phi)` through the observed data for one feature.
#[derive(Debug, Clone)]
pub struct PerturbationLine<'a> {
    feature: usize,
    base: &'a DataMatrix,
    contrast: Contrast,
    row_direction: Vec<f64>,
    col_direction: Vec<f64>,
    anchor: f64,
}

impl<'a> PerturbationLine<'a> {
    pub fn new(base: &'a DataMatrix, contrast: Contrast, sigma: &FeatureCovariance, feature: usize) -> Result<Self> {
        base.check_feature(feature)?;
        if sigma.q() != base.q() {
            return Err(Error::invalid(format!(
                "covariance is {}x{} but data has {} features",
                sigma.q(),
                sigma.q(),
                base.q()
            )));
        }
        let anchor = test_statistic(base, &contrast, feature)?;
        let norm = contrast.nu_sq_norm();
        let row_direction = contrast.nu().iter().map(|v| v / norm).collect();
        let sjj = sigma.get(feature, feature);
        let mut col_direction: Vec<f64> = (0..base.q()).map(|k| sigma.get(k, feature) / sjj).collect();
        col_direction[feature] = 1.0;
        Ok(Self { feature, base, contrast, row_direction, col_direction, anchor })
    }

    pub fn feature(&self) -> usize {
        self.feature
    }

    pub fn base(&self) -> &'a DataMatrix {
        self.base
    }

    pub fn contrast(&self) -> &Contrast {
        &self.contrast
    }

    /// `u = nu / |nu|^2`.
    pub fn row_direction(&self) -> &[f64] {
        &self.row_direction
    }

    /// `w = Sigma_j / Sigma_jj`.
    pub fn col_direction(&self) -> &[f64] {
        &self.col_direction
    }

    /// The observed statistic `phi_hat`.
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn perturb(&self, phi: f64) -> DataMatrix {
        perturb(self, phi)
    }
}

/// `x'(phi) = x + (phi - phi_hat) u w^T`. Rows outside both groups are copied
/// untouched.
pub fn perturb(line: &PerturbationLine<'_>, phi: f64) -> DataMatrix {
    let base = line.base;
    let step = phi - line.anchor;
    let mut values = base.values.clone();
    if step != 0.0 {
        for (i, &ui) in line.row_direction.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            let s = step * ui;
            for (v, wk) in values[i * base.q..(i + 1) * base.q].iter_mut().zip(&line.col_direction) {
                *v += s * wk;
            }
        }
    }
    DataMatrix { n: base.n, q: base.q, values }
}

/// `U(x) = x - u w^T phi_hat`, the part of the data held fixed when
/// conditioning.
pub fn residual_component(line: &PerturbationLine<'_>) -> DataMatrix {
    let base = line.base;
    let mut values = base.values.clone();
    for (i, &ui) in line.row_direction.iter().enumerate() {
        if ui == 0.0 {
            continue;
        }
        let s = ui * line.anchor;
        for (v, wk) in values[i * base.q..(i + 1) * base.q].iter_mut().zip(&line.col_direction) {
            *v -= s * wk;
        }
    }
    DataMatrix { n: base.n, q: base.q, values }
}
