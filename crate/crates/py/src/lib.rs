//! Python bindings. Cluster and feature numbers are one-based, as on the
//! command line.

use clustertest::inference::{self, ClusteringFit, ClusteringMethod, SigmaSource};
use clustertest::interval::IntervalUnion;
use clustertest::model::{DataMatrix, FeatureCovariance};
use clustertest::sim::{self, Design, MethodKind, SimConfig};
use clustertest::{preprocess, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NoConvergence(_) | Error::DegenerateSupport(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn zero_based(v: usize, what: &str) -> PyResult<usize> {
    v.checked_sub(1).ok_or_else(|| PyValueError::new_err(format!("{what} numbers start at 1")))
}

fn union_from(intervals: Vec<(f64, f64)>) -> IntervalUnion {
    IntervalUnion::from_intervals(intervals)
}

/// Outcome of one selective test.
#[pyclass(name = "TestReport", frozen)]
struct PyTestReport(inference::TestReport);

#[pymethods]
impl PyTestReport {
    #[getter]
    fn feature(&self) -> usize {
        self.0.feature
    }
    #[getter]
    fn clusters(&self) -> (usize, usize) {
        self.0.clusters
    }
    #[getter]
    fn group_a(&self) -> Vec<usize> {
        self.0.group_a.clone()
    }
    #[getter]
    fn group_b(&self) -> Vec<usize> {
        self.0.group_b.clone()
    }
    #[getter]
    fn statistic(&self) -> f64 {
        self.0.statistic
    }
    #[getter]
    fn sd(&self) -> f64 {
        self.0.sd
    }
    /// Truncation set as sorted disjoint `(lower, upper)` pairs.
    #[getter]
    fn truncation(&self) -> Vec<(f64, f64)> {
        self.0.truncation.intervals().to_vec()
    }
    #[getter]
    fn p_selective(&self) -> f64 {
        self.0.p_selective
    }
    #[getter]
    fn p_naive(&self) -> f64 {
        self.0.p_naive
    }
    #[getter]
    fn method(&self) -> String {
        self.0.method.clone()
    }
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }
    fn __repr__(&self) -> String {
        format!(
            "TestReport(feature={}, clusters={:?}, statistic={:?}, p_selective={:?}, p_naive={:?})",
            self.0.feature, self.0.clusters, self.0.statistic, self.0.p_selective, self.0.p_naive
        )
    }
}

/// A clustering fitted to one data matrix, ready to test features.
#[pyclass(name = "Clustering", frozen)]
struct PyClustering {
    x: DataMatrix,
    method: ClusteringMethod,
    fit: ClusteringFit,
}

#[pymethods]
impl PyClustering {
    /// `method` is one of kmeans, single, average, centroid, ward.
    #[new]
    #[pyo3(signature = (x, method, k, seed = 1, t_max = 30))]
    fn new(x: Vec<Vec<f64>>, method: &str, k: usize, seed: u64, t_max: usize) -> PyResult<Self> {
        let x = DataMatrix::from_rows(&x).map_err(py_err)?;
        let method = method.parse::<MethodKind>().map_err(py_err)?.with(k, t_max, seed);
        let fit = method.fit(&x).map_err(py_err)?;
        Ok(Self { x, method, fit })
    }

    /// One-based cluster label of each observation.
    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.fit.labels().labels().iter().map(|l| l + 1).collect()
    }

    #[getter]
    fn k(&self) -> usize {
        self.fit.labels().k()
    }

    /// Pooled within-cluster covariance of the fit, as rows.
    fn estimate_covariance(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(inference::estimate_covariance(&self.x, &self.fit.labels()).map_err(py_err)?.to_rows())
    }

    /// Test `feature` for clusters `pair`. Without `sigma` the pooled
    /// within-cluster covariance is used.
    #[pyo3(signature = (feature, pair = (1, 2), sigma = None))]
    fn test(&self, feature: usize, pair: (usize, usize), sigma: Option<Vec<Vec<f64>>>) -> PyResult<PyTestReport> {
        let (sigma, source) = match sigma {
            Some(rows) => (FeatureCovariance::from_rows(&rows).map_err(py_err)?, SigmaSource::Supplied),
            None => (
                inference::estimate_covariance(&self.x, &self.fit.labels()).map_err(py_err)?,
                SigmaSource::Estimated,
            ),
        };
        let pair = (zero_based(pair.0, "cluster")?, zero_based(pair.1, "cluster")?);
        let feature = zero_based(feature, "feature")?;
        inference::test_fitted(&self.x, &sigma, &self.fit, &self.method, pair, feature, source)
            .map(PyTestReport)
            .map_err(py_err)
    }
}

/// Conditional two-sided p-value of `statistic` under `N(0, sd^2)`
/// truncated to the union of `intervals`.
#[pyfunction]
fn selective_p(statistic: f64, sd: f64, intervals: Vec<(f64, f64)>) -> PyResult<f64> {
    inference::selective_p(statistic, sd, &union_from(intervals)).map_err(py_err)
}

#[pyfunction]
fn naive_p(statistic: f64, sd: f64) -> f64 {
    inference::naive_p(statistic, sd)
}

/// Benjamini-Hochberg adjusted p-values in input order.
#[pyfunction]
fn bh_adjust(pvalues: Vec<f64>) -> PyResult<Vec<f64>> {
    inference::bh_adjust(&pvalues).map_err(py_err)
}

type Preprocessed = (Vec<Vec<f64>>, Vec<usize>, Vec<usize>);

/// Returns `(rows, kept_rows, kept_columns)` with zero-based indices.
#[pyfunction]
#[pyo3(signature = (counts, min_total = 1.0, top_k = 500))]
fn preprocess_counts(counts: Vec<Vec<f64>>, min_total: f64, top_k: usize) -> PyResult<Preprocessed> {
    let p = preprocess::preprocess_counts(&counts, min_total, top_k).map_err(py_err)?;
    Ok((p.rows, p.kept_rows, p.kept_columns))
}

/// Run a simulation campaign from a JSON configuration; returns the summary
/// as JSON.
#[pyfunction]
fn simulate(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg: SimConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let summary = py
        .detach(|| match cfg.design {
            Design::NullTwoCluster => {
                sim::run_type1(&cfg).and_then(|rows| Ok(serde_json::to_string(&sim::summarize_type1(&rows, cfg.alpha))?))
            }
            Design::ThreeClusterPower => sim::run_power(&cfg).and_then(|(s, _)| Ok(serde_json::to_string(&s)?)),
        })
        .map_err(py_err)?;
    Ok(summary)
}

#[pymodule]
pub fn clustertest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClustering>()?;
    m.add_class::<PyTestReport>()?;
    m.add_function(wrap_pyfunction!(selective_p, m)?)?;
    m.add_function(wrap_pyfunction!(naive_p, m)?)?;
    m.add_function(wrap_pyfunction!(bh_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_counts, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
