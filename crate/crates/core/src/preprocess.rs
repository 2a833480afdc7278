//! Count-matrix preprocessing: library-size normalization, `log2(x + 1)`,
//! and selection of the most variable features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DataMatrix;

/// Every kept row is rescaled to sum to this before the log transform.
pub const ROW_SCALE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessed {
    /// Transformed values, one row per kept observation.
    pub rows: Vec<Vec<f64>>,
    /// Zero-based indices of the input rows that survived filtering.
    pub kept_rows: Vec<usize>,
    /// Zero-based input columns, most variable first.
    pub kept_columns: Vec<usize>,
}

impl Preprocessed {
    pub fn to_matrix(&self) -> Result<DataMatrix> {
        DataMatrix::from_rows(&self.rows)
    }
}

/// Unbiased sample variance; 0 for fewer than two values.
fn sample_variance(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = v.clone().sum::<f64>() / n as f64;
    v.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
}

/// Drop rows whose total is below `min_total`, scale each row to sum to
/// [`ROW_SCALE`], take `log2(x + 1)`, and keep the `top_k` columns with the
/// largest sample variance (ties to the lower column index).
pub fn preprocess_counts(raw: &[Vec<f64>], min_total: f64, top_k: usize) -> Result<Preprocessed> {
    let q = raw.first().map_or(0, Vec::len);
    if q == 0 {
        return Err(Error::invalid("count matrix has no columns"));
    }
    for (i, row) in raw.iter().enumerate() {
        if row.len() != q {
            return Err(Error::invalid(format!("row {i} has {} columns, expected {q}", row.len())));
        }
        if let Some(j) = row.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("count at ({i}, {j}) is negative or not finite")));
        }
    }
    if top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }

    let mut kept_rows = Vec::new();
    let mut scaled = Vec::new();
    for (i, row) in raw.iter().enumerate() {
        let total: f64 = row.iter().sum();
        if total <= 0.0 || total < min_total {
            continue;
        }
        kept_rows.push(i);
        scaled.push(row.iter().map(|v| (v / total * ROW_SCALE + 1.0).log2()).collect::<Vec<f64>>());
    }
    if scaled.is_empty() {
        return Err(Error::invalid("every row was filtered out"));
    }

    let variances: Vec<f64> = (0..q).map(|j| sample_variance(scaled.iter().map(move |r| r[j]))).collect();
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));
    order.truncate(top_k.min(q));

    let rows = scaled.iter().map(|r| order.iter().map(|&j| r[j]).collect()).collect();
    Ok(Preprocessed { rows, kept_rows, kept_columns: order })
}
