use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::pack::FeaturePack;

pub const DEFAULT_K: usize = 1000;

/// L2-normalized train features, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    rows: usize,
    dim: usize,
    normalized: Vec<f64>,
    k: usize,
}

/// `h / ‖h‖₂`, or `None` for a zero vector.
pub fn l2_normalize(h: &[f64]) -> Option<Vec<f64>> {
    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(h.iter().map(|x| x / norm).collect())
}

impl KnnIndex {
    pub fn from_parts(rows: usize, dim: usize, normalized: Vec<f64>, k: usize) -> Result<Self> {
        if normalized.len() != rows * dim {
            return Err(Error::Shape(format!("knn index holds {} values, expected {rows}×{dim}", normalized.len())));
        }
        if k == 0 || k > rows {
            return Err(Error::InvalidArgument(format!("K = {k} must lie in 1..={rows}")));
        }
        Ok(KnnIndex { rows, dim, normalized, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.normalized[i * self.dim..(i + 1) * self.dim]
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }
}

pub fn fit_knn(train: &FeaturePack, k: usize) -> Result<KnnIndex> {
    knn_from_matrix(&train.feature_matrix()?, k)
}

pub(crate) fn knn_from_matrix(x: &DMatrix<f64>, k: usize) -> Result<KnnIndex> {
    let (n, d) = x.shape();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("K = {k} must lie in 1..={n}")));
    }
    let mut normalized = Vec::with_capacity(n * d);
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let z = l2_normalize(&row).ok_or(Error::ZeroNorm { what: "train feature", row: i })?;
        normalized.extend(z);
    }
    KnnIndex::from_parts(n, d, normalized, k)
}
