//! Numerical kernels shared by the detectors.
//!
//! All reductions run in a fixed sequential index order and accumulate in
//! f64, so repeated fits of the same data are bit-identical.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Per-class means (C×d) and class counts.
pub fn class_means(
    features: &DMatrix<f64>,
    labels: &[usize],
    num_classes: usize,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if labels.len() != features.nrows() {
        return Err(Error::Shape(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.nrows()
        )));
    }
    let d = features.ncols();
    let mut sums = DMatrix::<f64>::zeros(num_classes, d);
    let mut counts = vec![0usize; num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::InvalidArgument(format!("label {y} at row {i} >= {num_classes}")));
        }
        counts[y] += 1;
        for j in 0..d {
            sums[(y, j)] += features[(i, j)];
        }
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    for (c, &n) in counts.iter().enumerate() {
        let inv = n as f64;
        for j in 0..d {
            sums[(c, j)] /= inv;
        }
    }
    Ok((sums, counts))
}

/// Adds `dev devᵀ` into the upper triangle of `acc`.
fn accumulate_outer(acc: &mut DMatrix<f64>, dev: &[f64]) {
    let d = dev.len();
    for i in 0..d {
        let di = dev[i];
        for j in i..d {
            acc[(i, j)] += di * dev[j];
        }
    }
}

fn mirror_upper(acc: &mut DMatrix<f64>) {
    let d = acc.nrows();
    for i in 0..d {
        for j in 0..i {
            acc[(i, j)] = acc[(j, i)];
        }
    }
}

/// Pooled within-class covariance with 1/N normalization.
pub fn shared_covariance(
    features: &DMatrix<f64>,
    labels: &[usize],
    means: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n, d) = features.shape();
    if labels.len() != n || means.ncols() != d {
        return Err(Error::Shape("features, labels and means disagree".into()));
    }
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut dev = vec![0.0; d];
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..d {
            dev[j] = features[(i, j)] - means[(y, j)];
        }
        accumulate_outer(&mut acc, &dev);
    }
    mirror_upper(&mut acc);
    Ok(acc / n as f64)
}

/// `XᵀX` accumulated row by row in index order.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut row = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            row[j] = x[(i, j)];
        }
        accumulate_outer(&mut acc, &row);
    }
    mirror_upper(&mut acc);
    acc
}

/// Label-free mean and covariance (1/N normalization).
pub fn global_gaussian(features: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = features.shape();
    if n == 0 {
        return Err(Error::Empty("global gaussian needs at least one row".into()));
    }
    let mut mean = DVector::<f64>::zeros(d);
    for i in 0..n {
        for j in 0..d {
            mean[j] += features[(i, j)];
        }
    }
    mean /= n as f64;
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut dev = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            dev[j] = features[(i, j)] - mean[j];
        }
        accumulate_outer(&mut acc, &dev);
    }
    mirror_upper(&mut acc);
    Ok((mean, acc / n as f64))
}

/// Single-pass mean/co-moment accumulator (Welford), mergeable with
/// Chan's pairwise update.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    count: usize,
    mean: Vec<f64>,
    comoment: DMatrix<f64>,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        CovarianceAccumulator { count: 0, mean: vec![0.0; dim], comoment: DMatrix::zeros(dim, dim) }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len(), "sample dimension mismatch");
        self.count += 1;
        let n = self.count as f64;
        let before: Vec<f64> = x.iter().zip(&self.mean).map(|(xi, mi)| xi - mi).collect();
        for (m, delta) in self.mean.iter_mut().zip(&before) {
            *m += delta / n;
        }
        let after: Vec<f64> = x.iter().zip(&self.mean).map(|(xi, mi)| xi - mi).collect();
        let d = self.mean.len();
        for i in 0..d {
            for j in i..d {
                self.comoment[(i, j)] += before[i] * after[j];
            }
        }
    }

    /// Folds `other` into `self`; callers merge partitions in index order.
    pub fn merge(&mut self, other: &CovarianceAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let d = self.mean.len();
        for i in 0..d {
            for j in i..d {
                self.comoment[(i, j)] += other.comoment[(i, j)] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nb / n;
        }
        self.count += other.count;
    }

    pub fn mean(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    /// Symmetric co-moment matrix Σ (x - mean)(x - mean)ᵀ.
    pub fn comoment(&self) -> DMatrix<f64> {
        let mut m = self.comoment.clone();
        mirror_upper(&mut m);
        m
    }

    /// Covariance with 1/N normalization.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.comoment() / self.count.max(1) as f64
    }
}

/// Streaming shared covariance: one accumulator per class.
pub fn streaming_shared_covariance(
    features: &DMatrix<f64>,
    labels: &[usize],
    num_classes: usize,
) -> Result<DMatrix<f64>> {
    let (n, d) = features.shape();
    let mut accs = vec![CovarianceAccumulator::new(d); num_classes];
    let mut row = vec![0.0; d];
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..d {
            row[j] = features[(i, j)];
        }
        accs.get_mut(y)
            .ok_or_else(|| Error::InvalidArgument(format!("label {y} at row {i} >= {num_classes}")))?
            .push(&row);
    }
    let mut total = DMatrix::<f64>::zeros(d, d);
    for acc in &accs {
        total += acc.comoment();
    }
    Ok(total / n.max(1) as f64)
}

/// Inverse covariance together with the ridge that made it invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct Precision {
    pub matrix: DMatrix<f64>,
    pub lambda: f64,
}

pub const DEFAULT_JITTER_SCALE: f64 = 1e-6;
const JITTER_ESCALATIONS: usize = 4;

/// Residual bound for accepting an inverse; rounding can let Cholesky
/// succeed on a numerically singular matrix.
const INVERSE_RESIDUAL: f64 = 1e-8;

fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = m.clone().cholesky()?;
    let inv = chol.inverse();
    if !inv.iter().all(|x| x.is_finite()) {
        return None;
    }
    let inv = (&inv + inv.transpose()) * 0.5;
    let d = m.nrows();
    let residual = (m * &inv - DMatrix::<f64>::identity(d, d)).amax();
    (residual <= INVERSE_RESIDUAL).then_some(inv)
}

/// Cholesky-based inverse with escalating diagonal jitter.
///
/// The first ridge is `jitter_scale · trace/d` (or `jitter_scale` when the
/// trace is zero); it grows ×10 up to four times.
pub fn regularized_precision(cov: &DMatrix<f64>, jitter_scale: f64) -> Result<Precision> {
    let d = cov.nrows();
    if d == 0 || cov.ncols() != d {
        return Err(Error::Shape(format!("covariance must be square, got {:?}", cov.shape())));
    }
    if !(jitter_scale > 0.0 && jitter_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("jitter scale {jitter_scale} must be positive")));
    }
    check_symmetric(cov)?;
    if let Some(matrix) = spd_inverse(cov) {
        return Ok(Precision { matrix, lambda: 0.0 });
    }
    let mean_diag = cov.trace() / d as f64;
    let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut lambda = jitter_scale * base;
    for attempt in 0..=JITTER_ESCALATIONS {
        if attempt > 0 {
            lambda *= 10.0;
        }
        let shifted = cov + DMatrix::<f64>::identity(d, d) * lambda;
        if let Some(matrix) = spd_inverse(&shifted) {
            log::debug!("covariance regularized with lambda = {lambda:e}");
            return Ok(Precision { matrix, lambda });
        }
    }
    Err(Error::Singular(lambda))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if worst > 1e-8 * scale || !worst.is_finite() {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

/// Top-k eigenpairs of a symmetric matrix, eigenvalues non-increasing.
///
/// Each eigenvector is flipped so its largest-magnitude component (first
/// one on ties) is positive.
pub fn sym_eig_topk(m: &DMatrix<f64>, k: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::Shape(format!("matrix must be square, got {:?}", m.shape())));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={d}")));
    }
    check_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut values = Vec::with_capacity(k);
    let mut vectors = DMatrix::<f64>::zeros(d, k);
    for (out, &idx) in order.iter().take(k).enumerate() {
        values.push(eig.eigenvalues[idx]);
        let col = eig.eigenvectors.column(idx);
        let mut pivot = 0;
        for i in 1..d {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            vectors[(i, out)] = sign * col[i];
        }
    }
    Ok((values, vectors))
}

/// Reconstruction slack, in units of `max(m, n) · σ_max · ε`, before an
/// SVD is distrusted.
const SVD_RECONSTRUCTION_SLACK: f64 = 1e3;

/// Moore-Penrose pseudo-inverse with the usual `max(m, n) · σ_max · ε`
/// cutoff.
///
/// nalgebra's SVD can return factors that do not reproduce an exactly
/// rank-deficient input; when `UΣVᵀ` misses `A`, the pseudo-inverse is
/// rebuilt from the symmetric eigendecomposition of `[[0, A], [Aᵀ, 0]]`,
/// whose eigenpairs are `±σᵢ` with vectors `(uᵢ, ±vᵢ)/√2`.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let tol = rows.max(cols) as f64 * sigma_max * f64::EPSILON;
    if let (Some(u), Some(v_t)) = (&svd.u, &svd.v_t) {
        let recon = u * DMatrix::from_diagonal(&svd.singular_values) * v_t;
        if (recon - m).amax() <= SVD_RECONSTRUCTION_SLACK * tol.max(f64::MIN_POSITIVE) {
            if let Ok(p) = svd.pseudo_inverse(tol) {
                return p;
            }
        }
    }
    log::debug!("SVD of a {rows}x{cols} matrix failed its reconstruction check; using the augmented eigenproblem");
    augmented_pinv(m, tol)
}

fn augmented_pinv(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let mut aug = DMatrix::<f64>::zeros(rows + cols, rows + cols);
    aug.view_mut((0, rows), (rows, cols)).copy_from(m);
    aug.view_mut((rows, 0), (cols, rows)).copy_from(&m.transpose());
    let eig = SymmetricEigen::new(aug);
    let mut p = DMatrix::<f64>::zeros(cols, rows);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > tol {
            let x = eig.eigenvectors.column(i);
            let (u, v) = (x.rows(0, rows), x.rows(rows, cols));
            p += v * u.transpose() * (2.0 / lambda);
        }
    }
    p
}

/// `ceil(q·n)` clamped to `1..=n`, tolerant of representation error in q
/// (0.95·20 must give 19, not 20).
pub fn nearest_rank(q: f64, n: usize) -> usize {
    let x = q * n as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) { r } else { x.ceil() };
    (k as usize).clamp(1, n.max(1))
}

/// k-th smallest value with `k = ceil(q·M)`.
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of an empty set".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("percentile q = {q} outside (0, 1]")));
    }
    let k = nearest_rank(q, values.len());
    let mut scratch = values.to_vec();
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

/// `log Σ exp(o_c)` with the max subtracted first.
pub fn log_sum_exp(o: &[f64]) -> f64 {
    let max = o.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = o.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn stable_softmax(o: &[f64]) -> Vec<f64> {
    let max = o.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = o.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
