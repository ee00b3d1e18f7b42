use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{gram, pinv, sym_eig_topk};
use crate::pack::ClassifierHead;

/// Offset, principal basis and virtual-logit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct VimParams {
    /// `u = −(Wᵀ)⁺ b`, length d.
    pub offset: DVector<f64>,
    /// d×D orthonormal basis of the principal space.
    pub basis: DMatrix<f64>,
    pub alpha: f64,
}

impl VimParams {
    pub fn principal_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `h̃ − RRᵀh̃` with `h̃ = h − u`.
    pub fn residual(&self, h: &[f64]) -> DVector<f64> {
        let centered = DVector::from_iterator(h.len(), h.iter().zip(self.offset.iter()).map(|(x, u)| x - u));
        let coords = self.basis.tr_mul(&centered);
        centered - &self.basis * coords
    }
}

/// D = 1000 for d ≥ 2048, 512 for 768 ≤ d < 2048, else d/2 rounded half
/// to even (at least 1).
pub fn principal_dim_for(d: usize) -> usize {
    if d >= 2048 {
        1000
    } else if d >= 768 {
        512
    } else {
        ((d as f64 / 2.0).round_ties_even() as usize).max(1)
    }
}

/// `−(Wᵀ)⁺ b`.
pub fn vim_offset(head: &ClassifierHead) -> DVector<f64> {
    -(pinv(&head.weight().transpose()) * head.bias())
}

/// Fits ViM on train features (N×d) and their logits (N×C).
pub fn fit_vim(
    features: &DMatrix<f64>,
    logits: &DMatrix<f64>,
    head: &ClassifierHead,
    principal_dim: Option<usize>,
) -> Result<VimParams> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::InvalidArgument("ViM needs at least two train rows".into()));
    }
    if logits.nrows() != n {
        return Err(Error::Shape(format!("{} logit rows for {n} feature rows", logits.nrows())));
    }
    if head.feature_dim() != d {
        return Err(Error::Shape(format!("head expects dimension {}, features have {d}", head.feature_dim())));
    }
    let dim = principal_dim.unwrap_or_else(|| principal_dim_for(d));
    if dim == 0 || dim >= d {
        return Err(Error::InvalidArgument(format!(
            "principal dimension {dim} must lie in 1..{d} (exclusive of d)"
        )));
    }
    let offset = vim_offset(head);
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        for (x, u) in row.iter_mut().zip(offset.iter()) {
            *x -= u;
        }
    }
    let (_, basis) = sym_eig_topk(&gram(&centered), dim)?;
    let mut params = VimParams { offset, basis, alpha: 1.0 };

    let mut residual_sum = 0.0;
    let mut max_logit_sum = 0.0;
    for i in 0..n {
        let h: Vec<f64> = features.row(i).iter().copied().collect();
        residual_sum += params.residual(&h).norm();
        max_logit_sum += logits.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    if residual_sum == 0.0 {
        return Err(Error::DegenerateResiduals);
    }
    let alpha = max_logit_sum / residual_sum;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Degenerate(format!(
            "virtual-logit scale {alpha} is not positive (sum of max logits {max_logit_sum})"
        )));
    }
    params.alpha = alpha;
    Ok(params)
}
