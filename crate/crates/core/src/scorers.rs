//! Per-sample OOD scores. Every score is larger for in-distribution inputs.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::knn::l2_normalize;
use crate::fit::{CosineConcepts, DetectorState, GaussianStats, KlTemplates, KnnIndex, ReactParams, VimParams};
use crate::linalg::{log_sum_exp, stable_softmax};
use crate::method::Method;
use crate::pack::{validate_pack, ClassifierHead, FeaturePack, ScoreSet};

pub fn score_msp(o: &[f64]) -> f64 {
    stable_softmax(o).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

pub fn score_maxlogit(o: &[f64]) -> f64 {
    o.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn score_energy(o: &[f64]) -> f64 {
    log_sum_exp(o)
}

/// `KL[p‖d]` with `0·ln 0 = 0`, clamped at 0 against rounding when
/// `p ≈ d` and some entry is within an ulp of 1.
pub fn kl_divergence(p: &[f64], d: &[f64]) -> f64 {
    let kl: f64 = p.iter().zip(d).map(|(&pi, &di)| if pi > 0.0 { pi * (pi / di).ln() } else { 0.0 }).sum();
    kl.max(0.0)
}

pub fn score_kl_matching(o: &[f64], kl: &KlTemplates) -> Result<f64> {
    let p = stable_softmax(o);
    let best = kl
        .present_rows()
        .map(|c| {
            let template: Vec<f64> = kl.templates.row(c).iter().copied().collect();
            kl_divergence(&p, &template)
        })
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        .ok_or_else(|| Error::Degenerate("no KL template is present".into()))?;
    Ok(-best)
}

/// Negative K-th smallest distance from the normalized `h` to the index.
pub fn score_knn(h: &[f64], knn: &KnnIndex) -> Result<f64> {
    if h.len() != knn.dim() {
        return Err(Error::Shape(format!("feature dimension {} vs index {}", h.len(), knn.dim())));
    }
    let z = l2_normalize(h).ok_or(Error::ZeroNorm { what: "test feature", row: 0 })?;
    let mut dists: Vec<f64> = (0..knn.len())
        .map(|i| knn.row(i).iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    let k = knn.k();
    let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(-*kth)
}

/// Squared Mahalanobis distances computed in whitened coordinates:
/// with `P = LLᵀ`, `(h−μ)ᵀP(h−μ) = ‖Lᵀh − Lᵀμ‖²`.
#[derive(Debug, Clone)]
pub struct Whitener {
    lt: DMatrix<f64>,
    centers: Vec<DVector<f64>>,
}

impl Whitener {
    pub fn new(precision: &DMatrix<f64>, centers: impl IntoIterator<Item = DVector<f64>>) -> Result<Self> {
        let chol = precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Degenerate("precision matrix is not positive definite".into()))?;
        let lt = chol.l().transpose();
        let centers = centers.into_iter().map(|c| &lt * c).collect();
        Ok(Whitener { lt, centers })
    }

    pub fn whiten(&self, h: &[f64]) -> DVector<f64> {
        &self.lt * DVector::from_column_slice(h)
    }

    /// Smallest squared distance from an already whitened point.
    pub fn min_distance(&self, z: &DVector<f64>) -> f64 {
        self.centers
            .iter()
            .map(|c| z.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Prepared class-conditional and global whiteners.
#[derive(Debug, Clone)]
pub struct MahalanobisModel {
    class: Whitener,
    global: Whitener,
}

impl MahalanobisModel {
    pub fn new(g: &GaussianStats) -> Result<Self> {
        let class = Whitener::new(
            &g.shared_precision,
            (0..g.class_means.nrows()).map(|c| g.class_means.row(c).transpose()),
        )?;
        let global = Whitener::new(&g.global_precision, std::iter::once(g.global_mean.clone()))?;
        Ok(MahalanobisModel { class, global })
    }

    pub fn class_distance(&self, h: &[f64]) -> f64 {
        self.class.min_distance(&self.class.whiten(h))
    }

    pub fn global_distance(&self, h: &[f64]) -> f64 {
        self.global.min_distance(&self.global.whiten(h))
    }
}

pub fn score_mahalanobis(h: &[f64], model: &MahalanobisModel) -> f64 {
    -model.class_distance(h)
}

/// The global term does not depend on the class, so the min over classes
/// only touches the class term.
pub fn score_rel_mahalanobis(h: &[f64], model: &MahalanobisModel) -> f64 {
    -(model.class_distance(h) - model.global_distance(h))
}

/// Energy of the logits of the truncated features `min(h, r)`.
pub fn score_react_energy(h: &[f64], react: &ReactParams, head: &ClassifierHead) -> f64 {
    let truncated: Vec<f64> = h.iter().map(|&x| x.min(react.threshold)).collect();
    log_sum_exp(&head.apply(&truncated))
}

/// Negative softmax probability of the virtual logit `α‖residual‖`.
pub fn score_vim(h: &[f64], o: &[f64], vim: &VimParams) -> f64 {
    let virtual_logit = vim.alpha * vim.residual(h).norm();
    let max = o.iter().copied().fold(virtual_logit, f64::max);
    let denom: f64 = o.iter().map(|x| (x - max).exp()).sum::<f64>() + (virtual_logit - max).exp();
    -(virtual_logit - max).exp() / denom
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CosineMode {
    /// True cosine similarity.
    #[default]
    Normalized,
    /// Only the concept vector is normalized.
    Verbatim,
}

pub fn score_cosine(h: &[f64], cosine: &CosineConcepts, mode: CosineMode) -> Result<f64> {
    let h_norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = match mode {
        CosineMode::Normalized => {
            if h_norm == 0.0 {
                return Err(Error::ZeroNorm { what: "test feature", row: 0 });
            }
            h_norm
        }
        CosineMode::Verbatim => 1.0,
    };
    let best = (0..cosine.concepts.nrows())
        .map(|c| {
            let u = cosine.concepts.row(c);
            let dot: f64 = u.iter().zip(h).map(|(a, b)| a * b).sum();
            dot / (u.norm() * scale)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreOptions {
    pub cosine_mode: CosineMode,
}

enum Kernel<'a> {
    Msp,
    MaxLogit,
    Energy,
    Kl(&'a KlTemplates),
    Knn(&'a KnnIndex),
    Mahalanobis(MahalanobisModel),
    RelMahalanobis(MahalanobisModel),
    React(&'a ReactParams, &'a ClassifierHead),
    Vim(&'a VimParams),
    Cosine(&'a CosineConcepts, CosineMode),
}

/// A method bound to the statistics it reads.
pub struct Scorer<'a> {
    method: Method,
    kernel: Kernel<'a>,
}

fn missing(method: Method, what: &str) -> Error {
    Error::MissingStatistic { method: method.to_string(), missing: what.to_string() }
}

impl<'a> Scorer<'a> {
    pub fn new(state: &'a DetectorState, method: Method, opts: ScoreOptions) -> Result<Self> {
        let kernel = match method {
            Method::Msp => Kernel::Msp,
            Method::MaxLogit => Kernel::MaxLogit,
            Method::Energy => Kernel::Energy,
            Method::KlMatching => Kernel::Kl(state.kl.as_ref().ok_or_else(|| missing(method, "KL templates"))?),
            Method::Knn => Kernel::Knn(state.knn.as_ref().ok_or_else(|| missing(method, "a KNN index"))?),
            Method::Mahalanobis | Method::RelMahalanobis => {
                let g = state.gaussian.as_ref().ok_or_else(|| missing(method, "Gaussian statistics"))?;
                let model = MahalanobisModel::new(g)?;
                if method == Method::Mahalanobis {
                    Kernel::Mahalanobis(model)
                } else {
                    Kernel::RelMahalanobis(model)
                }
            }
            Method::ReactEnergy => Kernel::React(
                state.react.as_ref().ok_or_else(|| missing(method, "a ReAct threshold"))?,
                &state.head,
            ),
            Method::Vim => Kernel::Vim(state.vim.as_ref().ok_or_else(|| missing(method, "ViM parameters"))?),
            Method::Cosine => Kernel::Cosine(
                state.cosine.as_ref().ok_or_else(|| missing(method, "concept vectors"))?,
                opts.cosine_mode,
            ),
        };
        Ok(Scorer { method, kernel })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn needs_logits(&self) -> bool {
        matches!(self.kernel, Kernel::Msp | Kernel::MaxLogit | Kernel::Energy | Kernel::Kl(_) | Kernel::Vim(_))
    }

    /// Scores one sample; `o` may be empty when logits are not needed.
    pub fn score_row(&self, h: &[f64], o: &[f64]) -> Result<f64> {
        Ok(match &self.kernel {
            Kernel::Msp => score_msp(o),
            Kernel::MaxLogit => score_maxlogit(o),
            Kernel::Energy => score_energy(o),
            Kernel::Kl(kl) => score_kl_matching(o, kl)?,
            Kernel::Knn(knn) => score_knn(h, knn)?,
            Kernel::Mahalanobis(m) => score_mahalanobis(h, m),
            Kernel::RelMahalanobis(m) => score_rel_mahalanobis(h, m),
            Kernel::React(r, head) => score_react_energy(h, r, head),
            Kernel::Vim(v) => score_vim(h, o, v),
            Kernel::Cosine(c, mode) => score_cosine(h, c, *mode)?,
        })
    }
}

/// Checks the documented range of each method's scores.
pub fn check_score_range(method: Method, values: &[f64], num_classes: usize, opts: ScoreOptions) -> Result<()> {
    const EPS: f64 = 1e-12;
    for (i, &s) in values.iter().enumerate() {
        let ok = s.is_finite()
            && match method {
                Method::Msp => s >= 1.0 / num_classes as f64 - EPS && s <= 1.0 + EPS,
                Method::KlMatching | Method::Knn | Method::Mahalanobis => s <= 0.0,
                Method::Vim => (-1.0..0.0).contains(&s),
                Method::Cosine if opts.cosine_mode == CosineMode::Normalized => s.abs() <= 1.0 + EPS,
                _ => true,
            };
        if !ok {
            return Err(Error::Degenerate(format!("{method} score {s} at row {i} violates its range")));
        }
    }
    Ok(())
}

/// Scores every row of `pack`; output order is input order and does not
/// depend on how rows are split across threads.
pub fn score_pack(pack: &FeaturePack, state: &DetectorState, method: Method, opts: ScoreOptions) -> Result<ScoreSet> {
    validate_pack(pack).into_result()?;
    if pack.dim() != state.head.feature_dim() {
        return Err(Error::Shape(format!(
            "pack has feature dimension {} but the state expects {}",
            pack.dim(),
            state.head.feature_dim()
        )));
    }
    let scorer = Scorer::new(state, method, opts)?;
    let features = pack.feature_matrix()?;
    let logits = if scorer.needs_logits() { Some(pack.resolve_logits(Some(&state.head))?) } else { None };
    if let Some(l) = &logits {
        if l.ncols() != state.head.num_classes() {
            return Err(Error::Shape(format!(
                "logits have {} columns but the state has {} classes",
                l.ncols(),
                state.head.num_classes()
            )));
        }
    }
    let values = (0..pack.len())
        .into_par_iter()
        .map(|i| {
            let h: Vec<f64> = features.row(i).iter().copied().collect();
            let o: Vec<f64> = logits.as_ref().map(|l| l.row(i).iter().copied().collect()).unwrap_or_default();
            scorer.score_row(&h, &o).map_err(|e| match e {
                Error::ZeroNorm { what, .. } => Error::ZeroNorm { what, row: i },
                other => other,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    check_score_range(method, &values, state.head.num_classes(), opts)?;
    Ok(ScoreSet { method, values, source_role: pack.role.clone(), state_hash: state.hash().to_string() })
}
