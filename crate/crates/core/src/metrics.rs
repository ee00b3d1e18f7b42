//! FPR at a fixed TPR, AUROC and failed-unit-test counts.
//!
//! An input is accepted as in-distribution when its score is `≥ τ`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::nearest_rank;
use crate::pack::ScoreSet;

pub const DEFAULT_TPR: f64 = 0.95;
pub const DEFAULT_FAIL_THRESHOLD: f64 = 0.10;

fn check_scores(what: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty(format!("{what} scores")));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("TPR target {q} outside (0, 1]")))
    }
}

/// The k-th largest ID score, `k = ceil(q·N)`.
pub fn threshold_at_tpr(id_scores: &[f64], q: f64) -> Result<f64> {
    check_scores("ID", id_scores)?;
    check_q(q)?;
    let k = nearest_rank(q, id_scores.len());
    let mut scratch = id_scores.to_vec();
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Ok(*kth)
}

/// Fraction of `scores` accepted at threshold `tau`.
pub fn acceptance_rate(scores: &[f64], tau: f64) -> f64 {
    scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct FprAtTpr {
    pub tau: f64,
    /// Per-class FPR, in input order.
    pub per_class: Vec<(String, f64)>,
    pub mean_fpr: f64,
}

/// One shared threshold from the ID scores; FPR per OOD class and its mean.
pub fn fpr_at_tpr(id_scores: &[f64], ood_by_class: &[(String, Vec<f64>)], q: f64) -> Result<FprAtTpr> {
    let tau = threshold_at_tpr(id_scores, q)?;
    if ood_by_class.is_empty() {
        return Err(Error::Empty("no OOD classes".into()));
    }
    let mut per_class = Vec::with_capacity(ood_by_class.len());
    for (name, scores) in ood_by_class {
        check_scores(&format!("OOD class `{name}`"), scores)?;
        per_class.push((name.clone(), acceptance_rate(scores, tau)));
    }
    let mean_fpr = per_class.iter().map(|(_, f)| f).sum::<f64>() / per_class.len() as f64;
    Ok(FprAtTpr { tau, per_class, mean_fpr })
}

/// Probability that a random ID score beats a random OOD score, ties
/// counting one half. Average ranks are kept doubled so the rank sum is an
/// exact integer.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores("ID", id_scores)?;
    check_scores("OOD", ood_scores)?;
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j share the average (i+1+j)/2
        let doubled = (i + 1 + j) as u128;
        let id_in_group = all[i..j].iter().filter(|e| e.1).count() as u128;
        doubled_rank_sum += doubled * id_in_group;
        i = j;
    }
    let n_id = id_scores.len() as u128;
    let n_ood = ood_scores.len() as u128;
    let doubled_u = doubled_rank_sum - n_id * (n_id + 1);
    Ok(doubled_u as f64 / (2 * n_id * n_ood) as f64)
}

/// Classes whose FPR reaches `fail_threshold` (inclusive).
pub fn count_failed_unit_tests(per_class_fpr: &[f64], fail_threshold: f64) -> usize {
    per_class_fpr.iter().filter(|&&f| f >= fail_threshold).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AucPooling {
    /// Mean of the per-class AUROCs.
    #[default]
    PerClass,
    /// One AUROC over all OOD scores together.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub fpr: f64,
    pub auroc: f64,
    pub n_ood: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub tau: f64,
    pub tpr_target: f64,
    pub per_class: BTreeMap<String, ClassResult>,
    pub mean_fpr: f64,
    pub mean_auroc: f64,
    pub n_failed: usize,
    pub fail_threshold: f64,
    pub auc_pooling: AucPooling,
}

/// Raw-score evaluation; `ood_by_class` names must be unique.
pub fn evaluate_scores(
    id_scores: &[f64],
    ood_by_class: &[(String, Vec<f64>)],
    q: f64,
    fail_threshold: f64,
    pooling: AucPooling,
) -> Result<EvalResult> {
    if !(0.0..=1.0).contains(&fail_threshold) {
        return Err(Error::InvalidArgument(format!("fail threshold {fail_threshold} outside [0, 1]")));
    }
    let fpr = fpr_at_tpr(id_scores, ood_by_class, q)?;
    let mut per_class = BTreeMap::new();
    let mut auroc_sum = 0.0;
    for ((name, scores), (_, class_fpr)) in ood_by_class.iter().zip(&fpr.per_class) {
        let a = auroc(id_scores, scores)?;
        auroc_sum += a;
        let entry = ClassResult { fpr: *class_fpr, auroc: a, n_ood: scores.len() };
        if per_class.insert(name.clone(), entry).is_some() {
            return Err(Error::InvalidArgument(format!("OOD class `{name}` given twice")));
        }
    }
    let mean_auroc = match pooling {
        AucPooling::PerClass => auroc_sum / ood_by_class.len() as f64,
        AucPooling::Pooled => {
            let pooled: Vec<f64> = ood_by_class.iter().flat_map(|(_, s)| s.iter().copied()).collect();
            auroc(id_scores, &pooled)?
        }
    };
    let fprs: Vec<f64> = fpr.per_class.iter().map(|(_, f)| *f).collect();
    Ok(EvalResult {
        tau: fpr.tau,
        tpr_target: q,
        per_class,
        mean_fpr: fpr.mean_fpr,
        mean_auroc,
        n_failed: count_failed_unit_tests(&fprs, fail_threshold),
        fail_threshold,
        auc_pooling: pooling,
    })
}

/// Evaluates score sets after checking they come from one method and one
/// detector state.
pub fn evaluate(
    id: &ScoreSet,
    ood: &[(String, ScoreSet)],
    q: f64,
    fail_threshold: f64,
    pooling: AucPooling,
) -> Result<EvalResult> {
    for (name, s) in ood {
        if s.state_hash != id.state_hash {
            return Err(Error::Provenance(format!(
                "OOD scores `{name}` come from state {} but the ID scores from {}",
                s.state_hash, id.state_hash
            )));
        }
        if s.method != id.method {
            return Err(Error::Provenance(format!(
                "OOD scores `{name}` use {} but the ID scores use {}",
                s.method, id.method
            )));
        }
    }
    let classes: Vec<(String, Vec<f64>)> = ood.iter().map(|(n, s)| (n.clone(), s.values.clone())).collect();
    evaluate_scores(&id.values, &classes, q, fail_threshold, pooling)
}
