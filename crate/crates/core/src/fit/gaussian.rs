use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{class_means, global_gaussian, regularized_precision, shared_covariance};
use crate::pack::FeaturePack;

/// Class-conditional Gaussian with shared covariance, plus the label-free
/// global Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    /// C×d.
    pub class_means: DMatrix<f64>,
    pub class_counts: Vec<usize>,
    pub total: usize,
    pub shared_cov: DMatrix<f64>,
    pub shared_precision: DMatrix<f64>,
    /// Ridge added before inverting `shared_cov` (0 if none).
    pub shared_lambda: f64,
    pub global_mean: DVector<f64>,
    pub global_cov: DMatrix<f64>,
    pub global_precision: DMatrix<f64>,
    pub global_lambda: f64,
}

pub fn fit_gaussian(train: &FeaturePack, jitter_scale: f64) -> Result<GaussianStats> {
    let labels = train
        .labels
        .as_deref()
        .ok_or_else(|| Error::InvalidPack("train pack requires labels".into()))?;
    let x = train.feature_matrix()?;
    gaussian_from_matrix(&x, labels, train.num_classes, jitter_scale)
}

pub(crate) fn gaussian_from_matrix(
    x: &DMatrix<f64>,
    labels: &[usize],
    num_classes: usize,
    jitter_scale: f64,
) -> Result<GaussianStats> {
    let (means, counts) = class_means(x, labels, num_classes)?;
    let shared_cov = shared_covariance(x, labels, &means)?;
    let shared = regularized_precision(&shared_cov, jitter_scale)?;
    let (global_mean, global_cov) = global_gaussian(x)?;
    let global = regularized_precision(&global_cov, jitter_scale)?;
    Ok(GaussianStats {
        class_means: means,
        class_counts: counts,
        total: x.nrows(),
        shared_cov,
        shared_precision: shared.matrix,
        shared_lambda: shared.lambda,
        global_mean,
        global_cov,
        global_precision: global.matrix,
        global_lambda: global.lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pack::Role;
    use crate::synth::{synth_pack, SynthSpec};
    use crate::tensor::Tensor;

    fn pack(values: Vec<f64>, d: usize, labels: Vec<usize>, c: usize) -> FeaturePack {
        FeaturePack {
            features: Tensor::from_f64(vec![labels.len(), d], values).unwrap(),
            logits: None,
            labels: Some(labels),
            num_classes: c,
            role: Role::Train,
        }
    }

    #[test]
    fn single_class_shared_equals_global() {
        let p = pack(vec![1.0, 2.0, 3.0, 5.0, -1.0, 0.5, 2.0, 2.0], 2, vec![0; 4], 1);
        let g = fit_gaussian(&p, 1e-6).unwrap();
        assert_eq!(g.shared_cov, g.global_cov);
        assert_eq!(g.shared_precision, g.global_precision);
        assert_eq!(g.class_means.row(0).transpose(), g.global_mean);
        assert_eq!(g.class_counts, vec![4]);
        assert_eq!(g.total, 4);
    }

    #[test]
    fn singleton_classes_need_jitter() {
        let p = pack(vec![0.0, 0.0, 2.0, 0.0], 2, vec![0, 1], 2);
        let g = fit_gaussian(&p, 1e-6).unwrap();
        assert!(g.shared_cov.iter().all(|&v| v == 0.0));
        assert!(g.shared_lambda > 0.0);
        assert!(g.shared_precision.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn missing_labels_rejected() {
        let mut p = pack(vec![0.0, 1.0], 2, vec![0], 1);
        p.labels = None;
        assert!(fit_gaussian(&p, 1e-6).is_err());
    }

    #[test]
    fn estimated_means_within_three_standard_errors() {
        let spec = SynthSpec {
            num_classes: 4,
            dim: 6,
            per_class: 400,
            separation: 5.0,
            within_std: 1.5,
            ood_shift: 0.0,
            seed: 42,
        };
        let packs = synth_pack(&spec).unwrap();
        let g = fit_gaussian(&packs.train, 1e-6).unwrap();
        let truth = spec.class_means();
        let bound = 3.0 * spec.within_std / (spec.per_class as f64).sqrt();
        let mut violations = 0;
        for c in 0..4 {
            for j in 0..6 {
                if (g.class_means[(c, j)] - truth[(c, j)]).abs() > bound {
                    violations += 1;
                }
            }
        }
        // 24 coordinates at a 3σ bound: allow at most one excursion
        assert!(violations <= 1, "{violations} coordinates outside 3σ/√N_c");
    }
}
