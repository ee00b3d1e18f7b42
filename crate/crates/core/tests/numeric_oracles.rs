use nalgebra::DMatrix;
use oodkit_core::linalg::{
    class_means, pinv, regularized_precision, shared_covariance, streaming_shared_covariance, sym_eig_topk,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn config(seed: u64) -> Config {
    Config { cases: 100, rng_seed: RngSeed::Fixed(seed), failure_persistence: None, ..Config::default() }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Textbook two-pass pooled covariance.
fn two_pass(x: &DMatrix<f64>, labels: &[usize], c: usize) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mut sums = vec![vec![0.0; d]; c];
    let mut counts = vec![0usize; c];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for j in 0..d {
            sums[y][j] += x[(i, j)];
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for (i, &y) in labels.iter().enumerate() {
        for a in 0..d {
            for b in 0..d {
                let ma = sums[y][a] / counts[y] as f64;
                let mb = sums[y][b] / counts[y] as f64;
                cov[(a, b)] += (x[(i, a)] - ma) * (x[(i, b)] - mb);
            }
        }
    }
    cov / n as f64
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(config(7))]

    #[test]
    fn streaming_covariance_matches_two_pass(seed in any::<u64>(), d in 1usize..8, c in 1usize..5, offset in -1e3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = c * rng.random_range(2..40);
        let x = gaussian(&mut rng, n, d).add_scalar(offset);
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let oracle = two_pass(&x, &labels, c);
        let streaming = streaming_shared_covariance(&x, &labels, c).unwrap();
        prop_assert!(rel_err(&streaming, &oracle) <= 1e-8, "{}", rel_err(&streaming, &oracle));
        let (means, _) = class_means(&x, &labels, c).unwrap();
        let batch = shared_covariance(&x, &labels, &means).unwrap();
        prop_assert!(rel_err(&batch, &oracle) <= 1e-8);
    }

    #[test]
    fn regularized_precision_inverts(seed in any::<u64>(), d in 1usize..10, rank_drop in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = d.saturating_sub(rank_drop).max(1);
        let a = gaussian(&mut rng, d, rank);
        let cov = &a * a.transpose() + DMatrix::identity(d, d) * if rank == d { 0.5 } else { 0.0 };
        let p = regularized_precision(&cov, 1e-6).unwrap();
        let shifted = &cov + DMatrix::identity(d, d) * p.lambda;
        let err = (&shifted * &p.matrix - DMatrix::<f64>::identity(d, d)).amax();
        prop_assert!(err <= 1e-6, "lambda {} err {err}", p.lambda);
        if rank < d {
            prop_assert!(p.lambda > 0.0);
        }
    }

    #[test]
    fn pinv_satisfies_penrose_conditions(seed in any::<u64>(), m in 1usize..8, n in 1usize..8, r in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = r.min(m).min(n);
        let a = gaussian(&mut rng, m, r) * gaussian(&mut rng, r, n);
        let p = pinv(&a);
        let tol = 1e-6 * a.amax().max(1.0);
        prop_assert!((&a * &p * &a - &a).amax() <= tol);
        prop_assert!((&p * &a * &p - &p).amax() <= 1e-6 * p.amax().max(1.0));
        let ap = &a * &p;
        let pa = &p * &a;
        prop_assert!((&ap - ap.transpose()).amax() <= 1e-6);
        prop_assert!((&pa - pa.transpose()).amax() <= 1e-6);
    }

    #[test]
    fn eigendecomposition_reconstructs(seed in any::<u64>(), d in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(&mut rng, d, d);
        let m = &a + a.transpose();
        let (values, vectors) = sym_eig_topk(&m, d).unwrap();
        prop_assert!(values.windows(2).all(|w| w[0] >= w[1]));
        let recon = &vectors * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(values)) * vectors.transpose();
        prop_assert!((&recon - &m).amax() <= 1e-6 * m.amax().max(1.0));
        let gram = vectors.transpose() * &vectors;
        prop_assert!((gram - DMatrix::<f64>::identity(d, d)).amax() <= 1e-9);
    }
}
