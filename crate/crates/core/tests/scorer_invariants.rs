use nalgebra::{DMatrix, DVector};
use oodkit_core::fit::{fit_all, fit_react, fit_vim, FitConfig, KlTemplates};
use oodkit_core::linalg::stable_softmax;
use oodkit_core::pack::{ClassifierHead, FeaturePack, Role};
use oodkit_core::scorers::{
    score_energy, score_kl_matching, score_mahalanobis, score_maxlogit, score_msp, score_pack, MahalanobisModel,
    ScoreOptions, Scorer,
};
use oodkit_core::synth::{synth_pack, SynthSpec};
use oodkit_core::{Method, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn config(seed: u64) -> Config {
    Config { cases: 128, rng_seed: RngSeed::Fixed(seed), failure_persistence: None, ..Config::default() }
}

fn logits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 1..12)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_pack(rng: &mut ChaCha8Rng, rows: usize, dim: usize, classes: usize) -> FeaturePack {
    let x = gaussian_matrix(rng, rows, dim);
    let values: Vec<f64> = x.transpose().iter().copied().collect();
    FeaturePack {
        features: Tensor::from_f64(vec![rows, dim], values).unwrap(),
        logits: None,
        labels: Some((0..rows).map(|i| i % classes).collect()),
        num_classes: classes,
        role: Role::Train,
    }
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
fn rotation(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, d, d).qr().q()
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

proptest! {
    #![proptest_config(config(1))]

    #[test]
    fn energy_shifts_with_logits(o in logits(), a in -50.0f64..50.0) {
        let shifted: Vec<f64> = o.iter().map(|x| x + a).collect();
        let lhs = score_energy(&shifted);
        let rhs = score_energy(&o) + a;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn msp_and_kl_ignore_uniform_shift(o in logits(), a in -50.0f64..50.0, t in logits()) {
        let shifted: Vec<f64> = o.iter().map(|x| x + a).collect();
        prop_assert!((score_msp(&shifted) - score_msp(&o)).abs() <= 1e-12);
        let c = o.len();
        let template: Vec<f64> = stable_softmax(&t.iter().cycle().take(c).copied().collect::<Vec<_>>());
        let kl = KlTemplates::new(DMatrix::from_row_slice(1, c, &template), vec![true]).unwrap();
        let a0 = score_kl_matching(&o, &kl).unwrap();
        let a1 = score_kl_matching(&shifted, &kl).unwrap();
        prop_assert!((a0 - a1).abs() <= 1e-9 * a0.abs().max(1.0));
        prop_assert!(a0 <= 0.0);
    }

    #[test]
    fn maxlogit_and_msp_ignore_permutation(o in logits(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..o.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let permuted: Vec<f64> = perm.iter().map(|&i| o[i]).collect();
        prop_assert_eq!(score_maxlogit(&permuted), score_maxlogit(&o));
        prop_assert!((score_msp(&permuted) - score_msp(&o)).abs() <= 1e-15);
    }
}

proptest! {
    #![proptest_config(Config { cases: 100, rng_seed: RngSeed::Fixed(2), failure_persistence: None, ..Config::default() })]

    #[test]
    fn vim_residual_is_orthogonal_to_basis(seed in any::<u64>(), d in 3usize..9, c in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian_matrix(&mut rng, 40, d);
        let head = ClassifierHead::new(gaussian_matrix(&mut rng, d, c), DVector::from_fn(c, |_, _| StandardNormal.sample(&mut rng))).unwrap();
        let logits = oodkit_core::pack::logits_from_features(&x, &head).unwrap();
        let vim = match fit_vim(&x, &logits, &head, Some(d / 2)) {
            Ok(v) => v,
            // α ≤ 0 is reported rather than fitted
            Err(_) => return Ok(()),
        };
        let h: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = vim.residual(&h);
        let proj = vim.basis.transpose() * &r;
        prop_assert!(proj.amax() <= 1e-6, "projection {}", proj.amax());
    }

    #[test]
    fn react_clips_at_most_one_percent(seed in any::<u64>(), rows in 10usize..200, d in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pack = random_pack(&mut rng, rows, d, 1);
        let r = fit_react(&pack).unwrap().threshold;
        let values = pack.features.to_f64_vec();
        let above = values.iter().filter(|&&v| v > r).count();
        prop_assert!(above as f64 <= 0.01 * values.len() as f64);
    }

    #[test]
    fn mahalanobis_is_rotation_equivariant(seed in any::<u64>(), d in 2usize..7, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 30 * c;
        let train = random_pack(&mut rng, n, d, c);
        let x = train.feature_matrix().unwrap();
        let q = rotation(&mut rng, d);
        let xr = &x * q.transpose();
        let rotated = FeaturePack {
            features: Tensor::from_f64(vec![n, d], xr.transpose().iter().copied().collect()).unwrap(),
            ..train.clone()
        };
        let g0 = oodkit_core::fit::fit_gaussian(&train, 1e-6).unwrap();
        let g1 = oodkit_core::fit::fit_gaussian(&rotated, 1e-6).unwrap();
        let (m0, m1) = (MahalanobisModel::new(&g0).unwrap(), MahalanobisModel::new(&g1).unwrap());
        let probes = gaussian_matrix(&mut rng, 5, d) * 2.0;
        for (h, hr) in rows_of(&probes).iter().zip(rows_of(&(&probes * q.transpose())).iter()) {
            let (a, b) = (score_mahalanobis(h, &m0), score_mahalanobis(hr, &m1));
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

/// Direct evaluation of both quadratic forms with explicit inverses.
fn brute_rel_mahalanobis(h: &DVector<f64>, g: &oodkit_core::fit::GaussianStats) -> (f64, f64) {
    let p = g.shared_cov.clone().try_inverse().unwrap();
    let pg = g.global_cov.clone().try_inverse().unwrap();
    let class = (0..g.class_means.nrows())
        .map(|c| {
            let diff = h - g.class_means.row(c).transpose();
            (diff.transpose() * &p * &diff)[(0, 0)]
        })
        .fold(f64::INFINITY, f64::min);
    let diff = h - &g.global_mean;
    let global = (diff.transpose() * &pg * &diff)[(0, 0)];
    (-class, -(class - global))
}

#[test]
fn mahalanobis_matches_explicit_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..50 {
        let (d, c) = (2 + trial % 5, 1 + trial % 3);
        let train = random_pack(&mut rng, 40 * c, d, c);
        let g = oodkit_core::fit::fit_gaussian(&train, 1e-6).unwrap();
        assert_eq!(g.shared_lambda, 0.0);
        let model = MahalanobisModel::new(&g).unwrap();
        for _ in 0..5 {
            let h = DVector::from_fn(d, |_, _| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
            let (maha, rel) = brute_rel_mahalanobis(&h, &g);
            let hs: Vec<f64> = h.iter().copied().collect();
            assert!((score_mahalanobis(&hs, &model) - maha).abs() <= 1e-10 * maha.abs().max(1.0));
            let got = oodkit_core::scorers::score_rel_mahalanobis(&hs, &model);
            assert!((got - rel).abs() <= 1e-10 * rel.abs().max(1.0), "{got} vs {rel}");
        }
    }
}

fn synth_state(spec: &SynthSpec) -> (oodkit_core::synth::SynthPacks, oodkit_core::DetectorState) {
    let packs = synth_pack(spec).unwrap();
    let config = FitConfig { knn_k: 10, ..FitConfig::default() };
    let outcome = fit_all(&packs.train, &spec.head().unwrap(), &config).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    (packs, outcome.state)
}

#[test]
fn batch_scores_equal_row_scores() {
    let spec = SynthSpec { num_classes: 4, dim: 6, per_class: 25, separation: 4.0, within_std: 1.0, ood_shift: 3.0, seed: 5 };
    let (packs, state) = synth_state(&spec);
    let x = packs.ood.feature_matrix().unwrap();
    let logits = packs.ood.resolve_logits(Some(&state.head)).unwrap();
    for m in Method::ALL {
        let batch = score_pack(&packs.ood, &state, m, ScoreOptions::default()).unwrap();
        let again = score_pack(&packs.ood, &state, m, ScoreOptions::default()).unwrap();
        assert_eq!(batch, again);
        let scorer = Scorer::new(&state, m, ScoreOptions::default()).unwrap();
        for (i, s) in batch.values.iter().enumerate() {
            let h: Vec<f64> = x.row(i).iter().copied().collect();
            let o: Vec<f64> = logits.row(i).iter().copied().collect();
            assert_eq!(s.to_bits(), scorer.score_row(&h, &o).unwrap().to_bits(), "{m} row {i}");
        }
    }
}

#[test]
fn knn_with_k1_on_train_row_is_zero() {
    let spec = SynthSpec { num_classes: 3, dim: 5, per_class: 10, separation: 3.0, within_std: 1.0, ood_shift: 0.0, seed: 8 };
    let packs = synth_pack(&spec).unwrap();
    let knn = oodkit_core::fit::fit_knn(&packs.train, 1).unwrap();
    let x = packs.train.feature_matrix().unwrap();
    for row in rows_of(&x) {
        assert_eq!(oodkit_core::scorers::score_knn(&row, &knn).unwrap(), 0.0);
    }
}

#[test]
fn every_method_ranks_shifted_data_lower() {
    for seed in [1, 2, 3] {
        let spec = SynthSpec { num_classes: 5, dim: 12, per_class: 80, separation: 5.0, within_std: 1.0, ood_shift: 15.0, seed };
        let (packs, state) = synth_state(&spec);
        for m in Method::ALL {
            let mean = |p: &FeaturePack| {
                let s = score_pack(p, &state, m, ScoreOptions::default()).unwrap().values;
                s.iter().sum::<f64>() / s.len() as f64
            };
            let (id, ood) = (mean(&packs.id_test), mean(&packs.ood));
            assert!(id > ood, "seed {seed}: {m} mean ID {id} vs OOD {ood}");
        }
    }
}
