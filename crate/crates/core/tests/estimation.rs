mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use ridge_debias::screening::top_magnitude;
use ridge_debias::{
    bias_oracle, debias, decompose, screen, tune, two_stage_fit, Dataset, Iterations, LambdaRule,
    RidgeConfig, SpectralCache, ValidationScheme,
};

use common::*;

#[test]
fn noise_free_recovery_matches_literal_sum() {
    let mut g = rng(1);
    let x = gaussian_matrix(&mut g, 20, 10);
    let beta = gaussian_vector(&mut g, 10);
    let y = &x * &beta;
    let cache = SpectralCache::new(x.clone(), y.clone(), 1e-12).unwrap();
    let fit = debias(&cache, &RidgeConfig::fixed(6.0, 500)).unwrap();
    assert!(max_abs_diff(&fit.beta, &beta) < 1e-8);
    assert!(max_abs_diff(&fit.beta, &naive_debias(&x, &y, 6.0, 500)) < 1e-10);
}

#[test]
fn bias_vanishes_uniformly_over_lambda_grid() {
    let mut g = rng(2);
    let (n, p) = (30, 8);
    let x = gaussian_matrix(&mut g, n, p);
    let beta = gaussian_vector(&mut g, p);
    let cache = SpectralCache::new(x, DVector::zeros(n), 1e-12).unwrap();
    for i in 0..=29 {
        let lambda = (0.05 + 0.05 * i as f64) * n as f64;
        let b = bias_oracle(&cache, &beta, lambda, 500).unwrap();
        assert!(
            b.norm() < 1e-6 * beta.norm(),
            "lambda {lambda}: {}",
            b.norm()
        );
    }
}

#[test]
fn bias_in_row_space_vanishes_for_wide_design() {
    let mut g = rng(3);
    let x = gaussian_matrix(&mut g, 10, 25);
    let cache = SpectralCache::new(x.clone(), DVector::zeros(10), 1e-12).unwrap();
    let beta = x.tr_mul(&gaussian_vector(&mut g, 10));
    assert!(bias_oracle(&cache, &beta, 1.0, 200).unwrap().amax() < 1e-10);
}

/// p = 40, n = 20, three strong signals, no noise.
fn sparse_instance() -> (DMatrix<f64>, DVector<f64>) {
    let mut g = rng(4);
    let x = gaussian_matrix(&mut g, 20, 40);
    let mut beta = DVector::zeros(40);
    beta[3] = 2.5;
    beta[17] = -3.0;
    beta[31] = 2.0;
    (x, beta)
}

#[test]
fn screening_keeps_true_support() {
    let (x, beta) = sparse_instance();
    let y = &x * &beta;
    let cache = SpectralCache::new(x, y, 1e-12).unwrap();
    let sel = screen(&cache, 2.0, Iterations::Fixed(100), 8).unwrap();
    for j in [3, 17, 31] {
        assert!(
            sel.indices.contains(&j),
            "{j} missing from {:?}",
            sel.indices
        );
    }
    assert!(sel.supports_inference());
}

#[test]
fn restricted_fit_recovers_and_scatters() {
    let (x, beta) = sparse_instance();
    let y = &x * &beta;
    let cache = SpectralCache::new(x, y, 1e-12).unwrap();
    let sel = screen(&cache, 2.0, Iterations::Fixed(100), 8).unwrap();
    let beta_r = sel.restrict(&beta).unwrap();
    let b = bias_oracle(&sel.restricted_cache, &beta_r, 2.0, 500).unwrap();
    assert!(b.amax() < 1e-8);

    let two = two_stage_fit(&sel, &RidgeConfig::fixed(2.0, 500)).unwrap();
    assert!(max_abs_diff(two.beta_restricted(), &beta_r) < 1e-8);
    for j in 0..40 {
        if !sel.indices.contains(&j) {
            assert_eq!(two.beta_full[j], 0.0);
        }
    }
    let ridge_only = two_stage_fit(&sel, &RidgeConfig::fixed(2.0, 0)).unwrap();
    let xr = sel.restricted_cache.x().clone();
    assert!(
        max_abs_diff(
            ridge_only.beta_restricted(),
            &naive_debias(&xr, sel.restricted_cache.y(), 2.0, 0)
        ) < 1e-10
    );
}

#[test]
fn selection_invariant_to_positive_rescaling() {
    let (x, beta) = sparse_instance();
    let mut g = rng(5);
    let y = &x * &beta + gaussian_vector(&mut g, 20);
    let a = SpectralCache::new(x.clone(), y.clone(), 1e-12).unwrap();
    let b = SpectralCache::new(x, y * 7.5, 1e-12).unwrap();
    let sa = screen(&a, 2.0, Iterations::Fixed(100), 8).unwrap();
    let sb = screen(&b, 2.0, Iterations::Fixed(100), 8).unwrap();
    assert_eq!(sa.ranked, sb.ranked);
}

/// Literal K-fold score: dense stage-one solve, selection, dense restricted ridge.
fn brute_force_cv(d: &Dataset, lambda: LambdaRule, n_star: usize, folds: usize, k: usize) -> f64 {
    let n = d.n();
    let mut sse = 0.0;
    for f in 0..folds {
        let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
        let train: Vec<usize> = (0..lo).chain(hi..n).collect();
        let xt = d.x().select_rows(&train);
        let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| d.y()[i]));
        let xm = xt.row_mean();
        let ym = yt.mean();
        let xc = DMatrix::from_fn(xt.nrows(), xt.ncols(), |i, j| xt[(i, j)] - xm[j]);
        let yc = yt.add_scalar(-ym);
        let lam = lambda.resolve(train.len());
        let stage1 = naive_debias(&xc, &yc, lam, k);
        let mut cols = top_magnitude(&stage1, n_star);
        cols.sort_unstable();
        let xr = xc.select_columns(&cols);
        let beta = naive_debias(&xr, &yc, lam, 0);
        for i in lo..hi {
            let pred: f64 = cols
                .iter()
                .zip(beta.iter())
                .map(|(&j, b)| (d.x()[(i, j)] - xm[j]) * b)
                .sum();
            sse += (d.y()[i] - ym - pred).powi(2);
        }
    }
    sse / n as f64
}

#[test]
fn tune_matches_brute_force_cross_validation() {
    let mut g = rng(6);
    let (n, p) = (100, 60);
    let x = gaussian_matrix(&mut g, n, p);
    let mut beta = DVector::zeros(p);
    beta[0] = 4.0;
    beta[10] = -3.5;
    beta[20] = 3.0;
    let y = &x * &beta + gaussian_vector(&mut g, n);
    let d = Dataset::new(x, y, None).unwrap();
    let grid: Vec<LambdaRule> = ["0.1n", "0.5n"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let stars = [2, 8, 30];
    let res = tune(
        &d,
        &grid,
        &stars,
        ValidationScheme::KFold(5),
        Iterations::Fixed(10),
        1e-12,
    )
    .unwrap();
    let mut best = (f64::INFINITY, 0, 0.0);
    for s in &res.scores {
        let oracle = brute_force_cv(&d, s.lambda, s.n_star, 5, 10);
        let got = s.score.unwrap();
        assert!(
            (got - oracle).abs() < 1e-8 * oracle.max(1.0),
            "{got} vs {oracle}"
        );
        if oracle < best.0 {
            best = (oracle, s.n_star, s.lambda.resolve(n));
        }
    }
    assert_eq!((res.n_star, res.lambda_star_value), (best.1, best.2));
    assert!(res.n_star >= 3);
}

#[test]
fn tune_flags_near_tie_on_zero_response() {
    let mut g = rng(7);
    let d = Dataset::new(gaussian_matrix(&mut g, 40, 10), DVector::zeros(40), None).unwrap();
    let grid: Vec<LambdaRule> = ["0.3n", "0.1n"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let res = tune(
        &d,
        &grid,
        &[4],
        ValidationScheme::Holdout(0.25),
        Iterations::Fixed(5),
        1e-12,
    )
    .unwrap();
    assert!(res.near_tie);
    assert_eq!(res.best_score, 0.0);
    assert_eq!(res.lambda_star.to_string(), "0.1n");
}

#[test]
fn decompose_requires_centered_data() {
    let d = Dataset::new(
        DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 4.0]),
        DVector::from_row_slice(&[1.0, 0.0, 2.0]),
        None,
    )
    .unwrap();
    assert!(decompose(&d, 1e-12).is_err());
    let c = d.center().unwrap();
    let cache = decompose(&c, 1e-12).unwrap();
    assert_eq!(cache.rank(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bias_oracle_matches_dense_power(seed in 0u64..10_000, n in 3usize..15, p in 1usize..12, k in 0usize..30, scale in 0.05f64..1.5) {
        let mut g = rng(seed);
        let x = gaussian_matrix(&mut g, n, p);
        let beta = gaussian_vector(&mut g, p);
        let lambda = scale * n as f64;
        let cache = SpectralCache::new(x.clone(), DVector::zeros(n), 1e-12).unwrap();
        let b = bias_oracle(&cache, &beta, lambda, k).unwrap();
        prop_assert!(max_abs_diff(&b, &dense_bias(&x, &beta, lambda, k)) < 1e-9);
    }

    #[test]
    fn bias_norm_non_increasing(seed in 0u64..10_000, k in 0usize..100) {
        let mut g = rng(seed);
        let x = gaussian_matrix(&mut g, 12, 5);
        let beta = gaussian_vector(&mut g, 5);
        let cache = SpectralCache::new(x, DVector::zeros(12), 1e-12).unwrap();
        let a = bias_oracle(&cache, &beta, 3.0, k).unwrap().norm();
        let b = bias_oracle(&cache, &beta, 3.0, k + 1).unwrap().norm();
        prop_assert!(b <= a + 1e-14);
    }
}
