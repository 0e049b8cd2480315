mod common;

use nalgebra::{DMatrix, DVector};
use ridge_debias::montecarlo::{
    generate_example1, generate_example2, run_study, write_table_csv, Contrast, EstimatorSpec,
    MetricSelection, StudyResult, TableMetric,
};
use ridge_debias::tradeoff::{mse_curve, write_curve_csv};
use ridge_debias::{
    confidence_interval, covariance_debiased, debias, prediction_interval, CovarianceModel,
    LambdaRule, RidgeConfig, SpectralCache,
};

use common::*;

fn rule(s: &str) -> LambdaRule {
    s.parse().unwrap()
}

fn with_threads(threads: usize, f: impl FnOnce() -> StudyResult + Send) -> StudyResult {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn study_is_identical_across_thread_counts() {
    let design = generate_example1(8, 40, 99).unwrap();
    let est = vec![
        EstimatorSpec::debiased(rule("0.1n"), 0),
        EstimatorSpec::debiased(rule("0.1n"), 10),
    ];
    let metrics = MetricSelection {
        contrasts: vec![Contrast::unit(0)],
        interval_points: vec![design.x.row(0).iter().copied().collect()],
        ..Default::default()
    };
    let run = || run_study(&design, &est, 64, &metrics).unwrap();
    let a = with_threads(1, run);
    let b = with_threads(4, run);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let key = format!("{}/e1", est[1].label());
    let bits = |r: &StudyResult| {
        r.contrast(&key)
            .unwrap()
            .values
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn jensen_and_monte_carlo_mse_agree_with_analytic_curve() {
    let design = generate_example1(50, 100, 1234).unwrap();
    let ks = [0usize, 5, 20, 100];
    let est: Vec<_> = ks
        .iter()
        .map(|&k| EstimatorSpec::debiased(rule("0.05n"), k))
        .collect();
    let res = run_study(&design, &est, 1000, &MetricSelection::default()).unwrap();
    let curve = mse_curve(design.cache(), &design.beta, 5.0, 1.0, 100).unwrap();
    for (e, &k) in res.estimators.iter().zip(&ks) {
        let mean_sq: f64 = e.mean_error.iter().map(|m| m * m).sum();
        assert!(e.mse >= mean_sq);
        let rel = (e.mse - curve.total[k]).abs() / curve.total[k];
        assert!(
            rel < 0.05,
            "k = {k}: MC {} vs analytic {}",
            e.mse,
            curve.total[k]
        );
    }
}

#[test]
fn post_screening_beats_pre_screening_at_l_100() {
    let design = generate_example2(150, 120, 1234).unwrap();
    let pre = EstimatorSpec::debiased(rule("0.3n"), 100);
    let post = EstimatorSpec::screened(rule("0.3n"), 100, 40, None, 100);
    let res = run_study(
        &design,
        &[pre.clone(), post.clone()],
        100,
        &MetricSelection::default(),
    )
    .unwrap();
    assert!(res.estimator(&post.label()).unwrap().mse < res.estimator(&pre.label()).unwrap().mse);
    let mut buf = Vec::new();
    write_table_csv(&mut buf, &[res], TableMetric::Mse).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("150,120,"));
}

#[test]
fn plain_ridge_contrasts_are_visibly_biased() {
    let design = generate_example1(20, 60, 11).unwrap();
    let ridge = EstimatorSpec::debiased(rule("0.3n"), 0);
    let metrics = MetricSelection {
        contrasts: vec![Contrast::unit(0)],
        ..Default::default()
    };
    let res = run_study(&design, std::slice::from_ref(&ridge), 300, &metrics).unwrap();
    let s = res.contrast(&format!("{}/e1", ridge.label())).unwrap();
    assert!(s.mean().abs() > 4.0 * s.mean_se());
}

#[test]
fn covariance_matches_dense_operator() {
    let mut g = rng(21);
    let x = gaussian_matrix(&mut g, 8, 5);
    let cache = SpectralCache::new(x.clone(), DVector::zeros(8), 1e-12).unwrap();
    for k in [0, 3] {
        let a = dense_operator(&x, 2.0, k);
        let sigma = 1.7;
        let dense = &a * a.transpose() * (sigma * sigma);
        let got =
            covariance_debiased(&cache, 2.0, k, &CovarianceModel::Homoskedastic { sigma }).unwrap();
        assert!((got - &dense).amax() < 1e-10);

        let variances: Vec<f64> = (0..8).map(|i| 0.5 + i as f64 * 0.25).collect();
        let dense_diag =
            &a * DMatrix::from_diagonal(&DVector::from_vec(variances.clone())) * a.transpose();
        let got =
            covariance_debiased(&cache, 2.0, k, &CovarianceModel::Diagonal { variances }).unwrap();
        assert!((got - dense_diag).amax() < 1e-10);
    }
}

#[test]
fn intervals_use_fit_sigma_and_nest() {
    let mut g = rng(22);
    let x = gaussian_matrix(&mut g, 30, 4);
    let y = &x * DVector::from_vec(vec![1.0, -1.0, 0.5, 2.0]) + gaussian_vector(&mut g, 30);
    let cache = SpectralCache::new(x, y, 1e-12).unwrap();
    let fit = debias(&cache, &RidgeConfig::fixed(3.0, 20)).unwrap();
    let x0 = DVector::from_vec(vec![0.3, 0.1, -0.2, 1.0]);
    let ci = confidence_interval(&fit, &cache, &x0, 0.9, &CovarianceModel::from_fit(&fit)).unwrap();
    let pi = prediction_interval(&fit, &cache, &x0, 0.9).unwrap();
    assert_eq!(ci.point, pi.point);
    assert!(pi.lower < ci.lower && ci.upper < pi.upper);
    assert!((pi.se.powi(2) - ci.se.powi(2) - fit.sigma_hat.powi(2)).abs() < 1e-12);
}

#[test]
fn tradeoff_curve_csv_round_trip() {
    let mut g = rng(23);
    let x = gaussian_matrix(&mut g, 25, 6);
    let beta = gaussian_vector(&mut g, 6);
    let cache = SpectralCache::new(x, DVector::zeros(25), 1e-12).unwrap();
    let curve = mse_curve(&cache, &beta, 5.0, 1.0, 40).unwrap();
    let mut buf = Vec::new();
    write_curve_csv(&mut buf, &curve).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), curve.total.len());
    let total: f64 = rows[7][3].parse().unwrap();
    assert_eq!(total, curve.total[7]);
}
