//! Dense, literal oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn ridge_system(x: &DMatrix<f64>, lambda: f64) -> nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let p = x.ncols();
    (x.tr_mul(x) + DMatrix::identity(p, p) * lambda).lu()
}

/// `b̂ + Σ_{j=1..k} λ^j (X'X + λI)^{-j} b̂`, by repeated solves.
pub fn naive_debias(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, k: usize) -> DVector<f64> {
    let lu = ridge_system(x, lambda);
    let ridge = lu
        .solve(&x.tr_mul(y))
        .expect("ridge system is positive definite");
    let mut term = ridge.clone();
    let mut total = ridge;
    for _ in 0..k {
        term = lu.solve(&term).expect("ridge system is positive definite") * lambda;
        total += &term;
    }
    total
}

/// `β − E b̂_k`, where `E b̂_k` is the estimator applied to the noise-free response.
pub fn dense_bias(x: &DMatrix<f64>, beta: &DVector<f64>, lambda: f64, k: usize) -> DVector<f64> {
    beta - naive_debias(x, &(x * beta), lambda, k)
}

/// `β − X'(XX')⁻¹Xβ` for a full-row-rank wide design.
pub fn row_space_complement(x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let gram = x * x.transpose();
    let coef = gram.lu().solve(&(x * beta)).expect("full row rank");
    beta - x.tr_mul(&coef)
}

/// The linear map `A_k` with `b̂_k = A_k y`, built column by column.
pub fn dense_operator(x: &DMatrix<f64>, lambda: f64, k: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let mut a = DMatrix::zeros(x.ncols(), n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        a.set_column(i, &naive_debias(x, &e, lambda, k));
    }
    a
}

/// `‖bias‖² + σ² tr(A_k A_k')`.
pub fn dense_mse(x: &DMatrix<f64>, beta: &DVector<f64>, lambda: f64, sigma: f64, k: usize) -> f64 {
    let a = dense_operator(x, lambda, k);
    dense_bias(x, beta, lambda, k).norm_squared() + sigma * sigma * a.norm_squared()
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Prints the one-line verdict used by the acceptance target.
/// Written to the raw stdout handle so the line shows even when output is captured.
pub fn verdict(id: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let line = format!(
        "criterion {id}: {} | {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}
