use nalgebra::{DMatrix, DVector};

/// Thin SVD `x = u * diag(s) * v'` with singular values sorted in descending order.
///
/// `u` is n×m, `s` has length m and `v` is p×m, where m = min(n, p).
pub(crate) fn thin_svd(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let m = order.len();
    let mut u_sorted = DMatrix::zeros(x.nrows(), m);
    let mut v_sorted = DMatrix::zeros(x.ncols(), m);
    let mut s_sorted = DVector::zeros(m);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &v_t.row(src).transpose());
        s_sorted[dst] = s[src];
    }
    (u_sorted, s_sorted, v_sorted)
}

/// Number of singular values strictly above `rel_tol * s[0]`.
pub(crate) fn numerical_rank(s: &DVector<f64>, rel_tol: f64) -> usize {
    match s.iter().next() {
        Some(&top) if top > 0.0 => s.iter().take_while(|&&v| v > rel_tol * top).count(),
        _ => 0,
    }
}

pub(crate) fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_is_sorted_and_reconstructs() {
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0, 2.0, 2.0, 2.0, 0.0, 1.0, -4.0],
        );
        let (u, s, v) = thin_svd(&x);
        assert!(s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        let back = &u * DMatrix::from_diagonal(&s) * v.transpose();
        assert!((back - x).abs().max() < 1e-12);
    }

    #[test]
    fn wide_matrix_svd() {
        let x = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 2.0, 1.0, 0.0, 3.0, 1.0, -1.0]);
        let (u, s, v) = thin_svd(&x);
        assert_eq!((u.shape(), s.len(), v.shape()), ((2, 2), 2, (4, 2)));
        let back = &u * DMatrix::from_diagonal(&s) * v.transpose();
        assert!((back - x).abs().max() < 1e-12);
    }
}
