//! Weighted and ordinary least-squares solves shared by every solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Rank tolerance: the smallest singular value must exceed 1e6 * eps times
/// the largest or the system is treated as degenerate.
const RANK_TOL: f64 = 1e6 * f64::EPSILON;

/// Options for a weighted solve. `ridge` adds 1e3 * eps * trace(Gram)/d to
/// the diagonal of the Gram matrix (as augmented rows), which keeps
/// near-degenerate real-data subsets solvable without hiding genuinely empty
/// ones.
#[derive(Debug, Clone, Copy, Default)]
pub struct LstsqOptions {
    pub ridge: bool,
}

/// Minimizer of ||W^(1/2) (y - X beta)||^2 via a QR factorization of the
/// row-scaled system; never forms an explicit inverse.
///
/// Weights must be nonnegative. Degeneracy is judged on the singular values
/// of the triangular factor: sigma_min < 1e6 * eps * sigma_max fails with
/// [`Error::DegenerateSystem`] carrying `context`.
pub fn wls_with(
    x: &DMatrix<f64>,
    w: &[f64],
    y: &DVector<f64>,
    opts: LstsqOptions,
    context: &str,
) -> Result<DVector<f64>> {
    let n = x.nrows();
    let d = x.ncols();
    assert_eq!(w.len(), n, "one weight per row");
    assert_eq!(y.len(), n, "one response per row");

    // Row-scale by sqrt(w). Zero-weight rows contribute nothing.
    let mut b = x.clone();
    let mut z = y.clone();
    for i in 0..n {
        let s = w[i].sqrt();
        for j in 0..d {
            b[(i, j)] *= s;
        }
        z[i] *= s;
    }

    if opts.ridge {
        // trace(Gram) = squared Frobenius norm of the scaled matrix.
        let trace: f64 = b.iter().map(|v| v * v).sum();
        let lambda = (1e3 * f64::EPSILON * trace / d as f64).sqrt();
        b = b.insert_rows(n, d, 0.0);
        z = z.insert_rows(n, d, 0.0);
        for j in 0..d {
            b[(n + j, j)] = lambda;
        }
    }

    if b.nrows() < d {
        return Err(Error::DegenerateSystem {
            context: context.to_owned(),
            ratio: 0.0,
        });
    }

    let qr = b.qr();
    let r = qr.r();
    // Singular values of R equal those of the scaled system; the d x d SVD
    // is cheap compared to the QR above.
    let svd = r.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= RANK_TOL * smax || smax == 0.0 {
        return Err(Error::DegenerateSystem {
            context: context.to_owned(),
            ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        });
    }
    let rhs = qr.q().transpose() * z;
    let beta = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::Parse(format!("svd solve: {e}")))?;
    Ok(beta)
}

/// Weighted least squares with default options.
pub fn wls(x: &DMatrix<f64>, w: &[f64], y: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    wls_with(x, w, y, LstsqOptions::default(), context)
}

/// Ordinary least squares: unit-weight [`wls`].
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    wls_with(x, &vec![1.0; x.nrows()], y, LstsqOptions::default(), context)
}

pub fn ols_with(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    opts: LstsqOptions,
    context: &str,
) -> Result<DVector<f64>> {
    wls_with(x, &vec![1.0; x.nrows()], y, opts, context)
}

/// Gather the rows of `x` and `y` at `idx`.
pub fn take_rows(x: &DMatrix<f64>, y: &DVector<f64>, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let d = x.ncols();
    let sub_x = DMatrix::from_fn(idx.len(), d, |i, j| x[(idx[i], j)]);
    let sub_y = DVector::from_fn(idx.len(), |i, _| y[idx[i]]);
    (sub_x, sub_y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn randn_matrix(n: usize, d: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
    }

    /// Independent oracle: minimize the weighted objective by plain gradient
    /// descent with a power-iteration step bound. Never touches the QR path.
    fn gd_minimizer(x: &DMatrix<f64>, w: &[f64], y: &DVector<f64>) -> DVector<f64> {
        let d = x.ncols();
        let apply = |v: &DVector<f64>| -> DVector<f64> {
            // X^T W X v without forming the Gram matrix.
            let xv = x * v;
            let wxv = DVector::from_fn(x.nrows(), |i, _| w[i] * xv[i]);
            x.transpose() * wxv
        };
        // Largest eigenvalue of X^T W X by power iteration.
        let mut v = DVector::from_element(d, 1.0 / (d as f64).sqrt());
        let mut lmax = 1.0;
        for _ in 0..200 {
            let av = apply(&v);
            lmax = av.norm();
            v = av / lmax;
        }
        let step = 1.0 / (2.0 * lmax);
        let wy = DVector::from_fn(x.nrows(), |i, _| w[i] * y[i]);
        let xtwy = x.transpose() * wy;
        let mut beta = DVector::zeros(d);
        for _ in 0..200_000 {
            let grad = apply(&beta) - &xtwy;
            if grad.norm() < 1e-12 {
                break;
            }
            beta -= step * grad;
        }
        beta
    }

    #[test]
    fn unit_weights_on_invertible_square_system() {
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![5.0, 10.0]);
        let beta = wls(&x, &[1.0, 1.0], &y, "test").unwrap();
        let expected = x.clone().lu().solve(&y).unwrap();
        assert!((beta - expected).norm() < 1e-12);
    }

    #[test]
    fn zero_weight_row_drops_out() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let beta = wls(&x, &[1.0, 1.0, 0.0], &y, "test").unwrap();
        assert!((beta[0] - 1.0).abs() < 1e-12);
        assert!((beta[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matches_independent_gradient_descent_minimizer() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = randn_matrix(50, 5, &mut rng);
        let y = DVector::from_fn(50, |_, _| rng.sample(StandardNormal));
        let w: Vec<f64> = (0..50).map(|_| rng.gen_range(0.05..2.0)).collect();
        let beta = wls(&x, &w, &y, "test").unwrap();
        let oracle = gd_minimizer(&x, &w, &y);
        assert!(
            (beta - oracle).norm() < 1e-6,
            "QR and GD minimizers disagree"
        );
    }

    #[test]
    fn identity_design_returns_y() {
        let x = DMatrix::identity(4, 4);
        let y = DVector::from_vec(vec![3.0, -1.0, 0.5, 2.0]);
        let beta = ols(&x, &y, "test").unwrap();
        assert!((beta - y).norm() < 1e-12);
    }

    #[test]
    fn duplicate_rows_are_degenerate() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        match ols(&x, &y, "round 3") {
            Err(Error::DegenerateSystem { context, .. }) => assert_eq!(context, "round 3"),
            other => panic!("expected DegenerateSystem, got {other:?}"),
        }
    }

    #[test]
    fn ridge_rescues_degenerate_system() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let beta = ols_with(&x, &y, LstsqOptions { ridge: true }, "test").unwrap();
        // The ridge solution still reproduces the (consistent) observations.
        let pred = &x * &beta;
        assert!((pred[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn weight_rescaling_leaves_solution_unchanged() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x = randn_matrix(30, 4, &mut rng);
        let y = DVector::from_fn(30, |_, _| rng.sample(StandardNormal));
        let w: Vec<f64> = (0..30).map(|_| rng.gen_range(0.1..3.0)).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * 17.5).collect();
        let a = wls(&x, &w, &y, "test").unwrap();
        let b = wls(&x, &scaled, &y, "test").unwrap();
        assert!((a - b).norm() < 1e-10);
    }

    #[test]
    fn binary_weights_equal_subset_ols() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let x = randn_matrix(20, 3, &mut rng);
        let y = DVector::from_fn(20, |_, _| rng.sample(StandardNormal));
        let w: Vec<f64> = (0..20).map(|i| f64::from(i % 3 != 0)).collect();
        let keep: Vec<usize> = (0..20).filter(|i| i % 3 != 0).collect();
        let (xs, ys) = take_rows(&x, &y, &keep);
        let a = wls(&x, &w, &y, "test").unwrap();
        let b = ols(&xs, &ys, "test").unwrap();
        assert!((a - b).norm() < 1e-12);
    }
}
