//! Estimation-error metrics, the failure rule and the shared stopping
//! criterion.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, MlrModel};

/// Component-matching error together with the failure verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub f_latent: f64,
    /// `best_permutation[k]` is the 0-based index of the estimated component
    /// matched to true component `k`.
    pub best_permutation: Vec<usize>,
    pub f_real: Option<f64>,
    pub failed: bool,
    pub threshold: f64,
}

impl MetricReport {
    /// Evaluate an estimate against known truth at noise level `sigma`.
    pub fn latent(est: &MlrModel, truth: &MlrModel, sigma: f64) -> Result<Self> {
        let (f_latent, best_permutation) = f_latent(est, truth)?;
        let threshold = failure_threshold(sigma);
        Ok(MetricReport {
            f_latent,
            best_permutation,
            f_real: None,
            failed: f_latent > threshold,
            threshold,
        })
    }
}

fn check_shapes(est: &MlrModel, truth: &MlrModel) -> Result<()> {
    if est.dim() != truth.dim() {
        return Err(Error::DimensionMismatch(format!(
            "estimate dimension {} vs truth dimension {}",
            est.dim(),
            truth.dim()
        )));
    }
    Ok(())
}

/// Pairwise distance matrix: rows are true components, columns estimated
/// ones, entries ||beta_est_j - beta_true_k||.
fn distance_matrix(est: &MlrModel, truth: &MlrModel) -> DMatrix<f64> {
    let est_betas = est.beta_vectors();
    let truth_betas = truth.beta_vectors();
    DMatrix::from_fn(truth.k(), est.k(), |k, j| (&est_betas[j] - &truth_betas[k]).norm())
}

/// Mean matched-component distance, minimized over all pairings of the K
/// estimated components with the K true ones. Exhaustive for K <= 8, optimal
/// linear assignment beyond (the two routes agree; see the tests).
pub fn f_latent(est: &MlrModel, truth: &MlrModel) -> Result<(f64, Vec<usize>)> {
    if est.k() != truth.k() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} components, truth has {}",
            est.k(),
            truth.k()
        )));
    }
    if est.k() <= 8 {
        f_latent_brute(est, truth)
    } else {
        f_latent_assignment(est, truth)
    }
}

/// Exhaustive-permutation route of [`f_latent`].
pub fn f_latent_brute(est: &MlrModel, truth: &MlrModel) -> Result<(f64, Vec<usize>)> {
    check_shapes(est, truth)?;
    let k = truth.k();
    let dist = distance_matrix(est, truth);
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    let mut best_perm = perm.clone();
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = (0..k).map(|row| dist[(row, p[row])]).sum();
        if total < best {
            best = total;
            best_perm = p.to_vec();
        }
    });
    Ok((best / k as f64, best_perm))
}

/// Linear-assignment route of [`f_latent`].
pub fn f_latent_assignment(est: &MlrModel, truth: &MlrModel) -> Result<(f64, Vec<usize>)> {
    check_shapes(est, truth)?;
    if est.k() != truth.k() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} components, truth has {}",
            est.k(),
            truth.k()
        )));
    }
    let dist = distance_matrix(est, truth);
    let (total, assignment) = solve_assignment(&dist);
    Ok((total / truth.k() as f64, assignment))
}

fn permute<F: FnMut(&[usize])>(items: &mut Vec<usize>, start: usize, visit: &mut F) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// Matching error for an overparameterized estimate (K >= K*): the best K*
/// estimated components score, the rest are ignored.
pub fn f_latent_overparam(est: &MlrModel, truth: &MlrModel) -> Result<f64> {
    if est.k() < truth.k() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} components, fewer than the {} true ones",
            est.k(),
            truth.k()
        )));
    }
    if est.k() <= 8 {
        f_latent_overparam_brute(est, truth)
    } else {
        f_latent_overparam_assignment(est, truth)
    }
}

/// Exhaustive search over injective maps from true to estimated components.
pub fn f_latent_overparam_brute(est: &MlrModel, truth: &MlrModel) -> Result<f64> {
    check_shapes(est, truth)?;
    let k_star = truth.k();
    let dist = distance_matrix(est, truth);
    let mut chosen = vec![false; est.k()];
    fn recurse(
        row: usize,
        k_star: usize,
        dist: &DMatrix<f64>,
        chosen: &mut Vec<bool>,
        acc: f64,
        best: &mut f64,
    ) {
        if row == k_star {
            *best = best.min(acc);
            return;
        }
        for j in 0..chosen.len() {
            if !chosen[j] {
                chosen[j] = true;
                recurse(row + 1, k_star, dist, chosen, acc + dist[(row, j)], best);
                chosen[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    recurse(0, k_star, &dist, &mut chosen, 0.0, &mut best);
    Ok(best / k_star as f64)
}

/// Assignment route: pad the K* x K distance matrix with zero-cost dummy
/// rows; the dummies absorb the unused estimated components.
pub fn f_latent_overparam_assignment(est: &MlrModel, truth: &MlrModel) -> Result<f64> {
    check_shapes(est, truth)?;
    if est.k() < truth.k() {
        return Err(Error::DimensionMismatch("estimate smaller than truth".into()));
    }
    let k = est.k();
    let k_star = truth.k();
    let dist = distance_matrix(est, truth);
    let padded = DMatrix::from_fn(k, k, |i, j| if i < k_star { dist[(i, j)] } else { 0.0 });
    let (total, _) = solve_assignment(&padded);
    Ok(total / k_star as f64)
}

/// Variance-normalized data fit: mean over samples of the best per-component
/// squared residual, divided by the population variance of y.
pub fn f_real(model: &MlrModel, data: &Dataset) -> Result<f64> {
    if model.dim() != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model dimension {} vs data dimension {}",
            model.dim(),
            data.dim()
        )));
    }
    let n = data.n() as f64;
    let mean = data.y.iter().sum::<f64>() / n;
    let var = data.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mean_sq = data.y.iter().map(|v| v * v).sum::<f64>() / n;
    if var <= f64::EPSILON * mean_sq.max(f64::MIN_POSITIVE) {
        return Err(Error::ZeroVariance);
    }
    let r = model.residual_matrix(&data.x, &data.y);
    let sum_min: f64 = (0..data.n())
        .map(|i| {
            (0..model.k())
                .map(|j| r[(i, j)] * r[(i, j)])
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(sum_min / n / var)
}

/// A run fails when its matching error exceeds this threshold: 2 sigma for
/// noisy data, 1e-6 in the noiseless case.
pub fn failure_threshold(sigma: f64) -> f64 {
    debug_assert!(sigma >= 0.0, "sigma must be nonnegative");
    if sigma > 0.0 {
        2.0 * sigma
    } else {
        1e-6
    }
}

/// Default stopping tolerance: min(1, max(0.01 sigma, 2 eps)).
pub fn delta_tilde(sigma: f64) -> f64 {
    (0.01 * sigma).max(2.0 * f64::EPSILON).min(1.0)
}

/// Relative model-change stopping criterion:
/// sum_k ||beta_k - beta_k_prev||^2 / sum_k ||beta_k||^2 < delta^2.
pub fn converged(prev: &MlrModel, curr: &MlrModel, delta: f64) -> Result<bool> {
    if prev.k() != curr.k() || prev.dim() != curr.dim() {
        return Err(Error::DimensionMismatch(
            "convergence check on mismatched models".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..curr.k() {
        for j in 0..curr.dim() {
            let c = curr.betas[k][j];
            let p = prev.betas[k][j];
            num += (c - p) * (c - p);
            den += c * c;
        }
    }
    if den == 0.0 {
        return Err(Error::Indeterminate);
    }
    Ok(num / den < delta * delta)
}

/// Minimum-cost assignment on a square matrix by shortest augmenting paths
/// with dual potentials. Returns the total cost and `row -> column`.
pub fn solve_assignment(cost: &DMatrix<f64>) -> (f64, Vec<usize>) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square matrix");
    if n == 0 {
        return (0.0, Vec::new());
    }
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_col = vec![0usize; n];
    for j in 1..=n {
        if col_row[j] > 0 {
            row_col[col_row[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[(i, row_col[i])]).sum();
    (total, row_col)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(betas: &[&[f64]]) -> MlrModel {
        MlrModel {
            betas: betas.iter().map(|b| b.to_vec()).collect(),
        }
    }

    #[test]
    fn identical_models_have_zero_error() {
        let m = model(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (v, perm) = f_latent(&m, &m).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(perm, vec![0, 1]);
    }

    #[test]
    fn swapped_components_have_zero_error() {
        let truth = model(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let est = model(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let (v, perm) = f_latent(&est, &truth).unwrap();
        assert!(v <= 1e-15);
        assert_eq!(perm, vec![1, 0]);
    }

    #[test]
    fn hand_computed_swap_value() {
        // Matching (0,1)->(0,1) costs sqrt(2) + sqrt(1.25); the swap costs
        // 0 + 0.5, so the minimum is 0.5/2 = 0.25.
        let truth = model(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let est = model(&[&[0.0, 1.0], &[1.0, 0.5]]);
        let (v, perm) = f_latent(&est, &truth).unwrap();
        assert!((v - 0.25).abs() < 1e-12);
        assert_eq!(perm, vec![1, 0]);
    }

    #[test]
    fn overparam_ignores_extra_components() {
        let truth = model(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let est = model(&[&[5.0, 5.0], &[0.0, 1.0], &[1.0, 0.0]]);
        let v = f_latent_overparam(&est, &truth).unwrap();
        assert!(v <= 1e-15);
    }

    #[test]
    fn overparam_equals_exact_when_k_matches() {
        let truth = model(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let est = model(&[&[1.1, 2.0], &[3.0, 3.9]]);
        let a = f_latent_overparam(&est, &truth).unwrap();
        let (b, _) = f_latent(&est, &truth).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn overparam_rejects_underparameterized_estimate() {
        let truth = model(&[&[1.0], &[2.0], &[3.0]]);
        let est = model(&[&[1.0], &[2.0]]);
        assert!(f_latent_overparam(&est, &truth).is_err());
    }

    #[test]
    fn f_real_zero_for_interpolating_model() {
        let data = crate::synth::generate_synthetic(
            &crate::model::MixtureSpec {
                k: 2,
                proportions: vec![0.6, 0.4],
                d: 3,
                sigma: 0.0,
                seed: 4,
            },
            60,
        )
        .unwrap();
        let truth = data.truth.clone().unwrap();
        let v = f_real(&truth, &data).unwrap();
        assert!(v <= 1e-20);
    }

    #[test]
    fn f_real_single_ols_equals_one_minus_r_squared() {
        let data = crate::synth::generate_synthetic(
            &crate::model::MixtureSpec {
                k: 1,
                proportions: vec![1.0],
                d: 4,
                sigma: 0.5,
                seed: 11,
            },
            200,
        )
        .unwrap();
        let beta = crate::lstsq::ols(&data.x, &data.y, "test").unwrap();
        let est = MlrModel::new(vec![beta.clone()]);
        let v = f_real(&est, &data).unwrap();
        // Independent route: 1 - R^2 with population variance.
        let n = data.n() as f64;
        let pred = &data.x * &beta;
        let mean = data.y.iter().sum::<f64>() / n;
        let ss_res: f64 = (0..data.n()).map(|i| (data.y[i] - pred[i]).powi(2)).sum();
        let ss_tot: f64 = data.y.iter().map(|v| (v - mean).powi(2)).sum();
        let r2 = 1.0 - ss_res / ss_tot;
        assert!((v - (1.0 - r2)).abs() < 1e-12);
    }

    #[test]
    fn f_real_unchanged_by_duplicate_component() {
        let data = crate::synth::generate_synthetic(
            &crate::model::MixtureSpec {
                k: 2,
                proportions: vec![0.5, 0.5],
                d: 3,
                sigma: 0.1,
                seed: 5,
            },
            100,
        )
        .unwrap();
        let truth = data.truth.clone().unwrap();
        let mut dup = truth.clone();
        dup.betas.push(dup.betas[0].clone());
        let a = f_real(&truth, &data).unwrap();
        let b = f_real(&dup, &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn f_real_rejects_constant_response() {
        let data = Dataset {
            x: DMatrix::identity(3, 3),
            y: nalgebra::DVector::from_element(3, 2.0),
            true_labels: None,
            truth: None,
            noise_sigma: None,
            corrupted_indices: None,
        };
        let m = model(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(f_real(&m, &data), Err(Error::ZeroVariance)));
    }

    #[test]
    fn failure_threshold_values() {
        assert_eq!(failure_threshold(1e-2), 2e-2);
        assert_eq!(failure_threshold(0.0), 1e-6);
        assert_eq!(failure_threshold(0.5), 1.0);
    }

    #[test]
    fn delta_tilde_at_sigma_1e2() {
        assert_eq!(delta_tilde(1e-2), 1e-4);
        assert_eq!(delta_tilde(0.0), 2.0 * f64::EPSILON);
        assert_eq!(delta_tilde(1e4), 1.0);
    }

    #[test]
    fn converged_on_identical_models() {
        let m = model(&[&[1.0, 2.0]]);
        assert!(converged(&m, &m, 1e-12).unwrap());
    }

    #[test]
    fn not_converged_at_twice_delta() {
        // Relative change of 2*delta gives ratio 4*delta^2 > delta^2.
        let delta = 1e-3;
        let prev = model(&[&[1.0]]);
        let curr = model(&[&[1.0 / (1.0 - 2.0 * delta)]]);
        assert!(!converged(&prev, &curr, delta).unwrap());
    }

    #[test]
    fn converged_rejects_zero_model() {
        let prev = model(&[&[1.0, 2.0]]);
        let curr = model(&[&[0.0, 0.0]]);
        assert!(matches!(converged(&prev, &curr, 0.1), Err(Error::Indeterminate)));
    }

    #[test]
    fn assignment_matches_brute_force_on_random_instances() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        for trial in 0..50 {
            let k = rng.gen_range(1..=6);
            let d = rng.gen_range(1..=4);
            let est = MlrModel::random_init_from(k, d, &mut rng);
            let truth = MlrModel::random_init_from(k, d, &mut rng);
            let (a, _) = f_latent_brute(&est, &truth).unwrap();
            let (b, _) = f_latent_assignment(&est, &truth).unwrap();
            assert!((a - b).abs() < 1e-12, "trial {trial}: brute {a} vs lap {b}");
        }
    }
}
