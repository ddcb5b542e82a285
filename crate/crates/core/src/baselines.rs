//! Comparison solvers: alternating minimization, expectation maximization,
//! subgradient descent on the best-fit objective, the label oracle and
//! plain single-component OLS. All consume the same seeded initialization
//! protocol as the sequential solver.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lstsq;
use crate::metrics;
use crate::model::{BaselineConfig, Dataset, FitReport, MlrModel};

/// Signed prediction errors x_i^T beta_k - y_i as an n x K matrix.
fn signed_residuals(model: &MlrModel, data: &Dataset) -> DMatrix<f64> {
    let n = data.n();
    let k = model.k();
    let mut r = DMatrix::zeros(n, k);
    for (j, beta) in model.beta_vectors().iter().enumerate() {
        let pred = &data.x * beta;
        for i in 0..n {
            r[(i, j)] = pred[i] - data.y[i];
        }
    }
    r
}

/// 0-based argmin of |residual| per sample, ties to the lowest index.
fn hard_assign(residuals: &DMatrix<f64>) -> Vec<usize> {
    (0..residuals.nrows())
        .map(|i| {
            let mut best = 0;
            for j in 1..residuals.ncols() {
                if residuals[(i, j)].abs() < residuals[(i, best)].abs() {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Rows kept by trimmed estimation: the ceil((1-f)n) samples with the
/// smallest best-fit |residual|, ties to the lower index. All rows when f=0.
fn trimmed_rows(residuals: &DMatrix<f64>, trim_fraction: f64) -> Vec<bool> {
    let n = residuals.nrows();
    if trim_fraction <= 0.0 {
        return vec![true; n];
    }
    let keep_count = ((1.0 - trim_fraction) * n as f64).ceil() as usize;
    let best: Vec<f64> = (0..n)
        .map(|i| {
            (0..residuals.ncols())
                .map(|j| residuals[(i, j)].abs())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| best[a].partial_cmp(&best[b]).expect("finite").then(a.cmp(&b)));
    let mut kept = vec![false; n];
    for &i in order.iter().take(keep_count) {
        kept[i] = true;
    }
    kept
}

fn check_init(data: &Dataset, cfg: &BaselineConfig, init: &MlrModel) -> Result<()> {
    data.validate()?;
    if init.k() < cfg.k || init.dim() != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initialization is {}x{}, need at least {}x{}",
            init.k(),
            init.dim(),
            cfg.k,
            data.dim()
        )));
    }
    Ok(())
}

fn truncate_init(cfg: &BaselineConfig, init: &MlrModel) -> MlrModel {
    MlrModel {
        betas: init.betas[..cfg.k].to_vec(),
    }
}

/// One alternating-minimization step: hard-assign, then per-component OLS
/// over the assigned (and untrimmed) rows.
pub fn altmin_step(data: &Dataset, model: &MlrModel, trim_fraction: f64) -> Result<MlrModel> {
    let residuals = signed_residuals(model, data);
    let assign = hard_assign(&residuals);
    let kept = trimmed_rows(&residuals, trim_fraction);
    let mut betas = Vec::with_capacity(model.k());
    for j in 0..model.k() {
        let rows: Vec<usize> = (0..data.n())
            .filter(|&i| kept[i] && assign[i] == j)
            .collect();
        if rows.is_empty() {
            return Err(Error::DegenerateSystem {
                context: format!("alternating step component {}", j + 1),
                ratio: 0.0,
            });
        }
        let (sub_x, sub_y) = lstsq::take_rows(&data.x, &data.y, &rows);
        betas.push(lstsq::ols(&sub_x, &sub_y, &format!("component {}", j + 1))?);
    }
    Ok(MlrModel::new(betas))
}

/// Alternating minimization: iterate hard assignment and per-component OLS
/// until the relative-change criterion or the iteration cap.
pub fn altmin(data: &Dataset, cfg: &BaselineConfig, init: &MlrModel) -> Result<FitReport> {
    check_init(data, cfg, init)?;
    let start = Instant::now();
    let mut model = truncate_init(cfg, init);
    let mut iterations = 0usize;
    for _ in 0..cfg.max_iters {
        let next = altmin_step(data, &model, cfg.trim_fraction)?;
        iterations += 1;
        let done = matches!(metrics::converged(&model, &next, cfg.tol_delta), Ok(true));
        model = next;
        if done {
            break;
        }
    }
    let labels = model.assign_labels(&data.x, &data.y);
    Ok(FitReport {
        model,
        labels,
        k_found: cfg.k,
        restarts: 0,
        final_w_th: None,
        iterations,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Per-iteration state of the Gaussian-mixture EM solver.
struct EmState {
    model: MlrModel,
    sigma2: Vec<f64>,
    pi: Vec<f64>,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Responsibilities in log space; underflow-safe. Returns the n x K matrix
/// of posteriors and the observed-data log-likelihood.
fn responsibilities(data: &Dataset, state: &EmState) -> (DMatrix<f64>, f64) {
    let residuals = signed_residuals(&state.model, data);
    let n = data.n();
    let k = state.model.k();
    let mut gamma = DMatrix::zeros(n, k);
    let mut loglik = 0.0;
    let mut row = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            let r = residuals[(i, j)];
            row[j] = state.pi[j].ln()
                - 0.5 * (2.0 * std::f64::consts::PI * state.sigma2[j]).ln()
                - r * r / (2.0 * state.sigma2[j]);
        }
        let norm = log_sum_exp(&row);
        loglik += norm;
        for j in 0..k {
            gamma[(i, j)] = (row[j] - norm).exp();
        }
    }
    (gamma, loglik)
}

/// Expectation maximization with Gaussian responsibilities, started from
/// unit noise levels and uniform mixing proportions, finished with a single
/// alternating-minimization refinement step.
pub fn em(data: &Dataset, cfg: &BaselineConfig, init: &MlrModel) -> Result<FitReport> {
    check_init(data, cfg, init)?;
    let start = Instant::now();
    let n = data.n();
    let k = cfg.k;
    let variance_floor = 1e6 * f64::EPSILON;
    let mut state = EmState {
        model: truncate_init(cfg, init),
        sigma2: vec![1.0; k],
        pi: vec![1.0 / k as f64; k],
    };
    let mut iterations = 0usize;

    for _ in 0..cfg.max_iters {
        let (gamma, _) = responsibilities(data, &state);
        let residuals = signed_residuals(&state.model, data);
        let kept = trimmed_rows(&residuals, cfg.trim_fraction);
        let rows: Vec<usize> = (0..n).filter(|&i| kept[i]).collect();

        let mut betas = Vec::with_capacity(k);
        let mut sigma2 = vec![0.0; k];
        let mut pi = vec![0.0; k];
        for j in 0..k {
            let w: Vec<f64> = rows.iter().map(|&i| gamma[(i, j)]).collect();
            let (sub_x, sub_y) = lstsq::take_rows(&data.x, &data.y, &rows);
            let beta = lstsq::wls(&sub_x, &w, &sub_y, &format!("mixture component {}", j + 1))?;
            let pred = &sub_x * &beta;
            let mut wsum = 0.0;
            let mut wres = 0.0;
            for (t, &i) in rows.iter().enumerate() {
                let g = gamma[(i, j)];
                wsum += g;
                let r = pred[t] - data.y[i];
                wres += g * r * r;
            }
            sigma2[j] = (wres / wsum).max(variance_floor);
            pi[j] = wsum / rows.len() as f64;
            betas.push(beta);
        }
        if let Some(j) = (0..k).find(|&j| pi[j] < 1.0 / n as f64) {
            return Err(Error::DegenerateComponent {
                component: j + 1,
                proportion: pi[j],
            });
        }
        let next = MlrModel::new(betas);
        iterations += 1;
        let done = matches!(metrics::converged(&state.model, &next, cfg.tol_delta), Ok(true));
        state = EmState { model: next, sigma2, pi };
        if done {
            break;
        }
    }

    // Single refinement step.
    let model = altmin_step(data, &state.model, cfg.trim_fraction)?;
    let labels = model.assign_labels(&data.x, &data.y);
    Ok(FitReport {
        model,
        labels,
        k_found: k,
        restarts: 0,
        final_w_th: None,
        iterations: iterations + 1,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Best-fit objective: mean over (kept) samples of min_k (x_i^T beta_k - y_i)^2.
fn gd_loss(residuals: &DMatrix<f64>, kept: &[bool]) -> f64 {
    let n = residuals.nrows();
    let mut total = 0.0;
    for i in 0..n {
        if kept[i] {
            let best = (0..residuals.ncols())
                .map(|j| residuals[(i, j)] * residuals[(i, j)])
                .fold(f64::INFINITY, f64::min);
            total += best;
        }
    }
    total / n as f64
}

/// Subgradient descent on the best-fit objective with a fixed step: every
/// sample contributes the gradient of its current argmin component. Errors
/// out when the loss exceeds 1e6 times its initial value; finishes with a
/// single alternating-minimization refinement step.
pub fn gd(data: &Dataset, cfg: &BaselineConfig, init: &MlrModel) -> Result<FitReport> {
    check_init(data, cfg, init)?;
    let start = Instant::now();
    let n = data.n();
    let d = data.dim();
    let k = cfg.k;
    let mut betas: Vec<DVector<f64>> = truncate_init(cfg, init).beta_vectors();
    let mut iterations = 0usize;
    let mut initial_loss = None;

    for iter in 0..cfg.max_iters {
        let model = MlrModel::new(betas.clone());
        let residuals = signed_residuals(&model, data);
        let assign = hard_assign(&residuals);
        let kept = trimmed_rows(&residuals, cfg.trim_fraction);

        let loss = gd_loss(&residuals, &kept);
        let reference = *initial_loss.get_or_insert(loss);
        if loss > 1e6 * reference && loss > f64::EPSILON {
            return Err(Error::Diverged { iteration: iter, loss });
        }

        let mut grad = DMatrix::<f64>::zeros(d, k);
        for i in 0..n {
            if !kept[i] {
                continue;
            }
            let j = assign[i];
            let e = 2.0 * residuals[(i, j)] / n as f64;
            for c in 0..d {
                grad[(c, j)] += e * data.x[(i, c)];
            }
        }
        let mut next = betas.clone();
        for j in 0..k {
            for c in 0..d {
                next[j][c] -= cfg.step_size * grad[(c, j)];
            }
        }
        iterations += 1;
        let done = matches!(
            metrics::converged(&MlrModel::new(betas.clone()), &MlrModel::new(next.clone()), cfg.tol_delta),
            Ok(true)
        );
        betas = next;
        if done {
            break;
        }
    }

    let model = altmin_step(data, &MlrModel::new(betas), cfg.trim_fraction)?;
    let labels = model.assign_labels(&data.x, &data.y);
    Ok(FitReport {
        model,
        labels,
        k_found: k,
        restarts: 0,
        final_w_th: None,
        iterations: iterations + 1,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Performance ceiling: per-component OLS on the true labels.
pub fn oracle(data: &Dataset) -> Result<MlrModel> {
    data.validate()?;
    let labels = data
        .true_labels
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("oracle needs true labels".into()))?;
    let k = *labels.iter().max().expect("nonempty dataset");
    let d = data.dim();
    let mut betas = Vec::with_capacity(k);
    for j in 1..=k {
        let rows: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == j).collect();
        if rows.len() < d {
            return Err(Error::InsufficientData(format!(
                "component {j} has {} samples, need at least {d}",
                rows.len()
            )));
        }
        let (sub_x, sub_y) = lstsq::take_rows(&data.x, &data.y, &rows);
        betas.push(lstsq::ols(&sub_x, &sub_y, &format!("oracle component {j}"))?);
    }
    Ok(MlrModel::new(betas))
}

/// Single-component ordinary least squares over all samples.
pub fn single_ols(data: &Dataset) -> Result<DVector<f64>> {
    data.validate()?;
    lstsq::ols(&data.x, &data.y, "single-component OLS")
}
