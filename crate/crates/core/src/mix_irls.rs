//! The sequential mixed-regression solver.
//!
//! Phase one recovers the components one at a time: at each round a robust
//! IRLS loop fits the dominant component among the still-active samples,
//! the samples are split by weight into good fit (refine the component),
//! poor fit (passed to the next round) and moderate fit (deferred), and the
//! component is re-estimated by OLS on the good-fit samples. Phase two
//! refines all components simultaneously from the phase-one estimates.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lstsq::{self, LstsqOptions};
use crate::metrics;
use crate::model::{Dataset, FitReport, MlrModel, SolverConfig};

/// Weight-threshold ceiling for Remark-style adaptation; at or above this
/// value the poor-fit rule would pass every sample.
const W_TH_CAP: f64 = 0.95;

/// Per-round diagnostics recorded at the end of the round's IRLS loop. The
/// weights reproduce 1/(1 + eta r^2 / median^2) from the recorded residuals.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    /// Active sample indices for this round (S_k).
    pub active: Vec<usize>,
    /// Residuals |x_i^T beta_k - y_i| aligned with `active`.
    pub residuals: Vec<f64>,
    /// IRLS weights aligned with `active`.
    pub weights: Vec<f64>,
    /// Median residual used for weight scaling (after flooring).
    pub median_residual: f64,
    /// Good-fit subset refined by OLS (S'_k).
    pub good_fit: Vec<usize>,
}

/// Everything phase one produces.
#[derive(Debug, Clone)]
pub struct PhaseOneOutcome {
    /// Per-component OLS estimates.
    pub models: Vec<DVector<f64>>,
    /// Good-fit index sets, one per recovered component.
    pub good_fit_sets: Vec<Vec<usize>>,
    pub final_w_th: f64,
    pub restarts: usize,
    /// Total inner IRLS iterations across rounds and restarts.
    pub iterations: usize,
    /// Diagnostics for the successful attempt, one record per round.
    pub rounds: Vec<RoundRecord>,
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("residuals are finite"));
    let m = values.len();
    if m == 0 {
        return 0.0;
    }
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

fn opts(cfg: &SolverConfig) -> LstsqOptions {
    LstsqOptions { ridge: cfg.ridge }
}

/// Sequential recovery. With `unknown_k` off, runs exactly `cfg.k` rounds
/// and restarts from scratch with `w_th + 0.1` whenever a non-final round
/// leaves fewer than rho*d poor-fit samples. With `unknown_k` on, the
/// restart rule is ignored and rounds stop once the active set is smaller
/// than rho*d; `cfg.k` is then the component budget K_max.
///
/// Round k starts from `init.betas[k]`; restarts reuse the same vectors so
/// the adaptation is attributable to the threshold alone.
pub fn phase1(data: &Dataset, cfg: &SolverConfig, init: &MlrModel) -> Result<PhaseOneOutcome> {
    cfg.validate()?;
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

    let n = data.n();
    let d = data.dim();
    let eta = cfg.eta();
    let rho_d = cfg.rho * d as f64;
    let good_fit_size = rho_d.ceil() as usize;
    let median_floor = 1e3 * f64::EPSILON * crate::synth::rms(&data.y);

    let mut w_th = cfg.w_th;
    let mut restarts = 0usize;
    let mut iterations = 0usize;

    'attempt: loop {
        let mut active: Vec<usize> = (0..n).collect();
        let mut models = Vec::with_capacity(cfg.k);
        let mut good_fit_sets = Vec::with_capacity(cfg.k);
        let mut rounds = Vec::with_capacity(cfg.k);

        for k in 0..cfg.k {
            if cfg.unknown_k && (active.len() as f64) < rho_d {
                if k == 0 {
                    return Err(Error::InsufficientData(format!(
                        "{} active samples cannot support the first component (need {})",
                        active.len(),
                        rho_d
                    )));
                }
                break;
            }

            let (sub_x, sub_y) = lstsq::take_rows(&data.x, &data.y, &active);
            let mut beta = init.beta(k);
            let mut residuals = vec![0.0; active.len()];
            let mut weights = vec![0.0; active.len()];
            let mut rbar = 0.0;
            let context = format!("round {}", k + 1);

            for _ in 0..cfg.t1 {
                let pred = &sub_x * &beta;
                for (i, r) in residuals.iter_mut().enumerate() {
                    *r = (pred[i] - sub_y[i]).abs();
                }
                rbar = median_of(residuals.clone()).max(median_floor);
                for (i, w) in weights.iter_mut().enumerate() {
                    *w = 1.0 / (1.0 + eta * residuals[i] * residuals[i] / (rbar * rbar));
                }
                let next = lstsq::wls_with(&sub_x, &weights, &sub_y, opts(cfg), &context)?;
                iterations += 1;
                let step = metrics::converged(
                    &MlrModel::new(vec![beta.clone()]),
                    &MlrModel::new(vec![next.clone()]),
                    cfg.tol_delta,
                );
                beta = next;
                if matches!(step, Ok(true)) {
                    break;
                }
            }

            // Poor-fit samples feed the next round.
            let next_active: Vec<usize> = active
                .iter()
                .enumerate()
                .filter(|&(i, _)| weights[i] <= w_th)
                .map(|(_, &idx)| idx)
                .collect();

            // Good-fit subset: the ceil(rho*d) largest weights, ties broken
            // by the lower sample index.
            let mut order: Vec<usize> = (0..active.len()).collect();
            order.sort_by(|&a, &b| {
                weights[b]
                    .partial_cmp(&weights[a])
                    .expect("weights are finite")
                    .then(active[a].cmp(&active[b]))
            });
            let good_fit: Vec<usize> = order
                .iter()
                .take(good_fit_size.min(active.len()))
                .map(|&i| active[i])
                .collect();

            if !cfg.unknown_k && k + 1 < cfg.k && (next_active.len() as f64) < rho_d {
                let new_w_th = w_th + 0.1;
                if new_w_th >= W_TH_CAP || restarts + 1 > cfg.max_restarts {
                    return Err(Error::ThresholdExhausted {
                        restarts,
                        final_w_th: w_th,
                        round: k + 1,
                        poor_fit: next_active.len(),
                        needed: rho_d.ceil() as usize,
                    });
                }
                w_th = new_w_th;
                restarts += 1;
                continue 'attempt;
            }

            let (good_x, good_y) = lstsq::take_rows(&data.x, &data.y, &good_fit);
            let refined = lstsq::ols_with(&good_x, &good_y, opts(cfg), &context)?;

            rounds.push(RoundRecord {
                active: active.clone(),
                residuals: residuals.clone(),
                weights: weights.clone(),
                median_residual: rbar,
                good_fit: good_fit.clone(),
            });
            models.push(refined);
            good_fit_sets.push(good_fit);
            active = next_active;
        }

        return Ok(PhaseOneOutcome {
            models,
            good_fit_sets,
            final_w_th: w_th,
            restarts,
            iterations,
            rounds,
        });
    }
}

/// Soft phase-two weights: w_ik = (1/(r_ik^2 + eps)) normalized per sample.
pub fn soft_weights(residuals: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = residuals.shape();
    let mut w = DMatrix::zeros(n, k);
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..k {
            let inv = 1.0 / (residuals[(i, j)] * residuals[(i, j)] + f64::EPSILON);
            w[(i, j)] = inv;
            total += inv;
        }
        for j in 0..k {
            w[(i, j)] /= total;
        }
    }
    w
}

/// Two-step binarization. Samples with a dominant weight (>= 2/3) keep only
/// their top component (ties to the lowest index); the rest lose weights
/// below 1/K and are renormalized. Returns the dominant-set membership.
pub fn binarize_weights(weights: &mut DMatrix<f64>) -> Vec<bool> {
    let (n, k) = weights.shape();
    let mut dominant = vec![false; n];
    for i in 0..n {
        let mut top = 0;
        for j in 1..k {
            if weights[(i, j)] > weights[(i, top)] {
                top = j;
            }
        }
        if weights[(i, top)] >= 2.0 / 3.0 {
            dominant[i] = true;
            for j in 0..k {
                weights[(i, j)] = f64::from(j == top);
            }
        } else {
            let mut total = 0.0;
            for j in 0..k {
                if weights[(i, j)] < 1.0 / k as f64 {
                    weights[(i, j)] = 0.0;
                }
                total += weights[(i, j)];
            }
            for j in 0..k {
                weights[(i, j)] /= total;
            }
        }
    }
    dominant
}

/// Simultaneous refinement: soft inverse-residual weights, the two-step
/// binarization, then one weighted solve per component, iterated until the
/// relative-change criterion or the iteration cap. With a positive trim
/// fraction every solve is restricted to the ceil((1-f)n) samples with the
/// smallest current residual.
pub fn phase2(data: &Dataset, init: &MlrModel, cfg: &SolverConfig) -> Result<(MlrModel, usize)> {
    let k = init.k();
    let n = data.n();
    if k == 0 {
        return Err(Error::InvalidConfig("phase two needs at least one component".into()));
    }
    if init.dim() != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "phase-two initialization dimension {} vs data {}",
            init.dim(),
            data.dim()
        )));
    }

    let mut model = init.clone();
    let mut iterations = 0usize;
    let cap = cfg.t2.min(cfg.max_iters);

    for _ in 0..cap {
        let residuals = model.residual_matrix(&data.x, &data.y);
        let mut weights = soft_weights(&residuals);
        binarize_weights(&mut weights);

        // Trimmed estimation: drop the largest best-fit residuals.
        let kept: Vec<bool> = if cfg.trim_fraction > 0.0 {
            let keep_count = ((1.0 - cfg.trim_fraction) * n as f64).ceil() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            let best: Vec<f64> = (0..n)
                .map(|i| (0..k).map(|j| residuals[(i, j)]).fold(f64::INFINITY, f64::min))
                .collect();
            order.sort_by(|&a, &b| {
                best[a].partial_cmp(&best[b]).expect("finite residuals").then(a.cmp(&b))
            });
            let mut kept = vec![false; n];
            for &i in order.iter().take(keep_count) {
                kept[i] = true;
            }
            kept
        } else {
            vec![true; n]
        };

        let mut betas = Vec::with_capacity(k);
        for j in 0..k {
            let rows: Vec<usize> = (0..n).filter(|&i| kept[i] && weights[(i, j)] > 0.0).collect();
            if rows.is_empty() {
                return Err(Error::DegenerateSystem {
                    context: format!("refinement component {}", j + 1),
                    ratio: 0.0,
                });
            }
            let (sub_x, sub_y) = lstsq::take_rows(&data.x, &data.y, &rows);
            let w: Vec<f64> = rows.iter().map(|&i| weights[(i, j)]).collect();
            betas.push(lstsq::wls_with(
                &sub_x,
                &w,
                &sub_y,
                opts(cfg),
                &format!("refinement component {}", j + 1),
            )?);
        }
        let next = MlrModel::new(betas);
        iterations += 1;
        let done = matches!(metrics::converged(&model, &next, cfg.tol_delta), Ok(true));
        model = next;
        if done {
            break;
        }
    }
    Ok((model, iterations))
}

/// Full solve from a seed: the initialization is drawn from the shared
/// protocol ([`MlrModel::random_init`]) so other solvers can start from the
/// same vectors.
pub fn fit(data: &Dataset, cfg: &SolverConfig, seed: u64) -> Result<FitReport> {
    let init = MlrModel::random_init(cfg.k, data.dim(), seed);
    fit_with_init(data, cfg, &init)
}

/// Full solve: sequential recovery, then simultaneous refinement seeded by
/// the phase-one estimates, then hard labels by smallest residual.
pub fn fit_with_init(data: &Dataset, cfg: &SolverConfig, init: &MlrModel) -> Result<FitReport> {
    let start = Instant::now();
    let p1 = phase1(data, cfg, init)?;
    let k_found = p1.models.len();
    let mid = MlrModel::new(p1.models.clone());
    let cfg2 = SolverConfig { k: k_found, ..cfg.clone() };
    let (model, p2_iterations) = phase2(data, &mid, &cfg2)?;
    let labels = model.assign_labels(&data.x, &data.y);
    Ok(FitReport {
        model,
        labels,
        k_found,
        restarts: p1.restarts,
        final_w_th: Some(p1.final_w_th),
        iterations: p1.iterations + p2_iterations,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Norm-bounded two-component variant used by the recovery guarantee:
/// one IRLS pass whose weights are scaled by the fixed bound `r_cap`
/// instead of the median residual, subsets gated by both the weight
/// threshold and the sample-norm bound, and no oversampling truncation
/// (rho = infinity). Never restarts; starved subsets surface as errors.
pub fn phase1_modified(
    data: &Dataset,
    cfg: &SolverConfig,
    r_cap: f64,
    init: &MlrModel,
) -> Result<[DVector<f64>; 2]> {
    if cfg.k != 2 {
        return Err(Error::InvalidConfig(
            "the norm-bounded variant is defined for two components".into(),
        ));
    }
    if r_cap <= 0.0 {
        return Err(Error::InvalidConfig("norm bound must be positive".into()));
    }
    if init.dim() != data.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initialization dimension {} vs data {}",
            init.dim(),
            data.dim()
        )));
    }
    data.validate()?;

    let n = data.n();
    let eta = cfg.eta();
    let norm_ok: Vec<bool> = (0..n)
        .map(|i| data.x.row(i).iter().map(|v| v * v).sum::<f64>() <= r_cap)
        .collect();

    let weights_for = |beta: &DVector<f64>| -> Vec<f64> {
        let pred = &data.x * beta;
        (0..n)
            .map(|i| {
                let r = pred[i] - data.y[i];
                1.0 / (1.0 + eta * r * r / r_cap)
            })
            .collect()
    };

    // One IRLS pass with the fixed scale.
    let mut beta1 = init.beta(0);
    let w1 = weights_for(&beta1);
    beta1 = lstsq::wls_with(&data.x, &w1, &data.y, opts(cfg), "norm-bounded pass")?;

    let w1 = weights_for(&beta1);
    let poor: Vec<usize> = (0..n).filter(|&i| norm_ok[i] && w1[i] <= cfg.w_th).collect();
    if poor.is_empty() {
        return Err(Error::EmptySubset { subset: "poor-fit set".into() });
    }
    let (sub_x, sub_y) = lstsq::take_rows(&data.x, &data.y, &poor);
    let beta2 = lstsq::ols_with(&sub_x, &sub_y, opts(cfg), "second component")?;

    let w2 = weights_for(&beta2);
    let first: Vec<usize> = (0..n).filter(|&i| norm_ok[i] && w2[i] <= cfg.w_th).collect();
    if first.is_empty() {
        return Err(Error::EmptySubset { subset: "first-component set".into() });
    }
    let (sub_x, sub_y) = lstsq::take_rows(&data.x, &data.y, &first);
    let beta1 = lstsq::ols_with(&sub_x, &sub_y, opts(cfg), "first component")?;

    Ok([beta1, beta2])
}
