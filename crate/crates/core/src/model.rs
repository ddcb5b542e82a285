//! Domain types: datasets, mixture models, solver configuration and reports.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A mixture of `K` linear models: one regression vector per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrModel {
    pub betas: Vec<Vec<f64>>,
}

impl MlrModel {
    pub fn new(betas: Vec<DVector<f64>>) -> Self {
        Self {
            betas: betas.iter().map(|b| b.as_slice().to_vec()).collect(),
        }
    }

    /// Number of components.
    pub fn k(&self) -> usize {
        self.betas.len()
    }

    /// Coefficient dimension.
    pub fn dim(&self) -> usize {
        self.betas.first().map_or(0, |b| b.len())
    }

    pub fn beta(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.betas[k])
    }

    pub fn beta_vectors(&self) -> Vec<DVector<f64>> {
        (0..self.k()).map(|k| self.beta(k)).collect()
    }

    /// Shared initialization protocol: `k` vectors with i.i.d. standard
    /// normal entries drawn from a ChaCha20 stream seeded by `seed`,
    /// component-major order. Every solver in a trial receives this same
    /// model when given the same seed.
    pub fn random_init(k: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Self::random_init_from(k, dim, &mut rng)
    }

    pub fn random_init_from<R: Rng>(k: usize, dim: usize, rng: &mut R) -> Self {
        let betas = (0..k)
            .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        Self { betas }
    }

    /// Residuals |x_i^T beta_k - y_i| for every sample and component,
    /// returned as an n x K matrix.
    pub fn residual_matrix(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let k = self.k();
        let mut r = DMatrix::zeros(n, k);
        for (j, beta) in self.beta_vectors().iter().enumerate() {
            let pred = x * beta;
            for i in 0..n {
                r[(i, j)] = (pred[i] - y[i]).abs();
            }
        }
        r
    }

    /// Hard assignment: 1-based argmin residual per sample, ties to the
    /// lowest component index.
    pub fn assign_labels(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<usize> {
        let r = self.residual_matrix(x, y);
        (0..x.nrows())
            .map(|i| {
                let mut best = 0;
                for j in 1..self.k() {
                    if r[(i, j)] < r[(i, best)] {
                        best = j;
                    }
                }
                best + 1
            })
            .collect()
    }
}

/// Samples for one regression problem, plus ground truth when synthetic.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Explanatory variables, n x d.
    pub x: DMatrix<f64>,
    /// Responses, length n.
    pub y: DVector<f64>,
    /// True component labels, 1-based in [K], when known.
    pub true_labels: Option<Vec<usize>>,
    /// True regression vectors, when known.
    pub truth: Option<MlrModel>,
    /// Noise standard deviation used to generate `y`, when known.
    pub noise_sigma: Option<f64>,
    /// Rows whose responses were replaced by outliers, when corruption was
    /// injected.
    pub corrupted_indices: Option<Vec<usize>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.y.len() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows but y has {} entries",
                self.x.nrows(),
                self.y.len()
            )));
        }
        if let Some(labels) = &self.true_labels {
            if labels.len() != self.n() {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    self.n()
                )));
            }
            let k = self.truth.as_ref().map_or(usize::MAX, MlrModel::k);
            if let Some(&bad) = labels.iter().find(|&&c| c == 0 || c > k) {
                return Err(Error::InvalidConfig(format!(
                    "label {bad} outside [1, {k}]"
                )));
            }
        }
        Ok(())
    }

    /// Write the `x1,...,xd,y[,label]` CSV form (UTF-8, '.' decimal point).
    /// Labels are included when present; they are 1-based.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let d = self.dim();
        let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
        header.push("y".to_owned());
        if self.true_labels.is_some() {
            header.push("label".to_owned());
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = (0..d).map(|j| format!("{}", self.x[(i, j)])).collect();
            rec.push(format!("{}", self.y[i]));
            if let Some(labels) = &self.true_labels {
                rec.push(format!("{}", labels[i]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Read the CSV form back. A trailing `label` column is recognized by
    /// its header name.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let cols = headers.len();
        if cols < 2 {
            return Err(Error::Parse("need at least one feature column and y".into()));
        }
        let has_label = headers.iter().last() == Some("label");
        let d = cols - 1 - usize::from(has_label);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut ys = Vec::new();
        let mut labels = Vec::new();
        for record in r.records() {
            let record = record?;
            let parse = |j: usize| -> Result<f64> {
                record[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row value '{}': {e}", &record[j])))
            };
            rows.push((0..d).map(parse).collect::<Result<Vec<f64>>>()?);
            ys.push(parse(d)?);
            if has_label {
                labels.push(
                    record[d + 1]
                        .trim()
                        .parse::<usize>()
                        .map_err(|e| Error::Parse(format!("label '{}': {e}", &record[d + 1])))?,
                );
            }
        }
        let n = rows.len();
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        Ok(Dataset {
            x,
            y: DVector::from_vec(ys),
            true_labels: has_label.then_some(labels),
            truth: None,
            noise_sigma: None,
            corrupted_indices: None,
        })
    }

    pub fn read_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Description of a synthetic mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub k: usize,
    pub proportions: Vec<f64>,
    pub d: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("K and d must be positive".into()));
        }
        if self.proportions.len() != self.k {
            return Err(Error::InvalidConfig(format!(
                "{} proportions for K = {}",
                self.proportions.len(),
                self.k
            )));
        }
        if self.proportions.iter().any(|&p| p <= 0.0) {
            return Err(Error::InvalidConfig("all proportions must be positive".into()));
        }
        let sum: f64 = self.proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "proportions sum to {sum}, expected 1 (tolerance 1e-12)"
            )));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidConfig("sigma must be nonnegative".into()));
        }
        Ok(())
    }

    /// Information limit d / min(p): the smallest sample size at which all
    /// components are identifiable without noise.
    pub fn n_inf(&self) -> f64 {
        let pmin = self.proportions.iter().cloned().fold(f64::INFINITY, f64::min);
        self.d as f64 / pmin
    }
}

/// Tunables of the sequential solver.
///
/// `nu` sets the weight scale via eta = sqrt(0.6745 / nu); `w_th` separates
/// poor-fit samples from the rest; `rho` is the oversampling ratio (each
/// component is refined on the ceil(rho * d) best-fitting samples); `t1` and
/// `t2` cap the per-round and refinement iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Number of components, or the upper bound K_max when `unknown_k` is on.
    pub k: usize,
    pub nu: f64,
    pub w_th: f64,
    pub rho: f64,
    pub t1: usize,
    pub t2: usize,
    pub max_iters: usize,
    pub trim_fraction: f64,
    pub unknown_k: bool,
    /// Stopping tolerance delta for the relative model-change criterion.
    pub tol_delta: f64,
    pub max_restarts: usize,
    /// Optional ridge 1e3 * eps * trace(Gram)/d on every weighted solve;
    /// off by default so degenerate subsets surface as errors.
    pub ridge: bool,
}

impl SolverConfig {
    /// Fixed parameter values used in the synthetic experiments.
    pub fn synthetic_defaults(k: usize) -> Self {
        SolverConfig {
            k,
            nu: 0.5,
            w_th: 0.01,
            rho: 1.0,
            t1: 100,
            t2: 1000,
            max_iters: 1000,
            trim_fraction: 0.0,
            unknown_k: false,
            tol_delta: crate::metrics::delta_tilde(0.0),
            max_restarts: 9,
            ridge: false,
        }
    }

    /// Fixed parameter values used on real datasets (nu = 1, rho = 2).
    pub fn real_data_defaults(k: usize) -> Self {
        SolverConfig {
            nu: 1.0,
            rho: 2.0,
            ..Self::synthetic_defaults(k)
        }
    }

    /// eta = sqrt(0.6745 / nu).
    pub fn eta(&self) -> f64 {
        (0.6745 / self.nu).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be positive".into()));
        }
        if self.nu <= 0.0 {
            return Err(Error::InvalidConfig("nu must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.w_th) {
            return Err(Error::InvalidConfig("w_th must lie in [0, 1)".into()));
        }
        if self.rho < 1.0 {
            return Err(Error::InvalidConfig("rho must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.trim_fraction) {
            return Err(Error::InvalidConfig("trim fraction must lie in [0, 1)".into()));
        }
        if self.t1 == 0 || self.t2 == 0 || self.max_iters == 0 {
            return Err(Error::InvalidConfig("iteration caps must be positive".into()));
        }
        if self.tol_delta <= 0.0 {
            return Err(Error::InvalidConfig("tol_delta must be positive".into()));
        }
        Ok(())
    }
}

/// Tunables shared by the simultaneous baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub k: usize,
    pub max_iters: usize,
    pub tol_delta: f64,
    /// Fixed step size for gradient descent; ignored by AltMin and EM.
    pub step_size: f64,
    pub trim_fraction: f64,
}

impl BaselineConfig {
    pub fn defaults(k: usize) -> Self {
        BaselineConfig {
            k,
            max_iters: 1000,
            tol_delta: crate::metrics::delta_tilde(0.0),
            step_size: 0.01,
            trim_fraction: 0.0,
        }
    }

    /// Gradient descent runs two orders of magnitude more iterations with a
    /// hundredfold tighter tolerance.
    pub fn gd_defaults(k: usize) -> Self {
        BaselineConfig {
            max_iters: 100_000,
            tol_delta: 0.01 * crate::metrics::delta_tilde(0.0),
            ..Self::defaults(k)
        }
    }
}

/// Everything a solver run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: MlrModel,
    /// Final hard assignment (argmin residual), 1-based in [K_found].
    pub labels: Vec<usize>,
    pub k_found: usize,
    /// Threshold-adaptation count (sequential solver only).
    pub restarts: usize,
    /// Final weight threshold after adaptation, if the solver uses one.
    pub final_w_th: Option<f64>,
    pub iterations: usize,
    pub elapsed_seconds: f64,
}

impl FitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("FitReport serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(format!("FitReport JSON: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_spec_rejects_unnormalized_proportions() {
        let spec = MixtureSpec {
            k: 2,
            proportions: vec![0.7, 0.2],
            d: 5,
            sigma: 0.0,
            seed: 1,
        };
        assert!(matches!(spec.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn n_inf_from_smallest_proportion() {
        let spec = MixtureSpec {
            k: 3,
            proportions: vec![0.7, 0.2, 0.1],
            d: 300,
            sigma: 0.0,
            seed: 1,
        };
        assert_eq!(spec.n_inf(), 3000.0);
    }

    #[test]
    fn random_init_is_deterministic() {
        let a = MlrModel::random_init(3, 7, 42);
        let b = MlrModel::random_init(3, 7, 42);
        assert_eq!(a, b);
        assert_ne!(a, MlrModel::random_init(3, 7, 43));
    }

    #[test]
    fn csv_roundtrip_with_labels() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.5, -4.0, 0.25, 1e-3]);
        let y = DVector::from_vec(vec![0.5, 1.5, -2.0]);
        let data = Dataset {
            x,
            y,
            true_labels: Some(vec![1, 2, 1]),
            truth: None,
            noise_sigma: None,
            corrupted_indices: None,
        };
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.x, data.x);
        assert_eq!(back.y, data.y);
        assert_eq!(back.true_labels, data.true_labels);
    }

    #[test]
    fn fit_report_json_roundtrip() {
        let report = FitReport {
            model: MlrModel {
                betas: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            },
            labels: vec![1, 2, 2],
            k_found: 2,
            restarts: 1,
            final_w_th: Some(0.11),
            iterations: 17,
            elapsed_seconds: 0.25,
        };
        let back = FitReport::from_json(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }
}
