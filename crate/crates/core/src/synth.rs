//! Seeded synthetic data generation and outlier injection.
//!
//! The generator is a ChaCha20 stream seeded from a 64-bit value, with
//! standard-normal draws via the ziggurat sampler. Draw order is fixed so a
//! seed fully determines the dataset: regression vectors (component-major),
//! then labels, then X (row-major), then noise. Cross-language ports can
//! reproduce the statistics, though not the bit stream, by matching the
//! distributions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Dataset, MixtureSpec, MlrModel};

/// Draw `n` samples from the mixture: X and the regression vectors have
/// i.i.d. standard normal entries, labels are multinomial in the mixture
/// proportions, and y_i = x_i^T beta_{c_i} + eps_i with eps_i ~ N(0, sigma^2).
pub fn generate_synthetic(spec: &MixtureSpec, n: usize) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("n must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let truth = MlrModel::random_init_from(spec.k, spec.d, &mut rng);

    // Multinomial labels via the cumulative proportions, 1-based.
    let mut cumulative = Vec::with_capacity(spec.k);
    let mut acc = 0.0;
    for &p in &spec.proportions {
        acc += p;
        cumulative.push(acc);
    }
    let labels: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            cumulative.iter().position(|&c| u < c).unwrap_or(spec.k - 1) + 1
        })
        .collect();

    let mut x = DMatrix::zeros(n, spec.d);
    for i in 0..n {
        for j in 0..spec.d {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }

    let betas = truth.beta_vectors();
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mut dot = 0.0;
        let beta = &betas[labels[i] - 1];
        for j in 0..spec.d {
            dot += x[(i, j)] * beta[j];
        }
        let eps: f64 = if spec.sigma > 0.0 {
            spec.sigma * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        y[i] = dot + eps;
    }

    Ok(Dataset {
        x,
        y,
        true_labels: Some(labels),
        truth: Some(truth),
        noise_sigma: Some(spec.sigma),
        corrupted_indices: None,
    })
}

/// Root mean square of a vector.
pub fn rms(v: &DVector<f64>) -> f64 {
    (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt()
}

/// Replace ceil(f * n) uniformly chosen responses with draws from
/// N(0, RMS(y)^2), independent of the original values. The corrupted row
/// indices are recorded on the returned dataset.
pub fn inject_outliers(data: &Dataset, f: f64, seed: u64) -> Result<Dataset> {
    if data.n() == 0 {
        return Err(Error::InvalidConfig("dataset is empty".into()));
    }
    if !(0.0..1.0).contains(&f) {
        return Err(Error::InvalidConfig("corruption fraction must lie in [0, 1)".into()));
    }
    if f == 0.0 {
        return Ok(data.clone());
    }
    let n = data.n();
    let count = (f * n as f64).ceil() as usize;
    let scale = rms(&data.y);

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Partial Fisher-Yates: the first `count` entries are a uniform sample
    // without replacement.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut corrupted: Vec<usize> = idx[..count].to_vec();
    corrupted.sort_unstable();

    let mut out = data.clone();
    for &i in &corrupted {
        out.y[i] = scale * rng.sample::<f64, _>(StandardNormal);
    }
    out.corrupted_indices = Some(corrupted);
    Ok(out)
}
