//! Closed-form quantities from the two-component population recovery
//! guarantee: the imbalance factor gamma, the balance-noise aggregate q, the
//! admissible weight-threshold interval, the norm-bound requirement and the
//! recovery error bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs shared by the guarantee-side formulas.
///
/// `p1 >= p2` are the mixture proportions, `sigma_eps` the noise bound,
/// `delta_norm` the separation between the two true vectors, `eta` the
/// weight scale, `r_cap` the sample-norm bound and `d_init` the relative
/// error of the initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub p1: f64,
    pub p2: f64,
    pub sigma_eps: f64,
    pub delta_norm: f64,
    pub eta: f64,
    pub r_cap: f64,
    pub d_init: f64,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        if self.p2 <= 0.0 || self.p1 < self.p2 {
            return Err(Error::InvalidConfig("need p1 >= p2 > 0".into()));
        }
        if (self.p1 + self.p2 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("p1 + p2 must equal 1".into()));
        }
        if self.sigma_eps < 0.0 {
            return Err(Error::InvalidConfig("sigma_eps must be nonnegative".into()));
        }
        if self.delta_norm <= 0.0 || self.eta <= 0.0 || self.r_cap <= 0.0 {
            return Err(Error::InvalidConfig(
                "delta_norm, eta and r_cap must be positive".into(),
            ));
        }
        if self.d_init < 0.0 {
            return Err(Error::InvalidConfig("d_init must be nonnegative".into()));
        }
        Ok(())
    }

    /// Noise-to-separation ratio.
    pub fn xi(&self) -> f64 {
        self.sigma_eps / self.delta_norm
    }

    /// Norm-bounded noise ratio xi / sqrt(R).
    pub fn xi_tilde(&self) -> f64 {
        self.xi() / self.r_cap.sqrt()
    }
}

/// Imbalance factor 5 p2 / (4 p1).
pub fn gamma(p1: f64, p2: f64) -> f64 {
    if p1 <= 0.0 {
        return 0.0;
    }
    5.0 * p2 / (4.0 * p1)
}

/// q = gamma + (1/p1 + 1/sqrt(R)) * sigma_eps / ||Delta||, plus the
/// applicability flag q < 1/2.
pub fn q_value(inputs: &TheoryInputs) -> Result<(f64, bool)> {
    inputs.validate()?;
    let q = gamma(inputs.p1, inputs.p2)
        + (1.0 / inputs.p1 + 1.0 / inputs.r_cap.sqrt()) * inputs.xi();
    Ok((q, q < 0.5))
}

/// Admissible weight-threshold interval
/// ( 1/(1 + eta (1-q)^2 ||Delta||^2), 1/(1 + eta q^2 ||Delta||^2) ).
pub fn wth_range(inputs: &TheoryInputs) -> Result<(f64, f64)> {
    let (q, applicable) = q_value(inputs)?;
    let d2 = inputs.delta_norm * inputs.delta_norm;
    let lo = 1.0 / (1.0 + inputs.eta * (1.0 - q) * (1.0 - q) * d2);
    let hi = 1.0 / (1.0 + inputs.eta * q * q * d2);
    if !applicable || lo >= hi {
        return Err(Error::EmptyRange { lo, hi });
    }
    Ok((lo, hi))
}

/// Norm-bound requirement
/// R > max{ 1/((q - xi~)^2 ||Delta||^2), 5 (3 max{D, 1/2} + xi)^2 ||Delta||^2 eta }.
pub fn r_lower_bound(inputs: &TheoryInputs) -> Result<f64> {
    let (q, _) = q_value(inputs)?;
    let xi_tilde = inputs.xi_tilde();
    if q <= xi_tilde {
        return Err(Error::Inapplicable(format!(
            "q = {q} must exceed xi/sqrt(R) = {xi_tilde}"
        )));
    }
    let d2 = inputs.delta_norm * inputs.delta_norm;
    let first = 1.0 / ((q - xi_tilde) * (q - xi_tilde) * d2);
    let reach = 3.0 * inputs.d_init.max(0.5) + inputs.xi();
    let second = 5.0 * reach * reach * d2 * inputs.eta;
    Ok(first.max(second))
}

/// Recovery error bound (1/sqrt(R)) * sigma_eps / (sigma_eps + gamma ||Delta||).
pub fn recovery_bound(inputs: &TheoryInputs) -> Result<f64> {
    let (_, applicable) = q_value(inputs)?;
    if !applicable {
        return Err(Error::Inapplicable("q must be below 1/2".into()));
    }
    if inputs.sigma_eps == 0.0 {
        return Ok(0.0);
    }
    let g = gamma(inputs.p1, inputs.p2);
    Ok(inputs.sigma_eps / (inputs.sigma_eps + g * inputs.delta_norm) / inputs.r_cap.sqrt())
}

/// All five quantities in one report, for the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub gamma: f64,
    pub q: f64,
    pub applicable: bool,
    pub wth_range: Option<(f64, f64)>,
    pub r_lower_bound: Option<f64>,
    pub recovery_bound: Option<f64>,
}

pub fn report(inputs: &TheoryInputs) -> Result<TheoryReport> {
    let (q, applicable) = q_value(inputs)?;
    Ok(TheoryReport {
        gamma: gamma(inputs.p1, inputs.p2),
        q,
        applicable,
        wth_range: wth_range(inputs).ok(),
        r_lower_bound: r_lower_bound(inputs).ok(),
        recovery_bound: recovery_bound(inputs).ok(),
    })
}
