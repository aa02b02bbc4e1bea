//! Smoothed ℓp robust objective, its weighted form, the quadratic
//! majorizer over the auxiliary variable β, and the closed-form β update.
//!
//! The objective on a residual vector r is `Σ_n (r_n² + ε)^{p/2}`. For each
//! coordinate it admits the upper bound
//!
//! ```text
//! (r² + ε)^{p/2} <= (p/2) r² β^{p-2} + (pε/2) β^{p-2} + ((2-p)/2) β^p
//! ```
//!
//! valid for every β > 0 and 0 < p <= 2, tight exactly at β = sqrt(r² + ε).
//! Summing the bound gives a quadratic-in-r surrogate, which is what makes
//! the alternating solver work.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RobustError {
    #[error("invalid robust parameters: {0}")]
    InvalidParams(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Exponent p and smoothing constant ε of the robust loss.
///
/// The admissible exponent range is `(0, 2]`: the majorizer inequality holds
/// on all of it, the sparsity-promoting regime is `p <= 1`, and `p = 2`
/// degenerates to ordinary least squares (used by the baselines). ε must be
/// strictly positive; the β update divides by powers of β and loses its
/// unique solution at ε = 0.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RobustParams {
    pub p: f64,
    pub eps: f64,
}

impl RobustParams {
    pub fn new(p: f64, eps: f64) -> Result<Self, RobustError> {
        if !(p > 0.0 && p <= 2.0) {
            return Err(RobustError::InvalidParams(format!(
                "exponent p must be in (0, 2], got {p}"
            )));
        }
        if !(eps > 0.0) {
            return Err(RobustError::InvalidParams(format!(
                "smoothing eps must be > 0, got {eps}"
            )));
        }
        Ok(Self { p, eps })
    }
}

impl Default for RobustParams {
    fn default() -> Self {
        Self { p: 0.5, eps: 1e-6 }
    }
}

/// Robust loss `Σ_n (v_n² + ε)^{p/2}`. Strictly positive for nonempty input.
pub fn rho(values: &[f64], params: &RobustParams) -> f64 {
    let half_p = 0.5 * params.p;
    values
        .iter()
        .map(|v| (v * v + params.eps).powf(half_p))
        .sum()
}

/// Weighted robust loss `Σ_n ((γ_n r_n)² + ε)^{p/2}`.
pub fn weighted_rho(
    residuals: &[f64],
    gamma: &[f64],
    params: &RobustParams,
) -> Result<f64, RobustError> {
    if residuals.len() != gamma.len() {
        return Err(RobustError::InvalidInput(format!(
            "residual/weight length mismatch: {} vs {}",
            residuals.len(),
            gamma.len()
        )));
    }
    if let Some(w) = gamma.iter().find(|w| !(**w >= 0.0)) {
        return Err(RobustError::InvalidInput(format!(
            "weights must be nonnegative, got {w}"
        )));
    }
    let half_p = 0.5 * params.p;
    Ok(residuals
        .iter()
        .zip(gamma)
        .map(|(r, g)| {
            let gr = g * r;
            (gr * gr + params.eps).powf(half_p)
        })
        .sum())
}

/// Quadratic majorizer
/// `ψ(f, β) = (p/2) Σ f_n² β_n^{p-2} + Σ ((pε/2) β_n^{p-2} + ((2-p)/2) β_n^p)`.
///
/// Upper-bounds [`rho`] for every β > 0, with equality at
/// `β = optimal_beta(f, ε)`.
pub fn psi_majorizer(
    f: &[f64],
    beta: &[f64],
    params: &RobustParams,
) -> Result<f64, RobustError> {
    if f.len() != beta.len() {
        return Err(RobustError::InvalidInput(format!(
            "value/beta length mismatch: {} vs {}",
            f.len(),
            beta.len()
        )));
    }
    if let Some(b) = beta.iter().find(|b| !(**b > 0.0)) {
        return Err(RobustError::InvalidInput(format!(
            "beta entries must be strictly positive, got {b}"
        )));
    }
    let p = params.p;
    let eps = params.eps;
    let mut total = 0.0;
    for (fi, bi) in f.iter().zip(beta) {
        let b_pm2 = bi.powf(p - 2.0);
        total += 0.5 * p * fi * fi * b_pm2;
        total += 0.5 * p * eps * b_pm2 + 0.5 * (2.0 - p) * bi.powf(p);
    }
    Ok(total)
}

/// Minimizer of the majorizer over β: `β_n = sqrt(f_n² + ε)`.
///
/// Setting the β gradient of ψ to zero gives
/// `κ (f_n² + ε - β_n²) β_n^{p-3} = 0` with `κ = p(p-2)/2`, whose only
/// positive root is the square-root form above.
pub fn optimal_beta(f: &[f64], eps: f64) -> Vec<f64> {
    f.iter().map(|v| (v * v + eps).sqrt()).collect()
}
