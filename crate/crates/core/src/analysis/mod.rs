//! Analytical quantities around the VaR framework: performance-gap bounds,
//! iteration and sample-complexity formulas, ambiguity-set radius geometry,
//! and Monte Carlo checks of the lower-bound guarantee.

#[allow(clippy::excessive_precision)]
mod quantile;

pub use quantile::{
    chi_squared_cdf, chi_squared_quantile, ln_gamma, regularized_gamma_p, regularized_gamma_q,
    std_normal_cdf, std_normal_quantile,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    dot, one_step_returns_into, policy_value, expected_return, DeterministicPolicy, TabularMdp,
    ValueFunction,
};
use crate::posterior::{ModelEnsemble, PosteriorMoments};
use crate::var::empirical_var_in_place;

/// Ratio `√χ²_{S−1,1−α} / Φ⁻¹(1−α)` between the asymptotic radius of a
/// Bayesian credible region and that of the VaR ambiguity set, both measured
/// in the `Σ⁻¹`-Minkowski norm.
pub fn radius_ratio(num_states: usize, alpha: f64) -> Result<f64> {
    if num_states < 2 {
        return Err(Error::Domain("radius ratio needs at least two states".into()));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 0.5)")));
    }
    let dof = u32::try_from(num_states - 1).map_err(|_| Error::Domain("too many states".into()))?;
    let chi = chi_squared_quantile(dof, 1.0 - alpha)?.sqrt();
    Ok(chi / std_normal_quantile(1.0 - alpha)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `(1/(1−γ))·max_{s,a}(VaR_upper − VaR_α)`.
    pub gap_bound: f64,
    /// Flattened `[s][a]` quantile differences.
    pub per_sa_gaps: Vec<f64>,
    pub delta: f64,
    pub alpha: f64,
    pub upper_level: f64,
}

/// Finite-sample bound on the loss of the VaR policy relative to the optimal
/// percentile return, evaluated on the ensemble at the value `v_hat`.
pub fn performance_gap_bound(
    mdp: &TabularMdp,
    ensemble: &ModelEnsemble,
    v_hat: &ValueFunction,
    delta: f64,
) -> Result<GapReport> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::Domain(format!("delta {delta} outside (0, 0.5)")));
    }
    mdp.check_value(v_hat)?;
    if ensemble.num_states() != mdp.num_states() || ensemble.num_actions() != mdp.num_actions() {
        return Err(Error::Shape("ensemble does not match the MDP".into()));
    }
    let n = mdp.num_states() as f64;
    let alpha = delta / n;
    let upper_level = 1.0 - (1.0 - delta) / n;
    let mut w = vec![0.0; mdp.num_states()];
    let mut returns = vec![0.0; ensemble.len()];
    let mut per_sa_gaps = Vec::with_capacity(mdp.num_states() * mdp.num_actions());
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            one_step_returns_into(mdp, v_hat, s, a, &mut w);
            for (r, m) in returns.iter_mut().zip(ensemble.models()) {
                *r = dot(m.row(s, a), &w);
            }
            let upper = empirical_var_in_place(&mut returns, upper_level)?;
            let lower = empirical_var_in_place(&mut returns, alpha)?;
            per_sa_gaps.push(upper - lower);
        }
    }
    let max_gap = per_sa_gaps.iter().copied().fold(0.0, f64::max);
    Ok(GapReport {
        gap_bound: max_gap / (1.0 - mdp.discount()),
        per_sa_gaps,
        delta,
        alpha,
        upper_level,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticGap {
    /// `(1/(1−γ))·2Φ⁻¹(1−δ/S)·σ_max/√N`.
    pub tight: f64,
    /// `(1/(1−γ))·√(8 ln(S/δ))·σ_max/√N`.
    pub loose: f64,
    /// `σ_max` with the posterior covariance scaled by `N`.
    pub sigma_max: f64,
}

/// Asymptotic loss bound. The posterior covariance stands in for
/// `I(p*)⁻¹/N`, so `σ²_max = N·max_{s,a} ŵᵀΣŵ`.
pub fn asymptotic_gap_bound(
    mdp: &TabularMdp,
    moments: &PosteriorMoments,
    v_hat: &ValueFunction,
    delta: f64,
    sample_size: f64,
) -> Result<AsymptoticGap> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::Domain(format!("delta {delta} outside (0, 0.5)")));
    }
    if !(sample_size > 0.0) {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    mdp.check_value(v_hat)?;
    let mut w = vec![0.0; mdp.num_states()];
    let mut max_var: f64 = 0.0;
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            one_step_returns_into(mdp, v_hat, s, a, &mut w);
            max_var = max_var.max(moments.quadratic_form(s, a, &w));
        }
    }
    let sigma_max = (max_var * sample_size).sqrt();
    let scaled = sigma_max / sample_size.sqrt() / (1.0 - mdp.discount());
    let n = mdp.num_states() as f64;
    let z = std_normal_quantile(1.0 - delta / n)?;
    Ok(AsymptoticGap {
        tight: 2.0 * z * scaled,
        loose: (8.0 * (n / delta).ln()).sqrt() * scaled,
        sigma_max,
    })
}

/// `⌈log_{1/γ}(r_max / (ε(1−γ)))⌉`, clamped to at least one.
pub fn iteration_bound(discount: f64, epsilon: f64, r_max: f64) -> Result<u64> {
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::Domain(format!("discount {discount} outside (0, 1)")));
    }
    if !(epsilon > 0.0) || !(r_max > 0.0) {
        return Err(Error::Domain("epsilon and r_max must be positive".into()));
    }
    let ratio = r_max / (epsilon * (1.0 - discount));
    if ratio <= 1.0 {
        return Ok(1);
    }
    let k = (ratio.ln() / (1.0 / discount).ln()).ceil();
    Ok((k as u64).max(1))
}

/// Posterior samples needed for empirical VaR error `ε` with confidence
/// `1−ζ`: `ln(2/ζ)/(2ε²η²)`, with `η` the return density at the VaR.
pub fn sample_complexity(density: f64, epsilon: f64, zeta: f64) -> Result<f64> {
    if !(density > 0.0) || !(epsilon > 0.0) || !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::Domain(
            "sample complexity needs density > 0, epsilon > 0, zeta in (0,1)".into(),
        ));
    }
    Ok((2.0 / zeta).ln() / (2.0 * epsilon * epsilon * density * density))
}

/// Fraction of `fresh` models under which `value` lower-bounds the policy's
/// true value: componentwise when `statewise`, else on `p0ᵀ value`.
pub fn coverage_check(
    mdp: &TabularMdp,
    policy: &DeterministicPolicy,
    value: &ValueFunction,
    fresh: &ModelEnsemble,
    statewise: bool,
) -> Result<f64> {
    mdp.check_value(value)?;
    const SLACK: f64 = 1e-9;
    let bound_return = dot(mdp.initial_dist(), value);
    let mut covered = 0usize;
    for model in fresh.models() {
        let ok = if statewise {
            let truth = policy_value(mdp, model, policy, 1e-10)?;
            value.iter().zip(truth.iter()).all(|(v, t)| *v <= t + SLACK)
        } else {
            bound_return <= expected_return(mdp, model, policy)? + SLACK
        };
        covered += usize::from(ok);
    }
    Ok(covered as f64 / fresh.len() as f64)
}

/// `√(N · qᵀ C⁻¹ q)` with `q` the first `S−1` coordinates of `p − p*` and
/// `C` the reduced `(S−1)×(S−1)` covariance.
pub fn reduced_mahalanobis(p: &[f64], p_star: &[f64], cov_reduced: &[f64], sample_size: f64) -> Result<f64> {
    if p.len() != p_star.len() || p.len() < 2 {
        return Err(Error::Shape("p and p* must have equal length >= 2".into()));
    }
    let k = p.len() - 1;
    if cov_reduced.len() != k * k {
        return Err(Error::Shape(format!("reduced covariance must be {k}x{k}")));
    }
    let chol = DMatrix::from_row_slice(k, k, cov_reduced)
        .cholesky()
        .ok_or_else(|| Error::Numerical("reduced covariance is not positive definite".into()))?;
    let q = DVector::from_iterator(k, p.iter().zip(p_star).take(k).map(|(x, y)| x - y));
    let solved = chol.solve(&q);
    Ok((sample_size * q.dot(&solved)).sqrt())
}

/// Membership in the asymptotic VaR ambiguity ellipsoid of radius
/// `Φ⁻¹(1−α)`.
pub fn var_ellipsoid_membership(
    p: &[f64],
    p_star: &[f64],
    cov_reduced: &[f64],
    alpha: f64,
    sample_size: f64,
) -> Result<bool> {
    let radius = std_normal_quantile(1.0 - alpha)?;
    Ok(reduced_mahalanobis(p, p_star, cov_reduced, sample_size)? <= radius)
}

/// Membership in the asymptotic credible-region ellipsoid of radius
/// `√χ²_{S−1,1−α}`.
pub fn bcr_ellipsoid_membership(
    p: &[f64],
    p_star: &[f64],
    cov_reduced: &[f64],
    alpha: f64,
    sample_size: f64,
) -> Result<bool> {
    let dof = u32::try_from(p.len().saturating_sub(1)).map_err(|_| Error::Domain("too many states".into()))?;
    let radius = chi_squared_quantile(dof, 1.0 - alpha)?.sqrt();
    Ok(reduced_mahalanobis(p, p_star, cov_reduced, sample_size)? <= radius)
}

/// Leading `(S−1)×(S−1)` block of a row-major `S×S` covariance.
pub fn reduce_covariance(cov: &[f64], num_states: usize) -> Vec<f64> {
    let k = num_states - 1;
    (0..k)
        .flat_map(|i| cov[i * num_states..i * num_states + k].iter().copied())
        .collect()
}
