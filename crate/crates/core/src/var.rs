//! VaR Bellman operators and Generalized VaR value iteration.
//!
//! The empirical operator takes, for each state and action, the
//! `⌊αM⌋ + 1`-th smallest of the M one-step returns `P̃(ω_m)[s][a]ᵀ w` and
//! maximizes over actions. The Gaussian operator replaces that order
//! statistic with `p̄ᵀw − Φ⁻¹(1−α)·√(wᵀΣw)`, and the sub-Gaussian variant
//! with the looser `p̄ᵀw − √(2 ln(1/α))·√(wᵀΣw)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::std_normal_quantile;
use crate::error::{Error, Result};
use crate::mdp::{
    argmax_actions, default_iteration_cap, dot, iterate_to_fixed_point, one_step_returns_into,
    DeterministicPolicy, Solution, TabularMdp, ValueFunction,
};
use crate::posterior::{ModelEnsemble, PosteriorMoments};

pub type VarSolution = Solution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarMode {
    Empirical,
    Gaussian,
    SubgaussianBound,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub mode: VarMode,
    /// Overrides the default cap of ten times the theoretical iteration bound.
    pub max_iterations: Option<usize>,
}

impl VarConfig {
    pub fn new(alpha: f64, epsilon: f64, mode: VarMode) -> Result<Self> {
        let cfg = Self {
            alpha,
            epsilon,
            mode,
            max_iterations: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::Domain(format!("alpha {} outside (0, 0.5)", self.alpha)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// Where the operator gets its view of the posterior.
#[derive(Clone, Copy, Debug)]
pub enum PosteriorSource<'a> {
    Ensemble(&'a ModelEnsemble),
    Moments(&'a PosteriorMoments),
}

/// Zero-based rank of the empirical VaR order statistic, `⌊αM⌋`.
pub fn var_rank(len: usize, alpha: f64) -> usize {
    // The 1e-9 guard keeps αM = 29 from flooring to 28 after rounding.
    let k = (alpha * len as f64 + 1e-9).floor() as usize;
    k.min(len - 1)
}

/// Empirical `VaR_α`: the `⌊αM⌋ + 1`-th smallest sample, i.e. the largest `t`
/// such that at least `⌈(1−α)M⌉` samples are `≥ t`.
pub fn empirical_var(values: &[f64], alpha: f64) -> Result<f64> {
    let mut scratch = values.to_vec();
    empirical_var_in_place(&mut scratch, alpha)
}

/// Same as [`empirical_var`] but reorders `values` instead of copying.
pub fn empirical_var_in_place(values: &mut [f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("VaR sample"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("VaR level {alpha} outside (0, 1)")));
    }
    if values.iter().any(|x| x.is_nan()) {
        return Err(Error::NaN("VaR sample"));
    }
    let k = var_rank(values.len(), alpha);
    let (_, kth, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    Ok(*kth)
}

fn check_ensemble(mdp: &TabularMdp, ensemble: &ModelEnsemble) -> Result<()> {
    if ensemble.num_states() != mdp.num_states() || ensemble.num_actions() != mdp.num_actions() {
        return Err(Error::Shape("ensemble does not match the MDP".into()));
    }
    Ok(())
}

fn check_moments(mdp: &TabularMdp, moments: &PosteriorMoments) -> Result<()> {
    if moments.num_states() != mdp.num_states() || moments.num_actions() != mdp.num_actions() {
        return Err(Error::Shape("posterior moments do not match the MDP".into()));
    }
    Ok(())
}

/// Empirical VaR of `p̃_{s,a}ᵀ w` over the ensemble.
fn ensemble_var(
    ensemble: &ModelEnsemble,
    s: usize,
    a: usize,
    w: &[f64],
    alpha: f64,
    scratch: &mut [f64],
) -> Result<f64> {
    for (slot, model) in scratch.iter_mut().zip(ensemble.models()) {
        *slot = dot(model.row(s, a), w);
    }
    empirical_var_in_place(scratch, alpha)
}

fn sweep<F>(mdp: &TabularMdp, per_state: F) -> Result<(ValueFunction, DeterministicPolicy)>
where
    F: Fn(usize) -> Result<(f64, usize)> + Sync + Send,
{
    let results = (0..mdp.num_states())
        .into_par_iter()
        .map(per_state)
        .collect::<Result<Vec<_>>>()?;
    let (values, actions) = results.into_iter().unzip();
    Ok((ValueFunction(values), DeterministicPolicy(actions)))
}

/// Empirical VaR Bellman optimality update. Ties go to the lowest action.
pub fn var_bellman_update_empirical(
    mdp: &TabularMdp,
    ensemble: &ModelEnsemble,
    v: &ValueFunction,
    alpha: f64,
) -> Result<(ValueFunction, DeterministicPolicy)> {
    check_ensemble(mdp, ensemble)?;
    mdp.check_value(v)?;
    sweep(mdp, |s| {
        let mut w = vec![0.0; mdp.num_states()];
        let mut scratch = vec![0.0; ensemble.len()];
        argmax_actions(mdp.num_actions(), |a| {
            one_step_returns_into(mdp, v, s, a, &mut w);
            ensemble_var(ensemble, s, a, &w, alpha, &mut scratch)
        })
    })
}

/// `wᵀΣw`, with small negative rounding clamped to zero.
fn clamped_quadratic_form(moments: &PosteriorMoments, s: usize, a: usize, w: &[f64]) -> Result<f64> {
    let q = moments.quadratic_form(s, a, w);
    let scale = 1.0 + w.iter().fold(0.0f64, |m, x| m.max(x.abs())).powi(2);
    if q < -1e-10 * scale {
        return Err(Error::Numerical(format!(
            "covariance quadratic form {q} is negative at ({s}, {a})"
        )));
    }
    Ok(q.max(0.0))
}

/// `p̄ᵀw − z·√(wᵀΣw)` for a given quantile multiplier `z`.
fn moment_lower_value(moments: &PosteriorMoments, s: usize, a: usize, w: &[f64], z: f64) -> Result<f64> {
    let spread = clamped_quadratic_form(moments, s, a, w)?.sqrt();
    Ok(dot(moments.mean_row(s, a), w) - z * spread)
}

fn gaussian_multiplier(alpha: f64) -> Result<f64> {
    std_normal_quantile(1.0 - alpha)
}

fn subgaussian_multiplier(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1]")));
    }
    Ok((2.0 * (1.0 / alpha).ln()).sqrt())
}

fn moment_update(
    mdp: &TabularMdp,
    moments: &PosteriorMoments,
    v: &ValueFunction,
    z: f64,
) -> Result<(ValueFunction, DeterministicPolicy)> {
    check_moments(mdp, moments)?;
    mdp.check_value(v)?;
    sweep(mdp, |s| {
        let mut w = vec![0.0; mdp.num_states()];
        argmax_actions(mdp.num_actions(), |a| {
            one_step_returns_into(mdp, v, s, a, &mut w);
            moment_lower_value(moments, s, a, &w, z)
        })
    })
}

/// Exact VaR Bellman update when each `p̃_{s,a}` is normal with the given
/// moments.
pub fn var_bellman_update_gaussian(
    mdp: &TabularMdp,
    moments: &PosteriorMoments,
    v: &ValueFunction,
    alpha: f64,
) -> Result<(ValueFunction, DeterministicPolicy)> {
    moment_update(mdp, moments, v, gaussian_multiplier(alpha)?)
}

/// Bellman update built from [`subgaussian_lower_bound`].
pub fn var_bellman_update_subgaussian(
    mdp: &TabularMdp,
    moments: &PosteriorMoments,
    v: &ValueFunction,
    alpha: f64,
) -> Result<(ValueFunction, DeterministicPolicy)> {
    moment_update(mdp, moments, v, subgaussian_multiplier(alpha)?)
}

/// `p̄ᵀw − √(2 ln(1/α))·√(wᵀΣw)`, a lower bound on the VaR of `p̃ᵀw` when
/// `p̃` is sub-Gaussian with covariance factor `Σ`.
pub fn subgaussian_lower_bound(
    moments: &PosteriorMoments,
    w: &[f64],
    s: usize,
    a: usize,
    alpha: f64,
) -> Result<f64> {
    if w.len() != moments.num_states() {
        return Err(Error::Shape("return vector length must equal num_states".into()));
    }
    if s >= moments.num_states() || a >= moments.num_actions() {
        return Err(Error::IndexOutOfRange {
            what: "state-action",
            index: s * moments.num_actions() + a,
            bound: moments.num_states() * moments.num_actions(),
        });
    }
    moment_lower_value(moments, s, a, w, subgaussian_multiplier(alpha)?)
}

/// Per-state confidence `δ/S` that makes the VaR fixed point a `1−δ`
/// lower bound for every state simultaneously.
pub fn alpha_for_optimality(delta: f64, num_states: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::Domain(format!("delta {delta} outside (0, 0.5)")));
    }
    if num_states == 0 {
        return Err(Error::Domain("state count must be positive".into()));
    }
    Ok(delta / num_states as f64)
}

/// Generalized VaR value iteration from `u₀ = 0`.
pub fn var_value_iteration(
    mdp: &TabularMdp,
    source: PosteriorSource<'_>,
    cfg: &VarConfig,
) -> Result<VarSolution> {
    var_value_iteration_from(mdp, source, cfg, ValueFunction::zeros(mdp.num_states()))
}

/// Generalized VaR value iteration from an arbitrary starting value.
pub fn var_value_iteration_from(
    mdp: &TabularMdp,
    source: PosteriorSource<'_>,
    cfg: &VarConfig,
    init: ValueFunction,
) -> Result<VarSolution> {
    cfg.validate()?;
    mdp.check_value(&init)?;
    let cap = cfg
        .max_iterations
        .unwrap_or_else(|| default_iteration_cap(mdp, cfg.epsilon));
    let alpha = cfg.alpha;
    let run = |update: &dyn Fn(&ValueFunction) -> Result<(ValueFunction, DeterministicPolicy)>| {
        iterate_to_fixed_point(mdp.discount(), cfg.epsilon, cap, init.clone(), update)
    };
    match (cfg.mode, source) {
        (VarMode::Empirical, PosteriorSource::Ensemble(ensemble)) => {
            check_ensemble(mdp, ensemble)?;
            run(&|v| var_bellman_update_empirical(mdp, ensemble, v, alpha))
        }
        (VarMode::Empirical, PosteriorSource::Moments(_)) => Err(Error::Config(
            "empirical VaR needs a model ensemble, not moments".into(),
        )),
        (mode, source) => {
            let owned;
            let moments = match source {
                PosteriorSource::Moments(m) => m,
                PosteriorSource::Ensemble(e) => {
                    owned = PosteriorMoments::from_ensemble(e);
                    &owned
                }
            };
            check_moments(mdp, moments)?;
            let z = match mode {
                VarMode::Gaussian => gaussian_multiplier(alpha)?,
                _ => subgaussian_multiplier(alpha)?,
            };
            run(&|v| moment_update(mdp, moments, v, z))
        }
    }
}

/// Fixed point of the policy-restricted empirical VaR operator
/// `(T^π v)_s = VaR_α[p̃_{s,π(s)}ᵀ w_{s,π(s)}]`.
pub fn var_policy_evaluation(
    mdp: &TabularMdp,
    ensemble: &ModelEnsemble,
    policy: &DeterministicPolicy,
    alpha: f64,
    epsilon: f64,
) -> Result<VarSolution> {
    check_ensemble(mdp, ensemble)?;
    mdp.check_policy(policy)?;
    let cap = default_iteration_cap(mdp, epsilon);
    iterate_to_fixed_point(
        mdp.discount(),
        epsilon,
        cap,
        ValueFunction::zeros(mdp.num_states()),
        |v| {
            let values = (0..mdp.num_states())
                .into_par_iter()
                .map(|s| {
                    let mut w = vec![0.0; mdp.num_states()];
                    let mut scratch = vec![0.0; ensemble.len()];
                    one_step_returns_into(mdp, v, s, policy[s], &mut w);
                    ensemble_var(ensemble, s, policy[s], &w, alpha, &mut scratch)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((ValueFunction(values), policy.clone()))
        },
    )
}
