//! Tabular MDPs, transition kernels, and the classical Bellman machinery
//! shared by every solver in the crate.
//!
//! Rewards are stored per `(s, a, s')` triple and transition kernels per
//! `(s, a)` row, both flattened in row-major order. Terminal states are
//! plain absorbing self-loops with zero reward.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::iteration_bound;
use crate::error::{Error, Result};

/// Tolerance used when checking that probability vectors sum to one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Above this many states `policy_value` switches from a dense linear solve
/// to iterative evaluation.
pub const DIRECT_SOLVE_MAX_STATES: usize = 2000;

/// A tabular discounted MDP without its transition kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    initial_dist: Vec<f64>,
    rewards: Vec<f64>,
}

impl TabularMdp {
    /// `rewards` is flattened as `R[s][a][s']`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        discount: f64,
        initial_dist: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidModel(
                "state and action counts must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidModel(format!(
                "discount {discount} outside [0, 1)"
            )));
        }
        if initial_dist.len() != num_states {
            return Err(Error::Shape(format!(
                "initial distribution has length {}, expected {num_states}",
                initial_dist.len()
            )));
        }
        check_simplex(&initial_dist, "initial distribution")?;
        if rewards.len() != num_states * num_actions * num_states {
            return Err(Error::Shape(format!(
                "reward tensor has {} entries, expected {}",
                rewards.len(),
                num_states * num_actions * num_states
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidModel("rewards must be finite".into()));
        }
        Ok(Self {
            num_states,
            num_actions,
            discount,
            initial_dist,
            rewards,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// `R[s][a][·]`.
    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.rewards[start..start + self.num_states]
    }

    /// Largest absolute reward; zero for a reward-free MDP.
    pub fn max_abs_reward(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Same MDP with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            discount,
            self.initial_dist.clone(),
            self.rewards.clone(),
        )
    }

    pub fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.num_states {
            return Err(Error::IndexOutOfRange {
                what: "state",
                index: s,
                bound: self.num_states,
            });
        }
        Ok(())
    }

    pub fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.num_actions {
            return Err(Error::IndexOutOfRange {
                what: "action",
                index: a,
                bound: self.num_actions,
            });
        }
        Ok(())
    }

    pub(crate) fn check_kernel(&self, model: &TransitionModel) -> Result<()> {
        if model.num_states != self.num_states || model.num_actions != self.num_actions {
            return Err(Error::Shape(format!(
                "kernel is {}x{}, MDP is {}x{}",
                model.num_states, model.num_actions, self.num_states, self.num_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn check_policy(&self, policy: &DeterministicPolicy) -> Result<()> {
        if policy.len() != self.num_states {
            return Err(Error::Shape(format!(
                "policy covers {} states, MDP has {}",
                policy.len(),
                self.num_states
            )));
        }
        for &a in policy.iter() {
            self.check_action(a)?;
        }
        Ok(())
    }

    pub(crate) fn check_value(&self, v: &ValueFunction) -> Result<()> {
        if v.len() != self.num_states {
            return Err(Error::Shape(format!(
                "value function has length {}, MDP has {} states",
                v.len(),
                self.num_states
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDocument {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    initial_dist: Vec<f64>,
    rewards: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let rewards = flatten_tensor(doc.rewards, doc.num_states, doc.num_actions, "rewards")?;
        TabularMdp::new(
            doc.num_states,
            doc.num_actions,
            doc.discount,
            doc.initial_dist,
            rewards,
        )
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(mdp: TabularMdp) -> Self {
        MdpDocument {
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
            discount: mdp.discount,
            rewards: nest_tensor(&mdp.rewards, mdp.num_states, mdp.num_actions),
            initial_dist: mdp.initial_dist,
        }
    }
}

/// One complete transition kernel `P[s][a][s']`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelDocument", into = "KernelDocument")]
pub struct TransitionModel {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TransitionModel {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidModel(
                "state and action counts must be positive".into(),
            ));
        }
        if probs.len() != num_states * num_actions * num_states {
            return Err(Error::Shape(format!(
                "kernel has {} entries, expected {}",
                probs.len(),
                num_states * num_actions * num_states
            )));
        }
        for row in probs.chunks_exact(num_states) {
            check_simplex(row, "transition row")?;
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    /// Skips validation; callers guarantee every row is on the simplex.
    pub(crate) fn from_rows_unchecked(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), num_states * num_actions * num_states);
        Self {
            num_states,
            num_actions,
            probs,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.probs[start..start + self.num_states]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelDocument {
    num_states: usize,
    num_actions: usize,
    probs: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<KernelDocument> for TransitionModel {
    type Error = Error;

    fn try_from(doc: KernelDocument) -> Result<Self> {
        let probs = flatten_tensor(doc.probs, doc.num_states, doc.num_actions, "probs")?;
        TransitionModel::new(doc.num_states, doc.num_actions, probs)
    }
}

impl From<TransitionModel> for KernelDocument {
    fn from(model: TransitionModel) -> Self {
        KernelDocument {
            num_states: model.num_states,
            num_actions: model.num_actions,
            probs: nest_tensor(&model.probs, model.num_states, model.num_actions),
        }
    }
}

pub(crate) fn flatten_tensor(
    nested: Vec<Vec<Vec<f64>>>,
    num_states: usize,
    num_actions: usize,
    field: &str,
) -> Result<Vec<f64>> {
    if nested.len() != num_states {
        return Err(Error::Shape(format!(
            "{field}: outer dimension {} != num_states {num_states}",
            nested.len()
        )));
    }
    let mut flat = Vec::with_capacity(num_states * num_actions * num_states);
    for (s, per_action) in nested.into_iter().enumerate() {
        if per_action.len() != num_actions {
            return Err(Error::Shape(format!(
                "{field}[{s}]: {} actions, expected {num_actions}",
                per_action.len()
            )));
        }
        for (a, row) in per_action.into_iter().enumerate() {
            if row.len() != num_states {
                return Err(Error::Shape(format!(
                    "{field}[{s}][{a}]: length {}, expected {num_states}",
                    row.len()
                )));
            }
            flat.extend(row);
        }
    }
    Ok(flat)
}

pub(crate) fn nest_tensor(flat: &[f64], num_states: usize, num_actions: usize) -> Vec<Vec<Vec<f64>>> {
    flat.chunks_exact(num_states * num_actions)
        .map(|block| block.chunks_exact(num_states).map(<[f64]>::to_vec).collect())
        .collect()
}

pub(crate) fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidModel(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::InvalidModel(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// State values in discounted-return units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn zeros(num_states: usize) -> Self {
        Self(vec![0.0; num_states])
    }

    pub fn constant(num_states: usize, c: f64) -> Self {
        Self(vec![c; num_states])
    }

    /// `‖self − other‖∞`.
    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ValueFunction {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ValueFunction {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// One action per state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeterministicPolicy(pub Vec<usize>);

impl DeterministicPolicy {
    pub fn constant(num_states: usize, action: usize) -> Self {
        Self(vec![action; num_states])
    }
}

impl Deref for DeterministicPolicy {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for DeterministicPolicy {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Output of every value-iteration style solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub policy: DeterministicPolicy,
    pub value: ValueFunction,
    pub iterations: usize,
    pub converged: bool,
}

/// `w = R[s][a][·] + γ v`.
pub fn one_step_returns(mdp: &TabularMdp, v: &ValueFunction, s: usize, a: usize) -> Vec<f64> {
    let mut out = vec![0.0; mdp.num_states];
    one_step_returns_into(mdp, v, s, a, &mut out);
    out
}

pub(crate) fn one_step_returns_into(
    mdp: &TabularMdp,
    v: &ValueFunction,
    s: usize,
    a: usize,
    out: &mut [f64],
) {
    let gamma = mdp.discount;
    for ((o, r), x) in out.iter_mut().zip(mdp.reward_row(s, a)).zip(v.iter()) {
        *o = r + gamma * x;
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Bellman evaluation operator `T^π_P`.
pub fn bellman_eval_update(
    mdp: &TabularMdp,
    model: &TransitionModel,
    policy: &DeterministicPolicy,
    v: &ValueFunction,
) -> Result<ValueFunction> {
    mdp.check_kernel(model)?;
    mdp.check_policy(policy)?;
    mdp.check_value(v)?;
    let mut w = vec![0.0; mdp.num_states];
    let out = (0..mdp.num_states)
        .map(|s| {
            let a = policy[s];
            one_step_returns_into(mdp, v, s, a, &mut w);
            dot(model.row(s, a), &w)
        })
        .collect();
    Ok(ValueFunction(out))
}

/// Classical Bellman optimality update on a single kernel. Ties go to the
/// lowest action index.
pub fn bellman_optimality_update(
    mdp: &TabularMdp,
    model: &TransitionModel,
    v: &ValueFunction,
) -> Result<(ValueFunction, DeterministicPolicy)> {
    mdp.check_kernel(model)?;
    mdp.check_value(v)?;
    let mut w = vec![0.0; mdp.num_states];
    let mut values = Vec::with_capacity(mdp.num_states);
    let mut actions = Vec::with_capacity(mdp.num_states);
    for s in 0..mdp.num_states {
        let (best, arg) = argmax_actions(mdp.num_actions, |a| {
            one_step_returns_into(mdp, v, s, a, &mut w);
            Ok(dot(model.row(s, a), &w))
        })?;
        values.push(best);
        actions.push(arg);
    }
    Ok((ValueFunction(values), DeterministicPolicy(actions)))
}

/// Maximum over actions, first maximizer wins.
pub(crate) fn argmax_actions<F>(num_actions: usize, mut q: F) -> Result<(f64, usize)>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for a in 0..num_actions {
        let value = q(a)?;
        if value > best {
            best = value;
            arg = a;
        }
    }
    Ok((best, arg))
}

/// Exact value of a deterministic policy under `model`.
///
/// Uses an LU solve of `(I − γ P_π) v = r_π` up to
/// [`DIRECT_SOLVE_MAX_STATES`] states and iterative evaluation beyond.
pub fn policy_value(
    mdp: &TabularMdp,
    model: &TransitionModel,
    policy: &DeterministicPolicy,
    tol: f64,
) -> Result<ValueFunction> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    mdp.check_kernel(model)?;
    mdp.check_policy(policy)?;
    let n = mdp.num_states;
    let gamma = mdp.discount;

    if n <= DIRECT_SOLVE_MAX_STATES {
        let mut system = DMatrix::<f64>::identity(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for s in 0..n {
            let a = policy[s];
            let row = model.row(s, a);
            rhs[s] = dot(row, mdp.reward_row(s, a));
            for (t, p) in row.iter().enumerate() {
                system[(s, t)] -= gamma * p;
            }
        }
        let solved = system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular policy evaluation system".into()))?;
        let v = ValueFunction(solved.iter().copied().collect());
        // A single sweep tightens the residual if LU left rounding noise.
        let residual = bellman_eval_update(mdp, model, policy, &v)?.sup_distance(&v);
        if residual <= tol {
            return Ok(v);
        }
        return iterate_policy_value(mdp, model, policy, tol, v);
    }
    iterate_policy_value(mdp, model, policy, tol, ValueFunction::zeros(n))
}

fn iterate_policy_value(
    mdp: &TabularMdp,
    model: &TransitionModel,
    policy: &DeterministicPolicy,
    tol: f64,
    mut v: ValueFunction,
) -> Result<ValueFunction> {
    let gamma = mdp.discount;
    loop {
        let next = bellman_eval_update(mdp, model, policy, &v)?;
        let diff = next.sup_distance(&v);
        v = next;
        // ‖T v − v‖ ≤ γ·diff after this step.
        if gamma * diff <= tol {
            return Ok(v);
        }
    }
}

/// `ρ(π, P) = p0ᵀ v^π_P`.
pub fn expected_return(
    mdp: &TabularMdp,
    model: &TransitionModel,
    policy: &DeterministicPolicy,
) -> Result<f64> {
    let v = policy_value(mdp, model, policy, 1e-10)?;
    Ok(dot(&mdp.initial_dist, &v))
}

/// Default iteration cap: ten times the theoretical bound for `u₀ = 0`.
pub fn default_iteration_cap(mdp: &TabularMdp, epsilon: f64) -> usize {
    let r_max = mdp.max_abs_reward();
    if r_max == 0.0 || mdp.discount == 0.0 || !(epsilon > 0.0) {
        return 10;
    }
    let bound = iteration_bound(mdp.discount, epsilon, r_max).unwrap_or(1);
    bound.saturating_mul(10) as usize
}

/// Iterates `update` from `init` until `‖u_k − u_{k−1}‖∞ ≤ ε(1−γ)/γ` or the
/// cap is hit. With `γ = 0` a single update is exact.
pub fn iterate_to_fixed_point<F>(
    discount: f64,
    epsilon: f64,
    max_iterations: usize,
    init: ValueFunction,
    mut update: F,
) -> Result<Solution>
where
    F: FnMut(&ValueFunction) -> Result<(ValueFunction, DeterministicPolicy)>,
{
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} must be positive")));
    }
    if discount == 0.0 {
        let (value, policy) = update(&init)?;
        return Ok(Solution {
            policy,
            value,
            iterations: 1,
            converged: true,
        });
    }
    let threshold = epsilon * (1.0 - discount) / discount;
    let mut u = init;
    let mut policy = DeterministicPolicy(Vec::new());
    for k in 1..=max_iterations.max(1) {
        let (next, pol) = update(&u)?;
        let diff = next.sup_distance(&u);
        u = next;
        policy = pol;
        if diff <= threshold {
            return Ok(Solution {
                policy,
                value: u,
                iterations: k,
                converged: true,
            });
        }
    }
    Ok(Solution {
        policy,
        value: u,
        iterations: max_iterations.max(1),
        converged: false,
    })
}

/// Classical value iteration on one kernel, using the same stopping rule as
/// the robust solvers.
pub fn value_iteration(mdp: &TabularMdp, model: &TransitionModel, epsilon: f64) -> Result<Solution> {
    mdp.check_kernel(model)?;
    iterate_to_fixed_point(
        mdp.discount,
        epsilon,
        default_iteration_cap(mdp, epsilon),
        ValueFunction::zeros(mdp.num_states),
        |v| bellman_optimality_update(mdp, model, v),
    )
}
